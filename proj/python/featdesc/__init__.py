"""Feature description pipeline: input- and output-centric descriptions for
transformer features, with input- and output-based evaluations."""

from featdesc._core import (  # noqa: F401
    Description,
    FeatdescError,
    FeatureRef,
    HookKind,
    HookSite,
    InputEvalResult,
    OutputEvalResult,
    RevivalResult,
    Session,
    SteeredTextSet,
    TokenScore,
    estimate_flops,
    kl_divergence,
    make_toy_fixture,
)

__all__ = [
    "Description",
    "FeatdescError",
    "FeatureRef",
    "HookKind",
    "HookSite",
    "InputEvalResult",
    "OutputEvalResult",
    "RevivalResult",
    "Session",
    "SteeredTextSet",
    "TokenScore",
    "estimate_flops",
    "kl_divergence",
    "make_toy_fixture",
]
