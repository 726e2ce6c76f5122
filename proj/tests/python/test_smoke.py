"""Smoke tests for the python bindings: fixture generation, the main
operations, and a tiny end-to-end run with the mock gateway."""

import json
import os

import pytest

import featdesc


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("fx")
    info = featdesc.make_toy_fixture(str(path))
    assert os.path.exists(info["config"])
    assert len(info["probe_checksum"]) == 16
    return info


@pytest.fixture(scope="module")
def session(fixture_dir, tmp_path_factory):
    return featdesc.Session(fixture_dir["config"], backend="mock", seed=11)


def test_encode_and_activations(session):
    ids = session.encode_text("a calm q deal.")
    assert ids[0] == 0  # BOS
    acts = session.feature_activations("sae_detect:0", "a calm q deal.")
    assert len(acts) == len(ids)
    assert max(acts) > 0.0  # the q detector fires on the q character
    silent = session.feature_activations("sae_detect:0", "a calm deal.")
    assert max(silent) == 0.0


def test_next_token_distribution(session):
    p = session.next_token_distribution("I think")
    assert len(p) == 64
    assert abs(sum(p) - 1.0) < 1e-6
    assert min(p) >= 0.0


def test_generation_is_seeded(session):
    a = session.generate("I think", max_new_tokens=10, seed=3)
    b = session.generate("I think", max_new_tokens=10, seed=3)
    assert a == b


def test_vocab_projection_ranks_the_detector_character(session):
    top, bottom = session.vocab_projection("sae_detect:1", t=5)
    assert len(top) == 5 and len(bottom) == 5
    assert top[0].token_text == "z"
    assert top[0].score > bottom[0].score


def test_kl_divergence():
    import math

    assert featdesc.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert featdesc.kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_calibration_hits_the_target(session):
    m = session.calibrate_clamp("sae_main:2", target_kl=0.25, sign=1)
    assert m > 0.0


def test_estimate_flops_large_model_scale():
    estimate = featdesc.estimate_flops(
        n_params=2.03e9,
        corpus_tokens=25000 * 128,
        features=1,
        d_model=2304,
        vocab=256128,
        method="MaxAct",
    )
    assert abs(estimate - 3.9e16) / 3.9e16 < 0.05


def test_end_to_end_mock_run(fixture_dir, tmp_path):
    session = featdesc.Session(fixture_dir["config"], backend="mock", seed=5)
    features = ["sae_detect:0,1,6"]
    assert session.run_index(features, force=True) == 0
    assert session.run_describe(features, ["VocabProj", "TokenChange"]) == 0
    assert session.run_eval(features, ["VocabProj"], "input") == 0
    assert session.run_revive(features) == 0
    assert session.transport_calls == 0  # mock runs stay offline

    with open(session.paths["revival"]) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    by_index = {r["feature"]["index"]: r["activated"] for r in records}
    assert by_index[1] is True  # the z detector revives
    assert by_index[6] is False  # the zero encoder never does


def test_errors_surface_as_featdesc_error(session):
    with pytest.raises(featdesc.FeatdescError):
        session.feature("sae_main:999")
