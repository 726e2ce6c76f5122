#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "featdesc/activation_index.hpp"
#include "featdesc/describers.hpp"
#include "featdesc/error.hpp"
#include "featdesc/evaluator.hpp"
#include "featdesc/fixture.hpp"
#include "featdesc/pipeline.hpp"
#include "featdesc/revival.hpp"

namespace py = pybind11;
using namespace featdesc;

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Owns everything a scripting session needs: model, tokenizer, featurizers,
/// prompts and a gateway, loaded from a pipeline config.
struct Session {
  explicit Session(const std::string& config_path, const std::string& backend = "",
                   uint64_t seed_override = UINT64_MAX) {
    PipelineConfig config = load_pipeline_config(config_path);
    if (!backend.empty()) config.gateway.backend = backend;
    if (seed_override != UINT64_MAX) config.seed = seed_override;
    pipeline = std::make_unique<Pipeline>(std::move(config));
  }

  std::unique_ptr<Pipeline> pipeline;

  FeatureRef feature(const std::string& spec) const {
    std::vector<FeatureRef> parsed = pipeline->parse_features({spec});
    if (parsed.size() != 1) {
      raise(ErrorCode::Precondition, "expected exactly one feature, got " +
                                         std::to_string(parsed.size()));
    }
    return parsed[0];
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "feature description pipeline bindings";

  py::register_exception<Error>(m, "FeatdescError");

  py::enum_<HookKind>(m, "HookKind")
      .value("ResidualPost", HookKind::ResidualPost)
      .value("MlpHidden", HookKind::MlpHidden);

  py::class_<HookSite>(m, "HookSite")
      .def(py::init([](HookKind kind, int layer) { return HookSite{kind, layer}; }),
           py::arg("kind"), py::arg("layer"))
      .def_readonly("kind", &HookSite::kind)
      .def_readonly("layer", &HookSite::layer)
      .def("__repr__", [](const HookSite& s) { return "<HookSite " + s.to_string() + ">"; });

  py::class_<FeatureRef>(m, "FeatureRef")
      .def_readonly("model_id", &FeatureRef::model_id)
      .def_readonly("site", &FeatureRef::site)
      .def_readonly("featurizer_id", &FeatureRef::featurizer_id)
      .def_readonly("index", &FeatureRef::index)
      .def("__repr__", [](const FeatureRef& f) { return "<FeatureRef " + f.to_string() + ">"; });

  py::class_<TokenScore>(m, "TokenScore")
      .def_readonly("token_id", &TokenScore::token_id)
      .def_readonly("token_text", &TokenScore::token_text)
      .def_readonly("score", &TokenScore::score);

  py::class_<Description>(m, "Description")
      .def_readonly("feature", &Description::feature)
      .def_readonly("text", &Description::text)
      .def_readonly("llm_model", &Description::llm_model)
      .def_readonly("prompt_hash", &Description::prompt_hash)
      .def_property_readonly("method",
                             [](const Description& d) { return method_name(d.method); });

  py::class_<InputEvalResult>(m, "InputEvalResult")
      .def_readonly("mean_activating", &InputEvalResult::mean_activating)
      .def_readonly("mean_neutral", &InputEvalResult::mean_neutral)
      .def_readonly("activating_max", &InputEvalResult::activating_max)
      .def_readonly("neutral_max", &InputEvalResult::neutral_max)
      .def_readonly("pass_", &InputEvalResult::pass)
      .def("__bool__", [](const InputEvalResult& r) { return r.pass; });

  py::class_<SteeredTextSet>(m, "SteeredTextSet")
      .def_readonly("texts", &SteeredTextSet::texts)
      .def_readonly("clamp_values", &SteeredTextSet::clamp_values)
      .def_readonly("steered_feature", &SteeredTextSet::steered_feature);

  py::class_<OutputEvalResult>(m, "OutputEvalResult")
      .def_readonly("judge_choice", &OutputEvalResult::judge_choice)
      .def_readonly("presentation_order", &OutputEvalResult::presentation_order)
      .def_readonly("pass_", &OutputEvalResult::pass)
      .def("__bool__", [](const OutputEvalResult& r) { return r.pass; });

  py::class_<RevivalResult>(m, "RevivalResult")
      .def_readonly("activated", &RevivalResult::activated)
      .def_readonly("witness_kind", &RevivalResult::witness_kind)
      .def_readonly("witness_text", &RevivalResult::witness_text)
      .def_readonly("witness_activation", &RevivalResult::witness_activation)
      .def_readonly("candidates_tried", &RevivalResult::candidates_tried);

  m.def(
      "make_toy_fixture",
      [](const std::string& dir, uint64_t seed) {
        fixture::ToyFixture fx = fixture::make_toy_fixture(dir, seed);
        return py::dict(py::arg("dir") = fx.dir, py::arg("config") = fx.config_path,
                        py::arg("weights") = fx.weights_path,
                        py::arg("tokenizer") = fx.tokenizer_path,
                        py::arg("manifest") = fx.manifest_path, py::arg("corpus") = fx.corpus_path,
                        py::arg("probe_checksum") = fx.probe_checksum);
      },
      py::arg("dir"), py::arg("seed") = fixture::kDefaultSeed,
      "Generate the pinned toy model, SAEs, corpus and config under `dir`.");

  m.def(
      "kl_divergence",
      [](const std::vector<double>& p, const std::vector<double>& q) {
        return kl_divergence(from_std(p), from_std(q));
      },
      py::arg("p"), py::arg("q"));

  m.def("estimate_flops",
        [](double n_params, double corpus_tokens, double features, double d_model, double vocab,
           const std::string& method) {
          CostModel cost{n_params, corpus_tokens, features, d_model, vocab};
          return estimate_flops(cost, method_from_name(method));
        },
        py::arg("n_params"), py::arg("corpus_tokens"), py::arg("features"), py::arg("d_model"),
        py::arg("vocab"), py::arg("method"));

  py::class_<Session>(m, "Session")
      .def(py::init<const std::string&, const std::string&, uint64_t>(), py::arg("config_path"),
           py::arg("backend") = "", py::arg("seed") = UINT64_MAX,
           "Load a pipeline config (optionally overriding the gateway backend and seed).")
      .def("feature", &Session::feature, py::arg("spec"),
           "Resolve a single feature spec like 'sae_main:3'.")
      .def(
          "encode_text",
          [](Session& s, const std::string& text) {
            return s.pipeline->tokenizer().encode(text);
          },
          py::arg("text"))
      .def(
          "feature_activations",
          [](Session& s, const std::string& spec, const std::string& text) {
            const FeatureRef f = s.feature(spec);
            auto [site, featurizer] = s.pipeline->resolve(f);
            ForwardResult fr =
                s.pipeline->model().forward_capture(s.pipeline->tokenizer().encode(text), site);
            return to_std(featurizer->encode_rows(fr.hidden).col(f.index));
          },
          py::arg("spec"), py::arg("text"),
          "Per-position activations of one feature on a text.")
      .def(
          "next_token_distribution",
          [](Session& s, const std::string& text) {
            return to_std(
                s.pipeline->model().next_token_distribution(s.pipeline->tokenizer().encode(text)));
          },
          py::arg("text"))
      .def(
          "generate",
          [](Session& s, const std::string& prompt, int max_new_tokens, uint64_t seed,
             bool greedy) {
            SamplingConfig sampling{greedy ? DecodeMode::Greedy : DecodeMode::Temperature, 1.0,
                                    seed, max_new_tokens};
            const std::vector<int> out =
                s.pipeline->model().generate(s.pipeline->tokenizer().encode(prompt), sampling,
                                             nullptr, s.pipeline->tokenizer().eos_id());
            return s.pipeline->tokenizer().decode(out);
          },
          py::arg("prompt"), py::arg("max_new_tokens") = 25, py::arg("seed") = 0,
          py::arg("greedy") = false)
      .def(
          "vocab_projection",
          [](Session& s, const std::string& spec, int t) {
            const FeatureRef f = s.feature(spec);
            auto [site, featurizer] = s.pipeline->resolve(f);
            TokenScoreLists lists = vocab_projection_tokens(
                s.pipeline->model(), *featurizer, f.index, t, s.pipeline->tokenizer());
            return py::make_tuple(lists.top, lists.bottom);
          },
          py::arg("spec"), py::arg("t") = 50,
          "Top and bottom vocabulary tokens of the feature's projection.")
      .def(
          "calibrate_clamp",
          [](Session& s, const std::string& spec, double target_kl, int sign) {
            const FeatureRef f = s.feature(spec);
            auto [site, featurizer] = s.pipeline->resolve(f);
            std::vector<std::vector<int>> prompts;
            for (const std::string& p : s.pipeline->config().eval.open_ended_prompts) {
              prompts.push_back(s.pipeline->tokenizer().encode(p));
            }
            return calibrate_clamp(s.pipeline->model(), featurizer, site, f.index, prompts,
                                   target_kl, sign,
                                   s.pipeline->config().eval.calibration_tolerance);
          },
          py::arg("spec"), py::arg("target_kl"), py::arg("sign") = 1)
      .def(
          "run_index",
          [](Session& s, const std::vector<std::string>& features, bool force) {
            return s.pipeline->cmd_index(features, force);
          },
          py::arg("features"), py::arg("force") = false)
      .def(
          "run_describe",
          [](Session& s, const std::vector<std::string>& features,
             const std::vector<std::string>& methods) {
            std::vector<Method> parsed;
            for (const std::string& m : methods) parsed.push_back(method_from_name(m));
            return s.pipeline->cmd_describe(features, parsed);
          },
          py::arg("features"), py::arg("methods") = std::vector<std::string>{})
      .def(
          "run_eval",
          [](Session& s, const std::vector<std::string>& features,
             const std::vector<std::string>& methods, const std::string& metric) {
            std::vector<Method> parsed;
            for (const std::string& m : methods) parsed.push_back(method_from_name(m));
            return s.pipeline->cmd_eval(features, parsed, metric);
          },
          py::arg("features"), py::arg("methods"), py::arg("metric"))
      .def(
          "run_revive",
          [](Session& s, const std::vector<std::string>& features) {
            return s.pipeline->cmd_revive(features);
          },
          py::arg("features"))
      .def_property_readonly(
          "paths",
          [](Session& s) {
            return py::dict(py::arg("index") = s.pipeline->index_path(),
                            py::arg("descriptions") = s.pipeline->descriptions_path(),
                            py::arg("evals") = s.pipeline->evals_path(),
                            py::arg("revival") = s.pipeline->revival_path());
          })
      .def_property_readonly("transport_calls", [](Session& s) {
        return s.pipeline->gateway().transport_calls();
      });

#ifdef FEATDESC_VERSION
  m.attr("__version__") = FEATDESC_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}
