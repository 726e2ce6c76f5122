#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "featdesc/activation_index.hpp"
#include "featdesc/corpus.hpp"
#include "featdesc/describers.hpp"
#include "featdesc/evaluator.hpp"
#include "featdesc/gateway.hpp"
#include "featdesc/model.hpp"
#include "featdesc/prompts.hpp"
#include "featdesc/revival.hpp"

namespace featdesc {

struct MethodParams {
  int t_vocabproj = 50;
  int t_tokenchange = 20;
  int k_prompts = 32;
  int prompt_len = 32;
};

/// Inputs of the per-method compute estimate.
struct CostModel {
  double n_nonembed_params = 0.0;
  double corpus_tokens = 0.0;
  double feature_count = 0.0;
  double d_model = 0.0;
  double vocab_size = 0.0;
};

/// Forward passes follow the 6N-per-token heuristic. MaxAct scans the corpus
/// once (shared across features); the projection is one matrix multiply per
/// feature; the clamped/baseline comparison runs two passes over the random
/// prompt set per feature.
double estimate_flops(const CostModel& cost, Method method, const MethodParams& params = {});

struct PipelineConfig {
  std::string weights_path;
  std::string tokenizer_path;
  ModelConfig model;
  std::string featurizer_manifest;
  std::string corpus_path;
  int corpus_window = 128;
  int index_k_top = 5;
  int index_samples_per_band = 2;
  double dead_threshold = 0.0;
  MethodParams methods;
  EvalConfig eval;
  GatewayConfig gateway;
  std::string output_dir = "runs/out";
  std::string prompts_dir;
  uint64_t seed = 0;
  int workers = 1;
  std::string created_at;  // pin for byte-reproducible stores; empty = now
  uint64_t config_hash = 0;
};

/// Parse the TOML config; relative paths resolve against the config file's
/// directory.
PipelineConfig load_pipeline_config(const std::string& path);

/// Feature selector grammar, one spec per string:
///   <sae_id>:<indices>          e.g. sae_main:0-4,9
///   neuron:<res|mlp><layer>:<indices>   e.g. neuron:mlp0:0,5
///   @<file>                     file with one spec per line, # comments
std::vector<std::string> expand_feature_spec_files(const std::vector<std::string>& specs);

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  // exit codes: 0 success, 1 partial failures, 2 usage/guard errors
  int cmd_index(const std::vector<std::string>& feature_specs, bool force);
  int cmd_describe(const std::vector<std::string>& feature_specs,
                   const std::vector<Method>& methods);
  int cmd_eval(const std::vector<std::string>& feature_specs, const std::vector<Method>& methods,
               const std::string& metric);
  int cmd_revive(const std::vector<std::string>& feature_specs);

  std::vector<FeatureRef> parse_features(const std::vector<std::string>& specs) const;

  std::string index_path() const;
  std::string descriptions_path() const;
  std::string evals_path() const;
  std::string revival_path() const;

  const PipelineConfig& config() const { return config_; }
  const Model& model() const { return *model_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const FeaturizerSet& featurizers() const { return featurizers_; }
  Gateway& gateway() { return *gateway_; }

  /// Site and featurizer backing one feature reference.
  std::pair<HookSite, std::shared_ptr<const Featurizer>> resolve(const FeatureRef& feature) const;

 private:
  PipelineConfig config_;
  std::unique_ptr<Model> model_;
  Tokenizer tokenizer_;
  FeaturizerSet featurizers_;
  PromptLibrary prompts_;
  std::unique_ptr<Gateway> gateway_;
  std::string created_at_;

  std::vector<CorpusSequence> load_corpus() const;
  void append_manifest(const std::string& command, const nlohmann::json& extra);
  DescriberContext describer_context();

  struct DescribeOutcome {
    std::vector<Description> descriptions;
    std::vector<std::string> failures;
  };
  DescribeOutcome describe_feature(const FeatureRef& feature, const std::vector<Method>& methods,
                                   const ActivationIndex* index,
                                   const std::vector<CorpusSequence>& corpus,
                                   const std::map<std::pair<FeatureRef, Method>, Description>&
                                       existing);
};

}  // namespace featdesc
