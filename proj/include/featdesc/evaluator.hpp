#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "featdesc/describers.hpp"
#include "featdesc/featurizer.hpp"
#include "featdesc/gateway.hpp"
#include "featdesc/model.hpp"
#include "featdesc/prompts.hpp"
#include "featdesc/tokenizer.hpp"

namespace featdesc {

struct EvalConfig {
  int n_sentences = 5;
  std::vector<std::string> open_ended_prompts = {"I think", "Honestly,",
                                                 "The most important thing"};
  int max_gen_tokens = 25;
  std::vector<double> kl_targets = {0.25, 0.5};
  double calibration_tolerance = 0.01;
  uint64_t seed = 0;
};

struct SentenceSets {
  std::vector<std::string> activating;
  std::vector<std::string> neutral;
};

/// One sentence-generator call returning both example sets, parsed from the
/// delimited reply format (bounded re-asks on malformed output).
SentenceSets gen_eval_sentences(Gateway& gateway, const PromptLibrary& prompts,
                                const std::string& description, int n);

struct InputEvalResult {
  double mean_activating = 0.0;
  double mean_neutral = 0.0;
  std::vector<double> activating_max;  // per-sentence max activation
  std::vector<double> neutral_max;
  bool pass = false;  // strictly mean_activating > mean_neutral
};

InputEvalResult input_eval(const Model& model, const Featurizer& featurizer, HookSite site,
                           int feature_index, const Tokenizer& tokenizer,
                           const std::vector<std::string>& activating,
                           const std::vector<std::string>& neutral);

/// Find a clamp value whose mean next-token KL against the baseline hits
/// `target_kl` within `tolerance`. `sign` is +1 or -1. Clamp value 0 is the
/// null intervention, so the search always starts from KL exactly 0; the
/// bracket grows geometrically from |m| = 1 (doubling, cap 2^16) and is then
/// bisected (at most 60 iterations), with a dense grid scan as fallback.
/// Throws CalibrationFailed (reporting the best KL reached) when no clamp
/// value attains the target.
double calibrate_clamp(const Model& model, const std::shared_ptr<const Featurizer>& featurizer,
                       HookSite site, int feature_index,
                       const std::vector<std::vector<int>>& prompts, double target_kl, int sign,
                       double tolerance);

struct SteeredTextSet {
  FeatureRef steered_feature;
  std::vector<std::string> texts;      // prompts x clamp values
  std::vector<double> clamp_values;    // one per KL target and sign
};

/// Clamped generations for every (open-ended prompt, calibrated clamp value)
/// pair: |kl_targets| * 2 signs clamp values, temperature 1.0, seeded.
SteeredTextSet steered_generations(const Model& model,
                                   const std::shared_ptr<const Featurizer>& featurizer,
                                   HookSite site, const FeatureRef& feature,
                                   const EvalConfig& config, const Tokenizer& tokenizer);

struct OutputEvalResult {
  FeatureRef target_feature;
  std::array<FeatureRef, 2> distractors;
  std::vector<int> presentation_order;  // presentation slot -> set (0 = target)
  int judge_choice = 0;                 // 1-based, as answered
  bool pass = false;
};

/// Shuffle the three sets into a seeded presentation order, ask the judge
/// which matches the description, and record the verdict.
OutputEvalResult output_eval(Gateway& gateway, const PromptLibrary& prompts,
                             const std::string& description, const SteeredTextSet& target,
                             const SteeredTextSet& distractor1, const SteeredTextSet& distractor2,
                             uint64_t seed);

}  // namespace featdesc
