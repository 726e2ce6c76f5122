#pragma once

#include <memory>
#include <string>
#include <vector>

#include "featdesc/describers.hpp"
#include "featdesc/featurizer.hpp"
#include "featdesc/model.hpp"
#include "featdesc/tokenizer.hpp"

namespace featdesc {

/// Candidate prompts for waking a feature that never fired on the index
/// corpus: every pooled token alone, random token combinations on a fixed
/// size schedule (250 pairs, 250 triples, 200 fives, 200 twelves, 100
/// twenty-fives, 50 thirty-twos), and LLM-written sentences. Every combo
/// prompt starts with BOS.
struct RevivalPlan {
  FeatureRef feature;
  std::vector<int> token_pool;  // union of top/bottom tokens from both methods
  std::vector<std::string> llm_sentences;       // capped at 150
  std::vector<std::vector<int>> combo_prompts;  // singles first, then the schedule
  std::vector<int> combo_sizes;                 // token count per combo prompt
  uint64_t seed = 0;
  bool degraded = false;  // gateway failed; sentence list is empty
};

struct RevivalResult {
  FeatureRef feature;
  bool activated = false;
  std::string witness_kind;  // "single" | "combo-<n>" | "sentence"
  std::string witness_text;
  std::vector<int> witness_tokens;
  double witness_activation = 0.0;
  int64_t candidates_tried = 0;
};

/// Evidence both output-centric methods contribute to the plan. The clamp
/// value for the token-change side comes from the caller (calibrated when
/// possible); set `has_tokenchange` false to build from the projection only.
struct RevivalEvidence {
  TokenScoreLists vocabproj;
  TokenScoreLists tokenchange;
  bool has_tokenchange = true;
};

RevivalPlan build_revival_plan(const DescriberContext& ctx, const FeatureRef& feature,
                               const RevivalEvidence& evidence, uint64_t seed);

struct RevivalParams {
  int batch_size = 16;  // candidates evaluated per parallel batch
};

/// Evaluate candidates in plan order (singles, pairs, ..., thirty-twos, then
/// sentences) and stop at the first positive activation. "First" is defined
/// by plan order even when a batch is evaluated in parallel.
RevivalResult revive(const Model& model, const std::shared_ptr<const Featurizer>& featurizer,
                     HookSite site, const FeatureRef& feature, const RevivalPlan& plan,
                     const Tokenizer& tokenizer, const RevivalParams& params = {});

}  // namespace featdesc
