#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "featdesc/activation_index.hpp"
#include "featdesc/featurizer.hpp"
#include "featdesc/gateway.hpp"
#include "featdesc/model.hpp"
#include "featdesc/prompts.hpp"
#include "featdesc/tokenizer.hpp"

namespace featdesc {

enum class Method { MaxAct, VocabProj, TokenChange, EnsembleRaw, EnsembleConcat };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Canonical method order used everywhere ties or member ordering matter.
inline bool method_before(Method a, Method b) { return static_cast<int>(a) < static_cast<int>(b); }

struct TokenScore {
  int token_id = 0;
  std::string token_text;
  double score = 0.0;
};

struct TokenScoreLists {
  std::vector<TokenScore> top;     // descending score, ties by token id
  std::vector<TokenScore> bottom;  // ascending score, ties by token id
};

struct Description {
  FeatureRef feature;
  Method method = Method::MaxAct;
  std::vector<Method> members;  // ensembles only
  std::string text;
  nlohmann::json evidence;  // raw explainer inputs; null for EnsembleConcat
  std::string llm_model;
  std::string prompt_hash;
};

/// Variant switches for the vocabulary projection (the default is the
/// decoder-direction/unembedding combination; the alternatives exist for the
/// variant-comparison experiment).
struct VocabProjOptions {
  bool encoder_direction = false;  // use the encoder column instead of the decoder row
  bool embedding_target = false;   // project onto token embeddings instead of the unembedding
};

/// w = unembed^T . LayerNorm(v_f); top and bottom t entries.
TokenScoreLists vocab_projection_tokens(const Model& model, const Featurizer& featurizer,
                                        int feature_index, int t, const Tokenizer& tokenizer,
                                        const VocabProjOptions& options = {});

/// Mean per-vocab-token logit change over every position of every prompt
/// between a clamped and a baseline forward pass.
TokenScoreLists token_change_scores(const Model& model,
                                    const std::shared_ptr<const Featurizer>& featurizer,
                                    HookSite site, int feature_index,
                                    const std::vector<std::vector<int>>& prompts, double m, int t,
                                    const Tokenizer& tokenizer);

struct DescriberContext {
  Gateway* gateway = nullptr;
  const PromptLibrary* prompts = nullptr;
  const Tokenizer* tokenizer = nullptr;
};

Description describe_maxact(const DescriberContext& ctx, const FeatureActivationSummary& summary);

Description describe_vocabproj(const DescriberContext& ctx, const FeatureRef& feature,
                               const TokenScoreLists& lists);

Description describe_tokenchange(const DescriberContext& ctx, const FeatureRef& feature,
                                 const TokenScoreLists& lists);

/// One raw-evidence section per member method, rendered into a single
/// explainer call. Members are canonicalized by method order first.
struct EvidenceSection {
  Method method = Method::MaxAct;
  std::string rendered;
  nlohmann::json raw;
};

Description ensemble_raw(const DescriberContext& ctx, const FeatureRef& feature,
                         std::vector<EvidenceSection> sections);

/// Concatenate member descriptions ("; ") in canonical method order. No LLM.
Description ensemble_concat(const std::vector<Description>& members);

/// Rendering helpers shared by the single-method describers, the raw
/// ensemble and the revival planner.
std::string render_token_score_lines(const std::vector<TokenScore>& scores);
std::string render_maxact_evidence(const FeatureActivationSummary& summary,
                                   const Tokenizer& tokenizer);
nlohmann::json token_lists_to_json(const TokenScoreLists& lists);
nlohmann::json maxact_evidence_json(const FeatureActivationSummary& summary);

nlohmann::json description_to_json(const Description& d);
Description description_from_json(const nlohmann::json& j);

}  // namespace featdesc
