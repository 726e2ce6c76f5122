#include "featdesc/revival.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <thread>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"
#include "featdesc/rng.hpp"

namespace featdesc {

namespace {

struct ScheduleEntry {
  int size;
  int count;
};

// singles are one prompt per pooled token; the multi-token schedule is fixed
constexpr ScheduleEntry kSchedule[] = {{2, 250}, {3, 250}, {5, 200},
                                       {12, 200}, {25, 100}, {32, 50}};

void append_tokens(std::vector<int>& pool, std::set<int>& seen,
                   const std::vector<TokenScore>& scores) {
  for (const TokenScore& s : scores) {
    if (seen.insert(s.token_id).second) pool.push_back(s.token_id);
  }
}

}  // namespace

RevivalPlan build_revival_plan(const DescriberContext& ctx, const FeatureRef& feature,
                               const RevivalEvidence& evidence, uint64_t seed) {
  RevivalPlan plan;
  plan.feature = feature;
  plan.seed = seed;

  std::set<int> seen;
  append_tokens(plan.token_pool, seen, evidence.vocabproj.top);
  append_tokens(plan.token_pool, seen, evidence.vocabproj.bottom);
  if (evidence.has_tokenchange) {
    append_tokens(plan.token_pool, seen, evidence.tokenchange.top);
    append_tokens(plan.token_pool, seen, evidence.tokenchange.bottom);
  }

  // LLM sentences from the two output-centric descriptions
  if (ctx.gateway != nullptr) {
    try {
      std::string description;
      if (!evidence.vocabproj.top.empty()) {
        description = describe_vocabproj(ctx, feature, evidence.vocabproj).text;
      }
      if (evidence.has_tokenchange && !evidence.tokenchange.top.empty()) {
        if (!description.empty()) description += "; ";
        description += describe_tokenchange(ctx, feature, evidence.tokenchange).text;
      }
      if (description.empty()) description = "feature " + feature.to_string();
      ChatRequest request;
      request.role_class = RoleClass::SentenceGenerator;
      request.decoding.temperature = 0.0;
      request.messages = {{"user", render_prompt(ctx.prompts->get("sentence_list"),
                                                 {{"DESCRIPTION", description},
                                                  {"N", "150"}})}};
      const std::string reply = ctx.gateway->complete(request);
      std::istringstream in(reply);
      std::string line;
      while (std::getline(in, line) && plan.llm_sentences.size() < 150) {
        size_t p = line.find_first_not_of(" \t\r");
        if (p == std::string::npos) continue;
        size_t digits = p;
        while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
          ++digits;
        }
        if (digits == p || digits >= line.size() ||
            (line[digits] != '.' && line[digits] != ')')) {
          continue;
        }
        const size_t text = line.find_first_not_of(" \t", digits + 1);
        if (text == std::string::npos) continue;
        const size_t end = line.find_last_not_of(" \t\r");
        plan.llm_sentences.push_back(line.substr(text, end - text + 1));
      }
    } catch (const Error&) {
      plan.degraded = true;
      plan.llm_sentences.clear();
    }
  } else {
    plan.degraded = true;
  }

  if (plan.token_pool.empty()) return plan;  // sentences only

  const int bos = 0;  // combo prompts always open with BOS
  for (int token : plan.token_pool) {
    plan.combo_prompts.push_back({bos, token});
    plan.combo_sizes.push_back(1);
  }
  Rng rng(derive_seed(seed, "revival-combos", fnv1a64(feature.to_string())));
  for (const ScheduleEntry& entry : kSchedule) {
    for (int i = 0; i < entry.count; ++i) {
      std::vector<int> prompt{bos};
      for (int t = 0; t < entry.size; ++t) {
        prompt.push_back(plan.token_pool[rng.below(plan.token_pool.size())]);
      }
      plan.combo_prompts.push_back(std::move(prompt));
      plan.combo_sizes.push_back(entry.size);
    }
  }
  return plan;
}

namespace {

double max_activation_of(const Model& model, const Featurizer& featurizer, HookSite site,
                         int feature_index, const std::vector<int>& tokens) {
  ForwardResult fr = model.forward_capture(tokens, site);
  return featurizer.encode_rows(fr.hidden).col(feature_index).maxCoeff();
}

}  // namespace

RevivalResult revive(const Model& model, const std::shared_ptr<const Featurizer>& featurizer,
                     HookSite site, const FeatureRef& feature, const RevivalPlan& plan,
                     const Tokenizer& tokenizer, const RevivalParams& params) {
  if (!(plan.feature == feature)) {
    raise(ErrorCode::Precondition, "plan belongs to a different feature");
  }

  struct Candidate {
    std::vector<int> tokens;  // empty = untokenizable sentence
    std::string kind;
    std::string text;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(plan.combo_prompts.size() + plan.llm_sentences.size());
  for (size_t i = 0; i < plan.combo_prompts.size(); ++i) {
    Candidate c;
    c.tokens = plan.combo_prompts[i];
    c.kind = plan.combo_sizes[i] == 1 ? "single" : "combo-" + std::to_string(plan.combo_sizes[i]);
    c.text = tokenizer.decode(c.tokens);
    candidates.push_back(std::move(c));
  }
  for (const std::string& sentence : plan.llm_sentences) {
    Candidate c;
    c.kind = "sentence";
    c.text = sentence;
    try {
      c.tokens = tokenizer.encode(sentence);
    } catch (const Error&) {
      // a sentence outside the vocabulary counts as tried but cannot fire
    }
    candidates.push_back(std::move(c));
  }

  RevivalResult result;
  result.feature = feature;

  const int batch = std::max(1, params.batch_size);
  for (size_t begin = 0; begin < candidates.size(); begin += static_cast<size_t>(batch)) {
    const size_t end = std::min(candidates.size(), begin + static_cast<size_t>(batch));
    std::vector<double> activation(end - begin, 0.0);

    auto evaluate = [&](size_t offset) {
      const Candidate& c = candidates[begin + offset];
      if (!c.tokens.empty()) {
        activation[offset] =
            max_activation_of(model, *featurizer, site, feature.index, c.tokens);
      }
    };
    if (batch == 1) {
      evaluate(0);
    } else {
      std::vector<std::thread> threads;
      for (size_t offset = 0; offset < end - begin; ++offset) {
        threads.emplace_back(evaluate, offset);
      }
      for (auto& t : threads) t.join();
    }

    // first witness is decided by plan order, not completion order
    for (size_t offset = 0; offset < end - begin; ++offset) {
      ++result.candidates_tried;
      if (activation[offset] > 0.0) {
        const Candidate& c = candidates[begin + offset];
        result.activated = true;
        result.witness_kind = c.kind;
        result.witness_text = c.text;
        result.witness_tokens = c.tokens;
        result.witness_activation = activation[offset];
        return result;
      }
    }
  }
  return result;
}

}  // namespace featdesc
