#include "featdesc/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <map>
#include <numeric>
#include <sstream>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"
#include "featdesc/rng.hpp"

namespace featdesc {

namespace {

std::vector<std::string> parse_numbered_lines(const std::string& block) {
  std::vector<std::string> out;
  std::istringstream in(block);
  std::string line;
  while (std::getline(in, line)) {
    size_t p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos) continue;
    size_t digits = p;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits == p || digits >= line.size()) continue;
    if (line[digits] != '.' && line[digits] != ')') continue;
    size_t text = line.find_first_not_of(" \t", digits + 1);
    if (text == std::string::npos) continue;
    size_t end = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(text, end - text + 1));
  }
  return out;
}

std::string strip_ws(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

SentenceSets gen_eval_sentences(Gateway& gateway, const PromptLibrary& prompts,
                                const std::string& description, int n) {
  if (strip_ws(description).empty()) {
    raise(ErrorCode::Precondition, "description text is empty");
  }
  if (n < 1) raise(ErrorCode::Precondition, "need at least one sentence per set");

  ChatRequest request;
  request.role_class = RoleClass::SentenceGenerator;
  request.decoding.temperature = 0.0;
  request.messages = {{"user", render_prompt(prompts.get("sentence_generator"),
                                             {{"DESCRIPTION", description},
                                              {"N", std::to_string(n)}})}};

  constexpr int kMaxAsks = 3;
  std::string last_problem;
  for (int attempt = 0; attempt < kMaxAsks; ++attempt) {
    const std::string reply = gateway.complete(request);
    const size_t act_at = reply.find("ACTIVATING:");
    const size_t neu_at = reply.find("NEUTRAL:");
    if (act_at != std::string::npos && neu_at != std::string::npos && neu_at > act_at) {
      SentenceSets sets;
      sets.activating = parse_numbered_lines(reply.substr(act_at, neu_at - act_at));
      sets.neutral = parse_numbered_lines(reply.substr(neu_at));
      if (static_cast<int>(sets.activating.size()) == n &&
          static_cast<int>(sets.neutral.size()) == n) {
        return sets;
      }
      last_problem = "wrong sentence counts";
    } else {
      last_problem = "missing ACTIVATING/NEUTRAL markers";
    }
    // re-ask with a corrective note (distinct request, so caching cannot
    // replay the malformed reply)
    request.messages.push_back(
        {"user", "The previous reply was malformed (" + last_problem +
                     "). Repeat, following the requested format exactly."});
  }
  raise(ErrorCode::ParseError,
        "sentence generator output unusable after " + std::to_string(kMaxAsks) +
            " attempts: " + last_problem);
}

InputEvalResult input_eval(const Model& model, const Featurizer& featurizer, HookSite site,
                           int feature_index, const Tokenizer& tokenizer,
                           const std::vector<std::string>& activating,
                           const std::vector<std::string>& neutral) {
  if (activating.empty() || neutral.empty()) {
    raise(ErrorCode::Precondition, "both sentence sets must be non-empty");
  }
  auto max_activation = [&](const std::string& sentence) {
    const std::vector<int> tokens = tokenizer.encode(sentence);
    ForwardResult fr = model.forward_capture(tokens, site);
    Eigen::MatrixXd acts = featurizer.encode_rows(fr.hidden);
    return acts.col(feature_index).maxCoeff();
  };

  InputEvalResult result;
  for (const std::string& s : activating) result.activating_max.push_back(max_activation(s));
  for (const std::string& s : neutral) result.neutral_max.push_back(max_activation(s));
  result.mean_activating =
      std::accumulate(result.activating_max.begin(), result.activating_max.end(), 0.0) /
      static_cast<double>(result.activating_max.size());
  result.mean_neutral =
      std::accumulate(result.neutral_max.begin(), result.neutral_max.end(), 0.0) /
      static_cast<double>(result.neutral_max.size());
  result.pass = result.mean_activating > result.mean_neutral;
  return result;
}

namespace {

constexpr double kClampCap = 65536.0;  // 2^16

double mean_next_token_kl(const Model& model, const std::shared_ptr<const Featurizer>& featurizer,
                          HookSite site, int feature_index,
                          const std::vector<std::vector<int>>& prompts, double m) {
  double total = 0.0;
  for (const std::vector<int>& prompt : prompts) {
    const Eigen::VectorXd baseline = model.next_token_distribution(prompt);
    if (m == 0.0) {
      // the null clamp: identical distributions, KL exactly zero
      total += kl_divergence(baseline, baseline);
      continue;
    }
    Intervention iv{site, featurizer, feature_index, m};
    const Eigen::VectorXd steered = model.next_token_distribution(prompt, &iv);
    total += kl_divergence(steered, baseline);
  }
  return total / static_cast<double>(prompts.size());
}

}  // namespace

double calibrate_clamp(const Model& model, const std::shared_ptr<const Featurizer>& featurizer,
                       HookSite site, int feature_index,
                       const std::vector<std::vector<int>>& prompts, double target_kl, int sign,
                       double tolerance) {
  if (!(target_kl > 0.0)) raise(ErrorCode::Precondition, "target KL must be positive");
  if (sign != 1 && sign != -1) raise(ErrorCode::Precondition, "sign must be +1 or -1");
  if (prompts.empty()) raise(ErrorCode::Precondition, "no calibration prompts");

  const double s = static_cast<double>(sign);
  auto kl_at = [&](double magnitude) {
    return mean_next_token_kl(model, featurizer, site, feature_index, prompts, s * magnitude);
  };

  double best_kl = 0.0;  // KL(0) is exactly zero
  if (std::abs(best_kl - target_kl) <= tolerance) return 0.0;

  // geometric bracket growth from |m| = 1
  double lo = 0.0;
  double lo_kl = 0.0;
  double hi = 1.0;
  double hi_kl = kl_at(hi);
  double max_seen = hi_kl;
  while (hi_kl < target_kl && hi < kClampCap) {
    lo = hi;
    lo_kl = hi_kl;
    hi *= 2.0;
    hi_kl = kl_at(hi);
    max_seen = std::max(max_seen, hi_kl);
  }

  if (hi_kl >= target_kl) {
    if (std::abs(hi_kl - target_kl) <= tolerance) return s * hi;
    if (std::abs(lo_kl - target_kl) <= tolerance) return s * lo;
    for (int iter = 0; iter < 60; ++iter) {
      const double mid = 0.5 * (lo + hi);
      const double mid_kl = kl_at(mid);
      max_seen = std::max(max_seen, mid_kl);
      if (std::abs(mid_kl - target_kl) <= tolerance) return s * mid;
      if (mid_kl < target_kl) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }

  // bracket failed or bisection stalled on a non-monotone stretch: dense
  // logarithmic sweep across the full magnitude range
  for (int i = 0; i <= 400; ++i) {
    const double mag =
        std::exp(std::log(1.0 / 16.0) +
                 (std::log(kClampCap) - std::log(1.0 / 16.0)) * static_cast<double>(i) / 400.0);
    const double kl = kl_at(mag);
    max_seen = std::max(max_seen, kl);
    if (std::abs(kl - target_kl) <= tolerance) return s * mag;
  }
  raise(ErrorCode::CalibrationFailed,
        "no clamp magnitude <= " + std::to_string(kClampCap) + " reaches KL " +
            std::to_string(target_kl) + " (best achieved " + std::to_string(max_seen) + ")");
}

SteeredTextSet steered_generations(const Model& model,
                                   const std::shared_ptr<const Featurizer>& featurizer,
                                   HookSite site, const FeatureRef& feature,
                                   const EvalConfig& config, const Tokenizer& tokenizer) {
  SteeredTextSet set;
  set.steered_feature = feature;

  std::vector<std::vector<int>> prompt_tokens;
  for (const std::string& p : config.open_ended_prompts) {
    prompt_tokens.push_back(tokenizer.encode(p));
  }

  for (int sign : {1, -1}) {
    for (double target : config.kl_targets) {
      set.clamp_values.push_back(calibrate_clamp(model, featurizer, site, feature.index,
                                                 prompt_tokens, target, sign,
                                                 config.calibration_tolerance));
    }
  }

  const uint64_t feature_salt = fnv1a64(feature.to_string());
  for (size_t p = 0; p < prompt_tokens.size(); ++p) {
    for (size_t c = 0; c < set.clamp_values.size(); ++c) {
      SamplingConfig sampling;
      sampling.mode = DecodeMode::Temperature;
      sampling.temperature = 1.0;
      sampling.max_new_tokens = config.max_gen_tokens;
      sampling.seed = derive_seed(config.seed, "steered-generation", feature_salt, p, c);
      Intervention iv{site, featurizer, feature.index, set.clamp_values[c]};
      const std::vector<int> generated =
          model.generate(prompt_tokens[p], sampling, &iv, tokenizer.eos_id());
      set.texts.push_back(tokenizer.decode(generated));
    }
  }
  return set;
}

OutputEvalResult output_eval(Gateway& gateway, const PromptLibrary& prompts,
                             const std::string& description, const SteeredTextSet& target,
                             const SteeredTextSet& distractor1, const SteeredTextSet& distractor2,
                             uint64_t seed) {
  const std::array<const SteeredTextSet*, 3> sets{&target, &distractor1, &distractor2};
  for (const SteeredTextSet* s : sets) {
    if (s->texts.size() != target.texts.size()) {
      raise(ErrorCode::Precondition, "steered text sets have different cardinalities");
    }
  }
  if (distractor1.steered_feature == target.steered_feature ||
      distractor2.steered_feature == target.steered_feature ||
      distractor1.steered_feature == distractor2.steered_feature) {
    raise(ErrorCode::Precondition, "target and distractor features must be pairwise distinct");
  }

  OutputEvalResult result;
  result.target_feature = target.steered_feature;
  result.distractors = {distractor1.steered_feature, distractor2.steered_feature};
  result.presentation_order = {0, 1, 2};
  Rng rng(derive_seed(seed, "presentation-order"));
  rng.shuffle(result.presentation_order);

  auto render_set = [&](const SteeredTextSet& s) {
    std::ostringstream os;
    for (const std::string& text : s.texts) os << "- \"" << text << "\"\n";
    return os.str();
  };
  std::map<std::string, std::string> values{{"DESCRIPTION", description}};
  for (int slot = 0; slot < 3; ++slot) {
    values["SET" + std::to_string(slot + 1)] =
        render_set(*sets[static_cast<size_t>(result.presentation_order[static_cast<size_t>(slot)])]);
  }

  ChatRequest request;
  request.role_class = RoleClass::Judge;
  request.decoding.temperature = 0.0;
  request.messages = {{"user", render_prompt(prompts.get("judge"), values)}};

  constexpr int kMaxAsks = 3;
  int choice = 0;
  for (int attempt = 0; attempt < kMaxAsks && choice == 0; ++attempt) {
    const std::string reply = gateway.complete(request);
    for (char ch : reply) {
      if (ch >= '1' && ch <= '3') {
        choice = ch - '0';
        break;
      }
    }
    if (choice == 0) {
      request.messages.push_back(
          {"user", "The previous answer was unreadable. Reply with a single digit: 1, 2, or 3."});
    }
  }
  if (choice == 0) {
    raise(ErrorCode::ParseError, "judge never produced a readable answer");
  }
  result.judge_choice = choice;
  result.pass = result.presentation_order[static_cast<size_t>(choice - 1)] == 0;
  return result;
}

}  // namespace featdesc
