#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "featdesc/error.hpp"
#include "featdesc/evaluator.hpp"
#include "featdesc/fixture.hpp"
#include "featdesc/rng.hpp"
#include "support/reference_model.hpp"
#include "support/test_env.hpp"

using namespace featdesc;

namespace {

Gateway& mock_gateway() {
  static Gateway gateway{GatewayConfig{}};
  return gateway;
}

const PromptLibrary& prompts() {
  static PromptLibrary lib = PromptLibrary::builtin();
  return lib;
}

const std::shared_ptr<const Featurizer>& detect_sae() {
  static auto sae = std::make_shared<const Featurizer>(Featurizer::load_sae(
      testenv::shared_fixture().dir + "/sae_detect.safetensors", SaeActivation::ReLU));
  return sae;
}

const std::shared_ptr<const Featurizer>& main_sae() {
  static auto sae = std::make_shared<const Featurizer>(Featurizer::load_sae(
      testenv::shared_fixture().dir + "/sae_main.safetensors", SaeActivation::ReLU));
  return sae;
}

constexpr HookKind kRes = HookKind::ResidualPost;

std::vector<std::vector<int>> open_prompts() {
  const Tokenizer& tok = testenv::shared_tokenizer();
  return {tok.encode("I think"), tok.encode("Honestly,"),
          tok.encode("The most important thing")};
}

FeatureRef main_feature(int index) {
  return FeatureRef{"toy-2l", HookSite{kRes, 1}, "sae_main", index};
}

SteeredTextSet fabricated_set(const FeatureRef& feature, const std::string& filler) {
  SteeredTextSet set;
  set.steered_feature = feature;
  for (int i = 0; i < 12; ++i) set.texts.push_back(filler + " " + std::to_string(i));
  set.clamp_values = {1.0, 2.0, -1.0, -2.0};
  return set;
}

}  // namespace

TEST_CASE("sentence generation returns both sets and is deterministic") {
  SentenceSets sets = gen_eval_sentences(mock_gateway(), prompts(), "references to cats", 5);
  REQUIRE(sets.activating.size() == 5);
  REQUIRE(sets.neutral.size() == 5);
  for (const std::string& s : sets.activating) {
    CHECK(s.find("cats") != std::string::npos);
  }
  for (const std::string& s : sets.neutral) {
    CHECK(s.find("cats") == std::string::npos);
  }
  SentenceSets again = gen_eval_sentences(mock_gateway(), prompts(), "references to cats", 5);
  CHECK(again.activating == sets.activating);
  CHECK(again.neutral == sets.neutral);
}

TEST_CASE("sentence generation rejects bad inputs") {
  CHECK_THROWS_AS(gen_eval_sentences(mock_gateway(), prompts(), "x", 0), Error);
  CHECK_THROWS_AS(gen_eval_sentences(mock_gateway(), prompts(), "   ", 3), Error);
}

TEST_CASE("persistently malformed generator output becomes a parse error") {
  GatewayConfig config = GatewayConfig{};
  config.backend = "http";
  config.explainer = {"http://x.test/v1", "m", ""};
  config.sentence_generator = config.explainer;
  config.judge = config.explainer;
  int calls = 0;
  Gateway garbage(config, system_clock(), [&](const RoleEndpoint&, const std::string&) {
    ++calls;
    return std::string(R"({"choices":[{"message":{"content":"no sets here"}}]})");
  });
  try {
    gen_eval_sentences(garbage, prompts(), "anything", 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
  }
  CHECK(calls == 3);  // bounded re-asks, each a distinct request

  // an unreadable judge answer follows the same bounded re-ask contract
  SteeredTextSet a = fabricated_set(main_feature(1), "x");
  SteeredTextSet b = fabricated_set(main_feature(2), "y");
  SteeredTextSet c = fabricated_set(main_feature(3), "z");
  try {
    output_eval(garbage, prompts(), "desc", a, b, c, 4);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
  }
}

TEST_CASE("identical sentence sets never pass the strict input metric") {
  const Model& model = testenv::shared_model();
  std::vector<std::string> sentences{"a calm deal.", "mild oak plan."};
  InputEvalResult r = input_eval(model, *detect_sae(), HookSite{kRes, 0}, 0,
                                 testenv::shared_tokenizer(), sentences, sentences);
  CHECK(r.mean_activating == r.mean_neutral);
  CHECK_FALSE(r.pass);
}

TEST_CASE("a detector feature passes when activating sentences carry its token") {
  const Model& model = testenv::shared_model();
  const Tokenizer& tok = testenv::shared_tokenizer();
  std::vector<std::string> activating{"a q deal.", "mild q oak.", "a calm q plan."};
  std::vector<std::string> neutral{"a calm deal.", "mild oak plan.", "one fine bench."};
  InputEvalResult r =
      input_eval(model, *detect_sae(), HookSite{kRes, 0}, 0, tok, activating, neutral);
  CHECK(r.pass);
  CHECK(r.mean_neutral == 0.0);

  // per-sentence maxima agree with an exhaustive per-position scan
  for (size_t i = 0; i < activating.size(); ++i) {
    const std::vector<int> tokens = tok.encode(activating[i]);
    ForwardResult fr = model.forward_capture(tokens, HookSite{kRes, 0});
    double best = -1e300;
    for (Eigen::Index t = 0; t < fr.hidden.rows(); ++t) {
      best = std::max(best, detect_sae()->encode(fr.hidden.row(t).transpose())[0]);
    }
    CHECK(r.activating_max[i] == best);
  }

  // order within a set does not matter
  std::vector<std::string> shuffled{activating[2], activating[0], activating[1]};
  InputEvalResult r2 =
      input_eval(model, *detect_sae(), HookSite{kRes, 0}, 0, tok, shuffled, neutral);
  CHECK(r2.pass == r.pass);
  CHECK(r2.mean_activating == doctest::Approx(r.mean_activating).epsilon(1e-12));
}

TEST_CASE("input metric surfaces tokenization failures") {
  const Model& model = testenv::shared_model();
  std::vector<std::string> good{"a calm deal."};
  std::vector<std::string> bad{"caf\xc3\xa9"};
  CHECK_THROWS_AS(input_eval(model, *detect_sae(), HookSite{kRes, 0}, 0,
                             testenv::shared_tokenizer(), bad, good),
                  Error);
}

TEST_CASE("a tolerance-sized KL target calibrates to the null clamp") {
  const Model& model = testenv::shared_model();
  const double m = calibrate_clamp(model, main_sae(), HookSite{kRes, 1}, 0, open_prompts(),
                                   0.005, +1, 0.01);
  CHECK(m == 0.0);
}

TEST_CASE("zero-direction features fail calibration loudly") {
  const Model& model = testenv::shared_model();
  Eigen::MatrixXd w_dec = Eigen::MatrixXd::Zero(1, 16);
  auto zero = std::make_shared<const Featurizer>(
      Featurizer::sae(Eigen::MatrixXd::Zero(16, 1), Eigen::VectorXd::Zero(1), w_dec,
                      Eigen::VectorXd::Zero(16), SaeActivation::ReLU));
  try {
    calibrate_clamp(model, zero, HookSite{kRes, 1}, 0, open_prompts(), 0.25, +1, 0.01);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CalibrationFailed);
    CHECK(std::string(e.what()).find("best achieved") != std::string::npos);
  }
}

TEST_CASE("calibration hits the target within tolerance, cross-checked independently") {
  const Model& model = testenv::shared_model();
  const auto& fx = testenv::shared_fixture();
  reference::RefWeights ref(fx.weights_path, fx.model_config);
  reference::RefSae ref_sae = reference::load_ref_sae(fx.dir + "/sae_main.safetensors", "relu");
  const std::vector<std::vector<int>> prompt_tokens = open_prompts();

  for (double target : {0.25, 0.5}) {
    for (int sign : {+1, -1}) {
      const double m = calibrate_clamp(model, main_sae(), HookSite{kRes, 1}, 2, prompt_tokens,
                                       target, sign, 0.01);
      CHECK(m * sign >= 0.0);
      // recompute the achieved KL through the loop-based reference stack
      double total = 0.0;
      for (const auto& tokens : prompt_tokens) {
        reference::RefForwardResult base = reference::ref_forward(ref, tokens);
        reference::RefClamp clamp{HookSite{kRes, 1}, &ref_sae, 2, m};
        reference::RefForwardResult steered =
            reference::ref_forward(ref, tokens, std::nullopt, &clamp);
        reference::Vec p = reference::ref_softmax(steered.logits.back());
        reference::Vec q = reference::ref_softmax(base.logits.back());
        double kl = 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
          if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
        }
        total += kl;
      }
      CHECK(std::abs(total / 3.0 - target) <= 0.0101);
    }
  }
}

TEST_CASE("a dense grid scan confirms the bisection result") {
  const Model& model = testenv::shared_model();
  const std::vector<std::vector<int>> prompt_tokens = open_prompts();
  const double target = 0.25;
  const double m = calibrate_clamp(model, main_sae(), HookSite{kRes, 1}, 5, prompt_tokens, target,
                                   +1, 0.01);

  auto mean_kl = [&](double value) {
    Intervention iv{HookSite{kRes, 1}, main_sae(), 5, value};
    double total = 0.0;
    for (const auto& tokens : prompt_tokens) {
      total += kl_divergence(model.next_token_distribution(tokens, &iv),
                             model.next_token_distribution(tokens));
    }
    return total / static_cast<double>(prompt_tokens.size());
  };

  // the grid's best magnitude agrees with the calibrated one on achieved KL
  double best_gap = 1e300;
  for (int i = 0; i <= 160; ++i) {
    const double mag = std::exp(std::log(0.0625) + (std::log(64.0) - std::log(0.0625)) * i / 160.0);
    best_gap = std::min(best_gap, std::abs(mean_kl(mag) - target));
  }
  CHECK(best_gap <= 0.01);
  CHECK(std::abs(mean_kl(m) - target) <= 0.01);
}

TEST_CASE("KL of the null clamp is exactly zero on every prompt") {
  const Model& model = testenv::shared_model();
  for (const auto& tokens : open_prompts()) {
    Eigen::VectorXd p = model.next_token_distribution(tokens);
    CHECK(kl_divergence(p, p) == 0.0);
  }
}

TEST_CASE("steered generation produces prompts x clamps texts within the length cap") {
  const Model& model = testenv::shared_model();
  const Tokenizer& tok = testenv::shared_tokenizer();
  EvalConfig config;
  config.seed = 31;
  SteeredTextSet set =
      steered_generations(model, main_sae(), HookSite{kRes, 1}, main_feature(2), config, tok);
  CHECK(set.texts.size() == 12);
  CHECK(set.clamp_values.size() == 4);
  CHECK(set.clamp_values[0] > 0.0);
  CHECK(set.clamp_values[2] < 0.0);
  for (const std::string& text : set.texts) {
    CHECK(static_cast<int>(tok.encode(text, /*add_bos=*/false).size()) <= 25);
  }

  SteeredTextSet again =
      steered_generations(model, main_sae(), HookSite{kRes, 1}, main_feature(2), config, tok);
  CHECK(again.texts == set.texts);
}

TEST_CASE("clamping a feature at its constant natural activation reproduces the baseline") {
  const Model& model = testenv::shared_model();
  const Tokenizer& tok = testenv::shared_tokenizer();
  const std::vector<int> prompt = tok.encode("I think");
  SamplingConfig sampling{DecodeMode::Temperature, 1.0, 17, 25};
  Intervention identity{HookSite{kRes, 0}, detect_sae(), 7, 0.75};
  CHECK(model.generate(prompt, sampling, &identity, tok.eos_id()) ==
        model.generate(prompt, sampling, nullptr, tok.eos_id()));
}

TEST_CASE("strongly boosting a character detector floods generations with it") {
  const Model& model = testenv::shared_model();
  const Tokenizer& tok = testenv::shared_tokenizer();
  const std::vector<int> prompt = tok.encode("I think");

  int64_t base_z = 0, base_total = 0, steered_z = 0, steered_total = 0;
  for (uint64_t seed = 0; seed < 24; ++seed) {
    SamplingConfig sampling{DecodeMode::Temperature, 1.0, seed, 25};
    const std::string base = tok.decode(model.generate(prompt, sampling, nullptr, tok.eos_id()));
    base_z += std::count(base.begin(), base.end(), 'z');
    base_total += static_cast<int64_t>(base.size());
    Intervention boost{HookSite{kRes, 0}, detect_sae(), 1, 40.0};  // z detector
    const std::string steered =
        tok.decode(model.generate(prompt, sampling, &boost, tok.eos_id()));
    steered_z += std::count(steered.begin(), steered.end(), 'z');
    steered_total += static_cast<int64_t>(steered.size());
  }
  const double base_rate = static_cast<double>(base_z) / static_cast<double>(base_total);
  const double steered_rate = static_cast<double>(steered_z) / static_cast<double>(steered_total);
  CHECK(steered_rate > 3.0 * base_rate);
  CHECK(steered_rate > 0.08);
}

TEST_CASE("the judge picks the matching set when sets are separable") {
  FeatureRef target = main_feature(1);
  FeatureRef d1 = main_feature(2);
  FeatureRef d2 = main_feature(3);
  SteeredTextSet target_set = fabricated_set(target, "zzz zag zone");
  SteeredTextSet set1 = fabricated_set(d1, "oak calm bench");
  SteeredTextSet set2 = fabricated_set(d2, "pale lamp mild");

  OutputEvalResult r = output_eval(mock_gateway(), prompts(), "concept: zzz", target_set, set1,
                                   set2, 99);
  CHECK(r.pass);
  CHECK(r.judge_choice >= 1);
  CHECK(r.judge_choice <= 3);

  OutputEvalResult again = output_eval(mock_gateway(), prompts(), "concept: zzz", target_set,
                                       set1, set2, 99);
  CHECK(again.presentation_order == r.presentation_order);
  CHECK(again.judge_choice == r.judge_choice);
  CHECK(again.pass == r.pass);
}

TEST_CASE("three identical sets fall to the deterministic tie rule") {
  SteeredTextSet a = fabricated_set(main_feature(1), "same text");
  SteeredTextSet b = fabricated_set(main_feature(2), "same text");
  SteeredTextSet c = fabricated_set(main_feature(3), "same text");
  OutputEvalResult r = output_eval(mock_gateway(), prompts(), "concept: anything", a, b, c, 5);
  CHECK(r.judge_choice == 1);  // recorded, well-defined, no crash
}

TEST_CASE("output eval validates set distinctness and cardinality") {
  SteeredTextSet a = fabricated_set(main_feature(1), "x");
  SteeredTextSet b = fabricated_set(main_feature(2), "y");
  SteeredTextSet dup = fabricated_set(main_feature(1), "z");
  CHECK_THROWS_AS(output_eval(mock_gateway(), prompts(), "d", a, dup, b, 1), Error);

  SteeredTextSet short_set = fabricated_set(main_feature(3), "w");
  short_set.texts.resize(6);
  CHECK_THROWS_AS(output_eval(mock_gateway(), prompts(), "d", a, b, short_set, 1), Error);
}

TEST_CASE("a uniformly random judge passes about a third of trials") {
  GatewayConfig config;
  config.mock_judge_policy = MockJudgePolicy::Random;
  config.mock_seed = 2024;
  Gateway random_judge(config);

  SteeredTextSet a = fabricated_set(main_feature(1), "alpha beta");
  SteeredTextSet b = fabricated_set(main_feature(2), "gamma delta");
  SteeredTextSet c = fabricated_set(main_feature(3), "epsilon mu");
  int passes = 0;
  const int trials = 300;
  for (int i = 0; i < trials; ++i) {
    OutputEvalResult r = output_eval(random_judge, prompts(),
                                     "trial " + std::to_string(i) + " concept", a, b, c,
                                     static_cast<uint64_t>(i));
    passes += r.pass ? 1 : 0;
  }
  const double rate = static_cast<double>(passes) / trials;
  CHECK(rate >= 1.0 / 3.0 - 0.06);
  CHECK(rate <= 1.0 / 3.0 + 0.06);
}
