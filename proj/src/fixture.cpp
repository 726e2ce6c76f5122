#include "featdesc/fixture.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"
#include "featdesc/rng.hpp"
#include "featdesc/tensor_store.hpp"

namespace featdesc::fixture {

namespace {

constexpr int kLayers = 2;
constexpr int kDModel = 16;
constexpr int kDMlp = 32;
constexpr int kHeads = 2;
constexpr int kVocab = 64;
constexpr int kContext = 192;

const char* kDetectorChars = "qzrxvw";  // all outside the corpus alphabet a..p

Tensor gaussian_tensor(Rng& rng, std::vector<int64_t> shape, double std_dev, double mean = 0.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = mean + std_dev * rng.gaussian();
  return t;
}

std::string checksum_matrix(const Eigen::MatrixXd& m) {
  uint64_t h = kFnvOffset;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      uint64_t bits;
      double v = m(r, c);
      std::memcpy(&bits, &v, sizeof(bits));
      h = fnv1a64_mix(h, bits);
    }
  }
  return hex64(h);
}

TensorStore build_model_weights(Rng& rng) {
  TensorStore store;
  const double wd = 0.4 / std::sqrt(static_cast<double>(kDModel));
  const double wm = 0.4 / std::sqrt(static_cast<double>(kDMlp));

  store.put("embed.tokens", gaussian_tensor(rng, {kVocab, kDModel}, 1.0));
  store.put("embed.positions", gaussian_tensor(rng, {kContext, kDModel}, 0.1));

  store.put("blocks.ln1.gain", gaussian_tensor(rng, {kLayers, kDModel}, 0.05, 1.0));
  store.put("blocks.ln1.bias", gaussian_tensor(rng, {kLayers, kDModel}, 0.05));
  store.put("blocks.attn.w_q", gaussian_tensor(rng, {kLayers, kDModel, kDModel}, wd));
  store.put("blocks.attn.w_k", gaussian_tensor(rng, {kLayers, kDModel, kDModel}, wd));
  store.put("blocks.attn.w_v", gaussian_tensor(rng, {kLayers, kDModel, kDModel}, wd));
  store.put("blocks.attn.w_o", gaussian_tensor(rng, {kLayers, kDModel, kDModel}, wd));
  store.put("blocks.attn.b_q", gaussian_tensor(rng, {kLayers, kDModel}, 0.01));
  store.put("blocks.attn.b_k", gaussian_tensor(rng, {kLayers, kDModel}, 0.01));
  store.put("blocks.attn.b_v", gaussian_tensor(rng, {kLayers, kDModel}, 0.01));
  store.put("blocks.attn.b_o", gaussian_tensor(rng, {kLayers, kDModel}, 0.01));
  store.put("blocks.ln2.gain", gaussian_tensor(rng, {kLayers, kDModel}, 0.05, 1.0));
  store.put("blocks.ln2.bias", gaussian_tensor(rng, {kLayers, kDModel}, 0.05));
  store.put("blocks.mlp.w_in", gaussian_tensor(rng, {kLayers, kDModel, kDMlp}, wd));
  store.put("blocks.mlp.b_in", gaussian_tensor(rng, {kLayers, kDMlp}, 0.01));
  store.put("blocks.mlp.w_out", gaussian_tensor(rng, {kLayers, kDMlp, kDModel}, wm));
  store.put("blocks.mlp.b_out", gaussian_tensor(rng, {kLayers, kDModel}, 0.01));

  store.put("ln_f.gain", gaussian_tensor(rng, {kDModel}, 0.05, 1.0));
  // final layer-norm bias stays zero: vocabulary projection rankings are then
  // exactly invariant to positive rescaling of the projected vector
  store.put("ln_f.bias", Tensor::zeros({kDModel}));
  store.put("unembed", gaussian_tensor(rng, {kDModel, kVocab}, 1.0 / std::sqrt(kDModel)));
  return store;
}

std::string random_corpus_word(Rng& rng) {
  const int len = 2 + static_cast<int>(rng.below(6));
  std::string word;
  for (int i = 0; i < len; ++i) {
    word += static_cast<char>('a' + rng.below(16));  // a..p only
  }
  return word;
}

std::vector<std::string> build_corpus(Rng& rng, int n_docs) {
  std::vector<std::string> docs;
  docs.reserve(static_cast<size_t>(n_docs));
  for (int i = 0; i < n_docs; ++i) {
    std::string text;
    const int n_words = 10 + static_cast<int>(rng.below(12));
    for (int w = 0; w < n_words; ++w) {
      if (w) text += ' ';
      text += random_corpus_word(rng);
    }
    text += '.';
    docs.push_back(std::move(text));
  }
  return docs;
}

struct ProbeSamples {
  // one hidden vector per (sequence, position), labeled with the token there
  std::vector<Eigen::VectorXd> hidden;
  std::vector<int> token;
};

ProbeSamples collect_probe_samples(const Model& model, HookSite site, Rng& rng,
                                   const std::vector<std::string>& corpus,
                                   const Tokenizer& tokenizer) {
  std::vector<std::vector<int>> sequences;
  // random sequences over the full non-special vocabulary
  for (int i = 0; i < 100; ++i) {
    std::vector<int> seq{tokenizer.bos_id()};
    const int len = 4 + static_cast<int>(rng.below(37));
    for (int t = 0; t < len; ++t) seq.push_back(2 + static_cast<int>(rng.below(kVocab - 2)));
    sequences.push_back(std::move(seq));
  }
  // corpus-like sequences at corpus-like lengths
  for (size_t i = 0; i < corpus.size() && i < 30; ++i) {
    std::vector<int> seq = tokenizer.encode(corpus[i]);
    if (static_cast<int>(seq.size()) > 128) seq.resize(128);
    sequences.push_back(std::move(seq));
  }

  ProbeSamples samples;
  for (const auto& seq : sequences) {
    ForwardResult fr = model.forward_capture(seq, site);
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
      samples.hidden.push_back(fr.hidden.row(t).transpose());
      samples.token.push_back(seq[static_cast<size_t>(t)]);
    }
  }
  return samples;
}

struct Detector {
  Eigen::VectorXd encoder;  // column of W_enc
  double bias = 0.0;
};

/// Linear single-token detector: mean-difference direction with the threshold
/// centered between classes, rescaled so the weakest true firing reads 1.0.
Detector build_token_detector(const ProbeSamples& samples, int token_id) {
  const Eigen::Index d = samples.hidden.front().size();
  Eigen::VectorXd mean_pos = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd mean_neg = Eigen::VectorXd::Zero(d);
  int n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < samples.hidden.size(); ++i) {
    if (samples.token[i] == token_id) {
      mean_pos += samples.hidden[i];
      ++n_pos;
    } else {
      mean_neg += samples.hidden[i];
      ++n_neg;
    }
  }
  if (n_pos == 0) raise(ErrorCode::Precondition, "probe set never contains the detector token");
  mean_pos /= n_pos;
  mean_neg /= n_neg;

  Eigen::VectorXd w = mean_pos - mean_neg;
  double min_pos = std::numeric_limits<double>::infinity();
  double max_neg = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < samples.hidden.size(); ++i) {
    const double s = w.dot(samples.hidden[i]);
    if (samples.token[i] == token_id) {
      min_pos = std::min(min_pos, s);
    } else {
      max_neg = std::max(max_neg, s);
    }
  }
  const double gap = min_pos - max_neg;
  if (!(gap > 1e-6)) {
    raise(ErrorCode::Precondition,
          "detector for token " + std::to_string(token_id) + " is not separable (gap " +
              std::to_string(gap) + ")");
  }
  const double threshold = max_neg + 0.5 * gap;
  const double scale = 1.0 / (min_pos - threshold);
  return Detector{w * scale, -threshold * scale};
}

Featurizer build_detect_sae(const Model& model, const ProbeSamples& samples, Rng& rng) {
  const int k = 8;
  Eigen::MatrixXd w_enc = Eigen::MatrixXd::Zero(kDModel, k);
  Eigen::VectorXd b_enc = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd w_dec(k, kDModel);
  Eigen::VectorXd b_dec = Eigen::VectorXd::Zero(kDModel);

  for (int f = 0; f < 6; ++f) {
    const int token_id = toy_char_id(kDetectorChars[f]);
    Detector det = build_token_detector(samples, token_id);
    w_enc.col(f) = det.encoder;
    b_enc[f] = det.bias;
    // decoder points at the character's unembedding direction, so clamping
    // the feature high promotes that character in the output
    Eigen::VectorXd dir = model.unembed().col(token_id);
    w_dec.row(f) = (dir / dir.norm()).transpose();
  }
  // 6: zero encoder, never activates
  w_enc.col(6).setZero();
  b_enc[6] = -1.0;
  Eigen::VectorXd r6(kDModel);
  for (int i = 0; i < kDModel; ++i) r6[i] = rng.gaussian();
  w_dec.row(6) = (r6 / r6.norm()).transpose();
  // 7: constant positive bias, same activation at every position of any input
  w_enc.col(7).setZero();
  b_enc[7] = 0.75;
  Eigen::VectorXd r7(kDModel);
  for (int i = 0; i < kDModel; ++i) r7[i] = rng.gaussian();
  w_dec.row(7) = (r7 / r7.norm()).transpose();

  return Featurizer::sae(std::move(w_enc), std::move(b_enc), std::move(w_dec), std::move(b_dec),
                         SaeActivation::ReLU);
}

Featurizer build_main_sae(Rng& rng) {
  const int k = 64;
  Eigen::MatrixXd w_dec(k, kDModel);
  for (int f = 0; f < k; ++f) {
    Eigen::VectorXd row(kDModel);
    for (int i = 0; i < kDModel; ++i) row[i] = rng.gaussian();
    w_dec.row(f) = (row / row.norm()).transpose();
  }
  // tied encoder: w_enc column f equals decoder row f, so w_enc_f . d_f = 1
  Eigen::MatrixXd w_enc = w_dec.transpose();
  Eigen::VectorXd b_enc = Eigen::VectorXd::Constant(k, -0.2);
  Eigen::VectorXd b_dec(kDModel);
  for (int i = 0; i < kDModel; ++i) b_dec[i] = 0.01 * rng.gaussian();
  return Featurizer::sae(std::move(w_enc), std::move(b_enc), std::move(w_dec), std::move(b_dec),
                         SaeActivation::ReLU);
}

std::string pipeline_config_toml(const ToyFixture& fx) {
  std::ostringstream os;
  os << "# Toy pipeline configuration generated alongside the fixture.\n\n";
  os << "[model]\n";
  os << "model_id = \"" << fx.model_config.model_id << "\"\n";
  os << "weights = \"model.safetensors\"\n";
  os << "tokenizer = \"tokenizer.json\"\n";
  os << "n_layers = " << fx.model_config.n_layers << "\n";
  os << "d_model = " << fx.model_config.d_model << "\n";
  os << "d_mlp = " << fx.model_config.d_mlp << "\n";
  os << "n_heads = " << fx.model_config.n_heads << "\n";
  os << "vocab_size = " << fx.model_config.vocab_size << "\n";
  os << "ln_epsilon = 1e-5\n";
  os << "positional = \"learned\"\n";
  os << "layernorm_enabled = true\n\n";
  os << "[featurizers]\n";
  os << "manifest = \"featurizers.json\"\n\n";
  os << "[corpus]\n";
  os << "path = \"corpus.jsonl\"\n";
  os << "window = 128\n\n";
  os << "[index]\n";
  os << "k_top = 5\n";
  os << "samples_per_band = 2\n";
  os << "dead_threshold = 0.0\n\n";
  os << "[methods]\n";
  os << "t_vocabproj = 50\n";
  os << "t_tokenchange = 20\n";
  os << "k_prompts = 32\n";
  os << "prompt_len = 32\n\n";
  os << "[eval]\n";
  os << "n_sentences = 5\n";
  os << "open_ended_prompts = [\"I think\", \"Honestly,\", \"The most important thing\"]\n";
  os << "max_gen_tokens = 25\n";
  os << "kl_targets = [0.25, 0.5]\n";
  os << "calibration_tolerance = 0.01\n\n";
  os << "[gateway]\n";
  os << "backend = \"mock\"\n";
  os << "cache_dir = \"\"\n\n";
  os << "[output]\n";
  os << "dir = \"runs/toy\"\n\n";
  os << "[run]\n";
  os << "seed = 7\n";
  os << "workers = 2\n";
  return os.str();
}

}  // namespace

Tokenizer toy_tokenizer() {
  std::map<std::string, int> tokens;
  tokens["<bos>"] = 0;
  tokens["<eos>"] = 1;
  tokens[" "] = 2;
  for (int i = 0; i < 26; ++i) tokens[std::string(1, static_cast<char>('a' + i))] = 3 + i;
  const std::string caps = "IHTAOW";
  for (int i = 0; i < 6; ++i) tokens[std::string(1, caps[static_cast<size_t>(i)])] = 29 + i;
  for (int i = 0; i < 10; ++i) tokens[std::string(1, static_cast<char>('0' + i))] = 35 + i;
  const std::string punct = ".,!?'\"-:;()/&*+=#%@";
  for (int i = 0; i < static_cast<int>(punct.size()); ++i) {
    tokens[std::string(1, punct[static_cast<size_t>(i)])] = 45 + i;
  }
  return Tokenizer::from_tokens(std::move(tokens), 0, 1);
}

int toy_char_id(char c) {
  static const Tokenizer tok = toy_tokenizer();
  const std::vector<int> ids = tok.encode(std::string(1, c), /*add_bos=*/false);
  return ids.at(0);
}

ToyFixture make_toy_fixture(const std::string& dir, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  ToyFixture fx;
  fx.dir = dir;
  fx.model_config = ModelConfig{"toy-2l", kLayers, kDModel, kDMlp, kHeads, kVocab,
                                1e-5, PositionalScheme::Learned, true};
  fx.weights_path = (fs::path(dir) / "model.safetensors").string();
  fx.tokenizer_path = (fs::path(dir) / "tokenizer.json").string();
  fx.manifest_path = (fs::path(dir) / "featurizers.json").string();
  fx.corpus_path = (fs::path(dir) / "corpus.jsonl").string();
  fx.config_path = (fs::path(dir) / "config.toml").string();
  fx.meta_path = (fs::path(dir) / "fixture.json").string();

  Tokenizer tokenizer = toy_tokenizer();
  tokenizer.save(fx.tokenizer_path);

  Rng weight_rng(derive_seed(seed, "toy-model-weights"));
  TensorStore weights = build_model_weights(weight_rng);
  weights.save(fx.weights_path);

  Model model = Model::load(fx.weights_path, fx.model_config);

  Rng corpus_rng(derive_seed(seed, "toy-corpus"));
  std::vector<std::string> corpus = build_corpus(corpus_rng, 150);
  {
    std::ofstream out(fx.corpus_path, std::ios::trunc);
    for (size_t i = 0; i < corpus.size(); ++i) {
      char doc_id[16];
      std::snprintf(doc_id, sizeof(doc_id), "doc-%04zu", i);
      nlohmann::json j{{"doc_id", doc_id}, {"text", corpus[i]}};
      out << j.dump() << "\n";
    }
  }

  Rng probe_rng(derive_seed(seed, "toy-probe"));
  const HookSite detect_site{HookKind::ResidualPost, 0};
  ProbeSamples samples = collect_probe_samples(model, detect_site, probe_rng, corpus, tokenizer);

  Rng sae_rng(derive_seed(seed, "toy-saes"));
  Featurizer sae_detect = build_detect_sae(model, samples, sae_rng);
  Featurizer sae_main = build_main_sae(sae_rng);
  sae_detect.save_sae((fs::path(dir) / "sae_detect.safetensors").string());
  sae_main.save_sae((fs::path(dir) / "sae_main.safetensors").string());

  {
    nlohmann::json manifest;
    manifest["saes"] = {
        {"sae_detect",
         {{"file", "sae_detect.safetensors"},
          {"site", {{"kind", "ResidualPost"}, {"layer", 0}}},
          {"activation", "relu"},
          {"k", sae_detect.feature_count()}}},
        {"sae_main",
         {{"file", "sae_main.safetensors"},
          {"site", {{"kind", "ResidualPost"}, {"layer", 1}}},
          {"activation", "relu"},
          {"k", sae_main.feature_count()}}},
    };
    std::ofstream out(fx.manifest_path, std::ios::trunc);
    out << manifest.dump(2) << "\n";
  }

  {
    std::ofstream out(fx.config_path, std::ios::trunc);
    out << pipeline_config_toml(fx);
  }

  const std::vector<int> probe_tokens{0, 5, 9, 17, 2, 11};
  ForwardResult probe = model.forward_capture(probe_tokens, HookSite{HookKind::ResidualPost, 0});
  fx.probe_checksum = checksum_matrix(probe.logits);
  {
    nlohmann::json meta{{"seed", seed},
                        {"probe_tokens", probe_tokens},
                        {"probe_logits_fnv64", fx.probe_checksum},
                        {"detector_chars", std::string(kDetectorChars)}};
    std::ofstream out(fx.meta_path, std::ios::trunc);
    out << meta.dump(2) << "\n";
  }
  return fx;
}

}  // namespace featdesc::fixture
