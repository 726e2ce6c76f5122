#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "featdesc/featurizer.hpp"

namespace featdesc {

enum class PositionalScheme { Learned, None };

struct ModelConfig {
  std::string model_id = "model";
  int n_layers = 0;
  int d_model = 0;
  int d_mlp = 0;
  int n_heads = 0;
  int vocab_size = 0;
  double ln_epsilon = 1e-5;
  PositionalScheme positional = PositionalScheme::Learned;
  bool layernorm_enabled = true;
};

/// A feature clamp applied at a hook site, at every token position of every
/// forward step while active.
struct Intervention {
  HookSite site;
  std::shared_ptr<const Featurizer> featurizer;
  int feature_index = 0;
  double value = 0.0;
};

enum class DecodeMode { Greedy, Temperature };

struct SamplingConfig {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
  uint64_t seed = 0;
  int max_new_tokens = 0;
};

struct ForwardResult {
  Eigen::MatrixXd hidden;  // [T, site dim], captured after any intervention
  Eigen::MatrixXd logits;  // [T, vocab]
};

/// Decoder-only transformer (pre-LN blocks, learned positions, causal
/// attention, GELU MLP). Immutable once loaded; forwards allocate private
/// state so a model is freely shared across threads.
class Model {
 public:
  /// Load from a named-tensor container; validates that every tensor the
  /// config references exists with the expected shape. Per-layer weights are
  /// stacked along the leading axis.
  static Model load(const std::string& weights_path, const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int context_limit() const { return context_limit_; }
  int site_dim(HookSite site) const;
  void check_site(HookSite site) const;

  /// Forward pass capturing hidden states at `site` plus all-position logits.
  ForwardResult forward_capture(const std::vector<int>& tokens, HookSite site,
                                const Intervention* intervention = nullptr) const;

  /// Softmax of the last-position logits.
  Eigen::VectorXd next_token_distribution(const std::vector<int>& tokens,
                                          const Intervention* intervention = nullptr) const;

  /// Autoregressive decoding; the intervention is re-applied at its site on
  /// every step and position. Stops early on EOS when eos_id >= 0.
  std::vector<int> generate(const std::vector<int>& prompt, const SamplingConfig& sampling,
                            const Intervention* intervention = nullptr, int eos_id = -1) const;

  const Eigen::MatrixXd& unembed() const { return unembed_; }
  const Eigen::MatrixXd& token_embedding() const { return embed_tokens_; }
  const Eigen::VectorXd& final_ln_gain() const { return ln_f_gain_; }
  const Eigen::VectorXd& final_ln_bias() const { return ln_f_bias_; }

  /// Final layer norm as used before unembedding (identity when the config
  /// disables layer norm).
  Eigen::VectorXd apply_final_layernorm(const Eigen::VectorXd& v) const;

 private:
  struct Block {
    Eigen::VectorXd ln1_gain, ln1_bias;
    Eigen::MatrixXd w_q, w_k, w_v, w_o;  // d x d
    Eigen::VectorXd b_q, b_k, b_v, b_o;
    Eigen::VectorXd ln2_gain, ln2_bias;
    Eigen::MatrixXd w_in;   // d x d_mlp
    Eigen::VectorXd b_in;   // d_mlp
    Eigen::MatrixXd w_out;  // d_mlp x d
    Eigen::VectorXd b_out;  // d
  };

  ModelConfig config_;
  int context_limit_ = 0;
  Eigen::MatrixXd embed_tokens_;     // vocab x d
  Eigen::MatrixXd embed_positions_;  // context x d
  std::vector<Block> blocks_;
  Eigen::VectorXd ln_f_gain_, ln_f_bias_;
  Eigen::MatrixXd unembed_;  // d x vocab

  void check_tokens(const std::vector<int>& tokens) const;
  Eigen::MatrixXd layernorm_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain,
                                 const Eigen::VectorXd& bias) const;
  ForwardResult run(const std::vector<int>& tokens, const HookSite* capture,
                    const Intervention* intervention) const;
};

/// Softmax with max-subtraction; entries sum to 1 up to rounding.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// KL(p || q) = sum p_i log(p_i / q_i) with 0 log 0 = 0 and q floored at
/// 1e-12 before the log ratio. Throws LengthMismatch on size disagreement.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

}  // namespace featdesc
