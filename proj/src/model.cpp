#include "featdesc/model.hpp"

#include <cmath>

#include "featdesc/error.hpp"
#include "featdesc/rng.hpp"
#include "featdesc/tensor_store.hpp"

namespace featdesc {

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

int Model::site_dim(HookSite site) const {
  return site.kind == HookKind::MlpHidden ? config_.d_mlp : config_.d_model;
}

void Model::check_site(HookSite site) const {
  if (site.layer < 0 || site.layer >= config_.n_layers) {
    raise(ErrorCode::IndexOutOfRange,
          "hook site layer " + std::to_string(site.layer) + " outside [0, " +
              std::to_string(config_.n_layers) + ")");
  }
}

Model Model::load(const std::string& weights_path, const ModelConfig& config) {
  if (config.n_heads <= 0 || config.d_model % config.n_heads != 0) {
    raise(ErrorCode::Precondition, "d_model must be divisible by n_heads");
  }
  if (config.vocab_size < 2) raise(ErrorCode::Precondition, "vocab_size must be at least 2");

  TensorStore store = TensorStore::load(weights_path);
  const int64_t L = config.n_layers;
  const int64_t d = config.d_model;
  const int64_t dm = config.d_mlp;
  const int64_t V = config.vocab_size;

  Model model;
  model.config_ = config;

  store.get_checked("embed.tokens", {V, d});
  model.embed_tokens_ = store.matrix("embed.tokens");
  if (config.positional == PositionalScheme::Learned) {
    const Tensor& pos = store.get("embed.positions");
    if (pos.shape.size() != 2 || pos.shape[1] != d) {
      raise(ErrorCode::ShapeMismatch, "tensor 'embed.positions' expected shape [*, " +
                                          std::to_string(d) + "]");
    }
    model.embed_positions_ = store.matrix("embed.positions");
    model.context_limit_ = static_cast<int>(pos.shape[0]);
  } else {
    model.context_limit_ = 4096;
  }

  auto mat3 = [&](const std::string& name, int64_t rows, int64_t cols) {
    store.get_checked(name, {L, rows, cols});
    return name;
  };
  auto mat2 = [&](const std::string& name, int64_t cols) {
    store.get_checked(name, {L, cols});
    return name;
  };
  mat2("blocks.ln1.gain", d);
  mat2("blocks.ln1.bias", d);
  mat3("blocks.attn.w_q", d, d);
  mat3("blocks.attn.w_k", d, d);
  mat3("blocks.attn.w_v", d, d);
  mat3("blocks.attn.w_o", d, d);
  mat2("blocks.attn.b_q", d);
  mat2("blocks.attn.b_k", d);
  mat2("blocks.attn.b_v", d);
  mat2("blocks.attn.b_o", d);
  mat2("blocks.ln2.gain", d);
  mat2("blocks.ln2.bias", d);
  mat3("blocks.mlp.w_in", d, dm);
  mat2("blocks.mlp.b_in", dm);
  mat3("blocks.mlp.w_out", dm, d);
  mat2("blocks.mlp.b_out", d);
  store.get_checked("ln_f.gain", {d});
  store.get_checked("ln_f.bias", {d});
  store.get_checked("unembed", {d, V});

  model.blocks_.resize(static_cast<size_t>(L));
  for (int64_t l = 0; l < L; ++l) {
    Block& b = model.blocks_[static_cast<size_t>(l)];
    b.ln1_gain = store.vector_slice("blocks.ln1.gain", l);
    b.ln1_bias = store.vector_slice("blocks.ln1.bias", l);
    b.w_q = store.matrix_slice("blocks.attn.w_q", l);
    b.w_k = store.matrix_slice("blocks.attn.w_k", l);
    b.w_v = store.matrix_slice("blocks.attn.w_v", l);
    b.w_o = store.matrix_slice("blocks.attn.w_o", l);
    b.b_q = store.vector_slice("blocks.attn.b_q", l);
    b.b_k = store.vector_slice("blocks.attn.b_k", l);
    b.b_v = store.vector_slice("blocks.attn.b_v", l);
    b.b_o = store.vector_slice("blocks.attn.b_o", l);
    b.ln2_gain = store.vector_slice("blocks.ln2.gain", l);
    b.ln2_bias = store.vector_slice("blocks.ln2.bias", l);
    b.w_in = store.matrix_slice("blocks.mlp.w_in", l);
    b.b_in = store.vector_slice("blocks.mlp.b_in", l);
    b.w_out = store.matrix_slice("blocks.mlp.w_out", l);
    b.b_out = store.vector_slice("blocks.mlp.b_out", l);
  }
  model.ln_f_gain_ = store.vector("ln_f.gain");
  model.ln_f_bias_ = store.vector("ln_f.bias");
  model.unembed_ = store.matrix("unembed");
  return model;
}

void Model::check_tokens(const std::vector<int>& tokens) const {
  if (tokens.empty()) raise(ErrorCode::EmptyInput, "token sequence is empty");
  if (static_cast<int>(tokens.size()) > context_limit_) {
    raise(ErrorCode::SequenceTooLong,
          "sequence length " + std::to_string(tokens.size()) + " exceeds context limit " +
              std::to_string(context_limit_));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      raise(ErrorCode::TokenOutOfRange, "token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

Eigen::MatrixXd Model::layernorm_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain,
                                      const Eigen::VectorXd& bias) const {
  if (!config_.layernorm_enabled) return x;
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const Eigen::RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(var + config_.ln_epsilon);
    out.row(r) = (centered * inv).cwiseProduct(gain.transpose()) + bias.transpose();
  }
  return out;
}

Eigen::VectorXd Model::apply_final_layernorm(const Eigen::VectorXd& v) const {
  return layernorm_rows(v.transpose(), ln_f_gain_, ln_f_bias_).row(0).transpose();
}

ForwardResult Model::run(const std::vector<int>& tokens, const HookSite* capture,
                         const Intervention* intervention) const {
  check_tokens(tokens);
  if (capture) check_site(*capture);
  if (intervention) {
    check_site(intervention->site);
    if (!intervention->featurizer) {
      raise(ErrorCode::Precondition, "intervention carries no featurizer");
    }
    if (intervention->featurizer->input_dim() != site_dim(intervention->site)) {
      raise(ErrorCode::DimensionMismatch,
            "intervention featurizer dimension does not match its hook site");
    }
  }

  const int T = static_cast<int>(tokens.size());
  const int d = config_.d_model;
  const int n_heads = config_.n_heads;
  const int head_dim = d / n_heads;

  Eigen::MatrixXd x(T, d);
  for (int t = 0; t < T; ++t) {
    x.row(t) = embed_tokens_.row(tokens[static_cast<size_t>(t)]);
    if (config_.positional == PositionalScheme::Learned) {
      x.row(t) += embed_positions_.row(t);
    }
  }

  ForwardResult result;

  auto apply_clamp = [&](Eigen::MatrixXd& hidden) {
    for (Eigen::Index r = 0; r < hidden.rows(); ++r) {
      hidden.row(r) = intervention->featurizer
                          ->clamp_edit(hidden.row(r).transpose(), intervention->feature_index,
                                       intervention->value)
                          .transpose();
    }
  };

  for (int l = 0; l < config_.n_layers; ++l) {
    const Block& b = blocks_[static_cast<size_t>(l)];

    // attention
    Eigen::MatrixXd h = layernorm_rows(x, b.ln1_gain, b.ln1_bias);
    Eigen::MatrixXd q = h * b.w_q;
    q.rowwise() += b.b_q.transpose();
    Eigen::MatrixXd k = h * b.w_k;
    k.rowwise() += b.b_k.transpose();
    Eigen::MatrixXd v = h * b.w_v;
    v.rowwise() += b.b_v.transpose();

    Eigen::MatrixXd attn_mix(T, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int head = 0; head < n_heads; ++head) {
      const auto qh = q.middleCols(head * head_dim, head_dim);
      const auto kh = k.middleCols(head * head_dim, head_dim);
      const auto vh = v.middleCols(head * head_dim, head_dim);
      for (int t = 0; t < T; ++t) {
        Eigen::VectorXd scores = (kh.topRows(t + 1) * qh.row(t).transpose()) * scale;
        Eigen::VectorXd weights = softmax(scores);
        attn_mix.block(t, head * head_dim, 1, head_dim) =
            weights.transpose() * vh.topRows(t + 1);
      }
    }
    Eigen::MatrixXd attn_out = attn_mix * b.w_o;
    attn_out.rowwise() += b.b_o.transpose();
    x += attn_out;

    // MLP
    Eigen::MatrixXd h2 = layernorm_rows(x, b.ln2_gain, b.ln2_bias);
    Eigen::MatrixXd mlp_hidden = h2 * b.w_in;
    mlp_hidden.rowwise() += b.b_in.transpose();
    mlp_hidden = mlp_hidden.unaryExpr([](double v_) { return gelu(v_); });

    const HookSite mlp_site{HookKind::MlpHidden, l};
    if (intervention && intervention->site == mlp_site) apply_clamp(mlp_hidden);
    if (capture && *capture == mlp_site) result.hidden = mlp_hidden;

    Eigen::MatrixXd mlp_out = mlp_hidden * b.w_out;
    mlp_out.rowwise() += b.b_out.transpose();
    x += mlp_out;

    const HookSite res_site{HookKind::ResidualPost, l};
    if (intervention && intervention->site == res_site) apply_clamp(x);
    if (capture && *capture == res_site) result.hidden = x;
  }

  result.logits = layernorm_rows(x, ln_f_gain_, ln_f_bias_) * unembed_;
  return result;
}

ForwardResult Model::forward_capture(const std::vector<int>& tokens, HookSite site,
                                     const Intervention* intervention) const {
  return run(tokens, &site, intervention);
}

Eigen::VectorXd Model::next_token_distribution(const std::vector<int>& tokens,
                                               const Intervention* intervention) const {
  ForwardResult fr = run(tokens, nullptr, intervention);
  return softmax(fr.logits.row(fr.logits.rows() - 1).transpose());
}

std::vector<int> Model::generate(const std::vector<int>& prompt, const SamplingConfig& sampling,
                                 const Intervention* intervention, int eos_id) const {
  check_tokens(prompt);
  if (sampling.mode == DecodeMode::Temperature && !(sampling.temperature > 0.0)) {
    raise(ErrorCode::Precondition, "temperature must be positive");
  }

  std::vector<int> context = prompt;
  std::vector<int> generated;
  Rng rng(sampling.seed);

  for (int step = 0; step < sampling.max_new_tokens; ++step) {
    if (static_cast<int>(context.size()) >= context_limit_) break;
    ForwardResult fr = run(context, nullptr, intervention);
    Eigen::VectorXd logits = fr.logits.row(fr.logits.rows() - 1).transpose();

    int next = 0;
    if (sampling.mode == DecodeMode::Greedy) {
      // argmax, lowest id on ties
      double best = logits[0];
      for (int i = 1; i < logits.size(); ++i) {
        if (logits[i] > best) {
          best = logits[i];
          next = i;
        }
      }
    } else {
      Eigen::VectorXd probs = softmax(logits / sampling.temperature);
      double u = rng.uniform();
      double acc = 0.0;
      next = static_cast<int>(probs.size()) - 1;
      for (int i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
          next = i;
          break;
        }
      }
    }
    generated.push_back(next);
    if (next == eos_id) break;
    context.push_back(next);
  }
  return generated;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double max = logits.maxCoeff();
  Eigen::VectorXd exps = (logits.array() - max).exp();
  return exps / exps.sum();
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) {
    raise(ErrorCode::LengthMismatch, "distributions have different lengths");
  }
  constexpr double kFloor = 1e-12;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 * log(0/q) = 0
    kl += p[i] * std::log(p[i] / std::max(q[i], kFloor));
  }
  // rounding can leave a tiny negative residue when p nearly equals q
  return std::max(kl, 0.0);
}

}  // namespace featdesc
