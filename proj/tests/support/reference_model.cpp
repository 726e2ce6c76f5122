#include "reference_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "featdesc/tensor_store.hpp"

namespace reference {

using featdesc::HookKind;
using featdesc::TensorStore;

namespace {

Mat to_mat(const featdesc::Tensor& t) {
  Mat m(static_cast<size_t>(t.shape[0]), Vec(static_cast<size_t>(t.shape[1])));
  for (size_t r = 0; r < m.size(); ++r) {
    for (size_t c = 0; c < m[r].size(); ++c) {
      m[r][c] = t.data[r * m[r].size() + c];
    }
  }
  return m;
}

Mat slice3(const featdesc::Tensor& t, int64_t index) {
  const size_t rows = static_cast<size_t>(t.shape[1]);
  const size_t cols = static_cast<size_t>(t.shape[2]);
  Mat m(rows, Vec(cols));
  const double* base = t.data.data() + static_cast<size_t>(index) * rows * cols;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) m[r][c] = base[r * cols + c];
  }
  return m;
}

Vec slice2(const featdesc::Tensor& t, int64_t index) {
  const size_t cols = static_cast<size_t>(t.shape[1]);
  Vec v(cols);
  const double* base = t.data.data() + static_cast<size_t>(index) * cols;
  for (size_t c = 0; c < cols; ++c) v[c] = base[c];
  return v;
}

Vec to_vec(const featdesc::Tensor& t) { return t.data; }

// y = x * M + b, M row-major [in x out]
Vec affine(const Vec& x, const Mat& m, const Vec& b) {
  Vec y(b);
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < y.size(); ++j) y[j] += x[i] * m[i][j];
  }
  return y;
}

Vec layernorm(const Vec& x, const Vec& gain, const Vec& bias, double eps, bool enabled) {
  if (!enabled) return x;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

RefSae load_ref_sae(const std::string& path, const std::string& activation, int top_k) {
  TensorStore store = TensorStore::load(path);
  RefSae sae;
  sae.w_enc = to_mat(store.get("W_enc"));
  sae.b_enc = to_vec(store.get("b_enc"));
  sae.w_dec = to_mat(store.get("W_dec"));
  sae.b_dec = to_vec(store.get("b_dec"));
  sae.activation = activation;
  if (activation == "jumprelu") sae.threshold = to_vec(store.get("threshold"));
  sae.top_k = top_k;
  return sae;
}

Vec ref_encode(const RefSae& sae, const Vec& v) {
  const size_t k = sae.b_enc.size();
  Vec pre(sae.b_enc);
  for (size_t i = 0; i < v.size(); ++i) {
    for (size_t j = 0; j < k; ++j) pre[j] += sae.w_enc[i][j] * v[i];
  }
  if (sae.activation == "relu") {
    for (double& p : pre) p = std::max(p, 0.0);
  } else if (sae.activation == "jumprelu") {
    for (size_t j = 0; j < k; ++j) {
      if (!(pre[j] > sae.threshold[j])) pre[j] = 0.0;
    }
  } else {  // topk
    for (double& p : pre) p = std::max(p, 0.0);
    std::vector<size_t> order(k);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return pre[a] > pre[b]; });
    Vec out(k, 0.0);
    for (int i = 0; i < sae.top_k && i < static_cast<int>(k); ++i) {
      out[order[static_cast<size_t>(i)]] = pre[order[static_cast<size_t>(i)]];
    }
    pre = out;
  }
  return pre;
}

Vec ref_feature_vector(const RefSae& sae, int index) {
  return sae.w_dec[static_cast<size_t>(index)];
}

Vec ref_clamp(const RefSae& sae, const Vec& v, int index, double m) {
  const double a = ref_encode(sae, v)[static_cast<size_t>(index)];
  Vec dir = ref_feature_vector(sae, index);
  Vec out(v);
  for (size_t i = 0; i < v.size(); ++i) out[i] += (m - a) * dir[i];
  return out;
}

RefWeights::RefWeights(const std::string& weights_path, const featdesc::ModelConfig& cfg)
    : config(cfg) {
  TensorStore store = TensorStore::load(weights_path);
  embed_tokens = to_mat(store.get("embed.tokens"));
  if (cfg.positional == featdesc::PositionalScheme::Learned) {
    embed_positions = to_mat(store.get("embed.positions"));
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    ln1_gain.push_back(slice2(store.get("blocks.ln1.gain"), l));
    ln1_bias.push_back(slice2(store.get("blocks.ln1.bias"), l));
    w_q.push_back(slice3(store.get("blocks.attn.w_q"), l));
    w_k.push_back(slice3(store.get("blocks.attn.w_k"), l));
    w_v.push_back(slice3(store.get("blocks.attn.w_v"), l));
    w_o.push_back(slice3(store.get("blocks.attn.w_o"), l));
    b_q.push_back(slice2(store.get("blocks.attn.b_q"), l));
    b_k.push_back(slice2(store.get("blocks.attn.b_k"), l));
    b_v.push_back(slice2(store.get("blocks.attn.b_v"), l));
    b_o.push_back(slice2(store.get("blocks.attn.b_o"), l));
    ln2_gain.push_back(slice2(store.get("blocks.ln2.gain"), l));
    ln2_bias.push_back(slice2(store.get("blocks.ln2.bias"), l));
    w_in.push_back(slice3(store.get("blocks.mlp.w_in"), l));
    b_in.push_back(slice2(store.get("blocks.mlp.b_in"), l));
    w_out.push_back(slice3(store.get("blocks.mlp.w_out"), l));
    b_out.push_back(slice2(store.get("blocks.mlp.b_out"), l));
  }
  ln_f_gain = to_vec(store.get("ln_f.gain"));
  ln_f_bias = to_vec(store.get("ln_f.bias"));
  unembed = to_mat(store.get("unembed"));
}

Vec ref_softmax(const Vec& logits) {
  double max = logits[0];
  for (double v : logits) max = std::max(max, v);
  Vec out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

RefForwardResult ref_forward(const RefWeights& w, const std::vector<int>& tokens,
                             std::optional<featdesc::HookSite> capture, const RefClamp* clamp) {
  const featdesc::ModelConfig& cfg = w.config;
  const size_t T = tokens.size();
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t n_heads = static_cast<size_t>(cfg.n_heads);
  const size_t head_dim = d / n_heads;
  const bool ln_on = cfg.layernorm_enabled;

  Mat x(T, Vec(d));
  for (size_t t = 0; t < T; ++t) {
    for (size_t i = 0; i < d; ++i) {
      x[t][i] = w.embed_tokens[static_cast<size_t>(tokens[t])][i];
      if (cfg.positional == featdesc::PositionalScheme::Learned) {
        x[t][i] += w.embed_positions[t][i];
      }
    }
  }

  RefForwardResult result;

  auto apply_clamp_rows = [&](Mat& rows) {
    for (auto& row : rows) {
      if (clamp->sae) {
        row = ref_clamp(*clamp->sae, row, clamp->feature_index, clamp->value);
      } else {
        row[static_cast<size_t>(clamp->feature_index)] = clamp->value;
      }
    }
  };

  for (int l = 0; l < cfg.n_layers; ++l) {
    const size_t lu = static_cast<size_t>(l);
    // attention
    Mat q(T), k(T), v(T);
    for (size_t t = 0; t < T; ++t) {
      Vec h = layernorm(x[t], w.ln1_gain[lu], w.ln1_bias[lu], cfg.ln_epsilon, ln_on);
      q[t] = affine(h, w.w_q[lu], w.b_q[lu]);
      k[t] = affine(h, w.w_k[lu], w.b_k[lu]);
      v[t] = affine(h, w.w_v[lu], w.b_v[lu]);
    }
    for (size_t t = 0; t < T; ++t) {
      Vec mixed(d, 0.0);
      for (size_t head = 0; head < n_heads; ++head) {
        const size_t off = head * head_dim;
        Vec scores(t + 1, 0.0);
        for (size_t s = 0; s <= t; ++s) {
          for (size_t i = 0; i < head_dim; ++i) scores[s] += q[t][off + i] * k[s][off + i];
          scores[s] /= std::sqrt(static_cast<double>(head_dim));
        }
        Vec weights = ref_softmax(scores);
        for (size_t s = 0; s <= t; ++s) {
          for (size_t i = 0; i < head_dim; ++i) mixed[off + i] += weights[s] * v[s][off + i];
        }
      }
      Vec attn_out = affine(mixed, w.w_o[lu], w.b_o[lu]);
      for (size_t i = 0; i < d; ++i) x[t][i] += attn_out[i];
    }

    // MLP
    Mat mlp_hidden(T);
    for (size_t t = 0; t < T; ++t) {
      Vec h2 = layernorm(x[t], w.ln2_gain[lu], w.ln2_bias[lu], cfg.ln_epsilon, ln_on);
      Vec pre = affine(h2, w.w_in[lu], w.b_in[lu]);
      for (double& p : pre) p = gelu(p);
      mlp_hidden[t] = std::move(pre);
    }
    const featdesc::HookSite mlp_site{HookKind::MlpHidden, l};
    if (clamp && clamp->site == mlp_site) apply_clamp_rows(mlp_hidden);
    if (capture && *capture == mlp_site) result.hidden = mlp_hidden;
    for (size_t t = 0; t < T; ++t) {
      Vec out = affine(mlp_hidden[t], w.w_out[lu], w.b_out[lu]);
      for (size_t i = 0; i < d; ++i) x[t][i] += out[i];
    }

    const featdesc::HookSite res_site{HookKind::ResidualPost, l};
    if (clamp && clamp->site == res_site) apply_clamp_rows(x);
    if (capture && *capture == res_site) result.hidden = x;
  }

  result.logits.resize(T);
  for (size_t t = 0; t < T; ++t) {
    Vec fin = layernorm(x[t], w.ln_f_gain, w.ln_f_bias, cfg.ln_epsilon, ln_on);
    Vec logits(static_cast<size_t>(cfg.vocab_size), 0.0);
    for (size_t i = 0; i < d; ++i) {
      for (size_t j = 0; j < logits.size(); ++j) logits[j] += fin[i] * w.unembed[i][j];
    }
    result.logits[t] = std::move(logits);
  }
  return result;
}

std::vector<int> ref_greedy_decode(const RefWeights& w, std::vector<int> prompt, int steps,
                                   const RefClamp* clamp, int eos_id) {
  std::vector<int> generated;
  for (int s = 0; s < steps; ++s) {
    RefForwardResult fr = ref_forward(w, prompt, std::nullopt, clamp);
    const Vec& logits = fr.logits.back();
    int next = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[static_cast<size_t>(next)]) next = static_cast<int>(i);
    }
    generated.push_back(next);
    if (next == eos_id) break;
    prompt.push_back(next);
  }
  return generated;
}

}  // namespace reference
