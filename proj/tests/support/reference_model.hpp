#pragma once

// Test-only reference implementation of the toy transformer forward pass,
// written with plain loops over std::vector<double>. It shares the tensor
// file loader with the library but none of the math, so it can serve as an
// independent oracle for the engine.

#include <optional>
#include <string>
#include <vector>

#include "featdesc/featurizer.hpp"
#include "featdesc/model.hpp"

namespace reference {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;  // row major

struct RefSae {
  Mat w_enc;  // d x k
  Vec b_enc;  // k
  Mat w_dec;  // k x d
  Vec b_dec;  // d
  std::string activation;  // "relu" | "jumprelu" | "topk"
  Vec threshold;
  int top_k = 0;
};

RefSae load_ref_sae(const std::string& path, const std::string& activation, int top_k = 0);

Vec ref_encode(const RefSae& sae, const Vec& v);
Vec ref_feature_vector(const RefSae& sae, int index);
Vec ref_clamp(const RefSae& sae, const Vec& v, int index, double m);

struct RefClamp {
  featdesc::HookSite site;
  const RefSae* sae = nullptr;  // nullptr means neuron basis
  int feature_index = 0;
  double value = 0.0;
};

struct RefWeights {
  explicit RefWeights(const std::string& weights_path, const featdesc::ModelConfig& config);

  featdesc::ModelConfig config;
  Mat embed_tokens, embed_positions;
  std::vector<Mat> w_q, w_k, w_v, w_o, w_in, w_out;
  std::vector<Vec> b_q, b_k, b_v, b_o, b_in, b_out;
  std::vector<Vec> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Vec ln_f_gain, ln_f_bias;
  Mat unembed;
};

struct RefForwardResult {
  Mat hidden;  // at the capture site, after any clamp
  Mat logits;
};

RefForwardResult ref_forward(const RefWeights& w, const std::vector<int>& tokens,
                             std::optional<featdesc::HookSite> capture = std::nullopt,
                             const RefClamp* clamp = nullptr);

Vec ref_softmax(const Vec& logits);

/// Step-by-step greedy decoding using ref_forward only.
std::vector<int> ref_greedy_decode(const RefWeights& w, std::vector<int> prompt, int steps,
                                   const RefClamp* clamp = nullptr, int eos_id = -1);

}  // namespace reference
