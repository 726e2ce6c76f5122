#include "featdesc/featurizer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"
#include "featdesc/tensor_store.hpp"

namespace featdesc {

std::string hook_kind_name(HookKind kind) {
  return kind == HookKind::ResidualPost ? "ResidualPost" : "MlpHidden";
}

HookKind hook_kind_from_name(const std::string& name) {
  if (name == "ResidualPost") return HookKind::ResidualPost;
  if (name == "MlpHidden") return HookKind::MlpHidden;
  raise(ErrorCode::ParseError, "unknown hook kind '" + name + "'");
}

std::string HookSite::to_string() const {
  return hook_kind_name(kind) + "/" + std::to_string(layer);
}

std::string sae_activation_name(SaeActivation a) {
  switch (a) {
    case SaeActivation::ReLU: return "relu";
    case SaeActivation::JumpReLU: return "jumprelu";
    case SaeActivation::TopK: return "topk";
  }
  return "relu";
}

SaeActivation sae_activation_from_name(const std::string& name) {
  if (name == "relu") return SaeActivation::ReLU;
  if (name == "jumprelu") return SaeActivation::JumpReLU;
  if (name == "topk") return SaeActivation::TopK;
  raise(ErrorCode::ParseError, "unknown SAE activation '" + name + "'");
}

Featurizer Featurizer::neuron(int dim) {
  if (dim <= 0) raise(ErrorCode::Precondition, "neuron featurizer needs positive dimension");
  Featurizer f;
  f.is_neuron_ = true;
  f.d_ = dim;
  f.k_ = dim;
  return f;
}

Featurizer Featurizer::sae(Eigen::MatrixXd w_enc, Eigen::VectorXd b_enc,
                           Eigen::MatrixXd w_dec, Eigen::VectorXd b_dec,
                           SaeActivation activation,
                           Eigen::VectorXd jumprelu_threshold, int top_k) {
  const int d = static_cast<int>(w_enc.rows());
  const int k = static_cast<int>(w_enc.cols());
  if (w_dec.rows() != k || w_dec.cols() != d) {
    raise(ErrorCode::ShapeMismatch, "decoder must be the transpose shape of the encoder");
  }
  if (b_enc.size() != k || b_dec.size() != d) {
    raise(ErrorCode::ShapeMismatch, "SAE bias dimensions do not match weights");
  }
  if (activation == SaeActivation::JumpReLU) {
    if (jumprelu_threshold.size() != k) {
      raise(ErrorCode::ShapeMismatch, "JumpReLU needs one threshold per feature");
    }
    if ((jumprelu_threshold.array() < 0.0).any()) {
      raise(ErrorCode::Precondition, "JumpReLU thresholds must be non-negative");
    }
  }
  if (activation == SaeActivation::TopK && (top_k <= 0 || top_k > k)) {
    raise(ErrorCode::Precondition, "TopK K must be in [1, k]");
  }

  Featurizer f;
  f.is_neuron_ = false;
  f.d_ = d;
  f.k_ = k;
  f.activation_ = activation;
  f.w_enc_ = std::move(w_enc);
  f.b_enc_ = std::move(b_enc);
  f.w_dec_ = std::move(w_dec);
  f.b_dec_ = std::move(b_dec);
  f.threshold_ = std::move(jumprelu_threshold);
  f.top_k_ = top_k;
  return f;
}

Featurizer Featurizer::load_sae(const std::string& path, SaeActivation activation, int top_k) {
  TensorStore store = TensorStore::load(path);
  Eigen::MatrixXd w_enc = store.matrix("W_enc");
  Eigen::MatrixXd w_dec = store.matrix("W_dec");
  Eigen::VectorXd b_enc = store.vector("b_enc");
  Eigen::VectorXd b_dec = store.vector("b_dec");
  Eigen::VectorXd threshold;
  if (activation == SaeActivation::JumpReLU) threshold = store.vector("threshold");
  return sae(std::move(w_enc), std::move(b_enc), std::move(w_dec), std::move(b_dec),
             activation, std::move(threshold), top_k);
}

void Featurizer::save_sae(const std::string& path) const {
  if (is_neuron_) raise(ErrorCode::Precondition, "neuron featurizer has no weights to save");
  TensorStore store;
  store.put("W_enc", TensorStore::from_matrix(w_enc_));
  store.put("b_enc", TensorStore::from_vector(b_enc_));
  store.put("W_dec", TensorStore::from_matrix(w_dec_));
  store.put("b_dec", TensorStore::from_vector(b_dec_));
  if (activation_ == SaeActivation::JumpReLU) {
    store.put("threshold", TensorStore::from_vector(threshold_));
  }
  store.save(path);
}

void Featurizer::check_input(const Eigen::VectorXd& v) const {
  if (v.size() != d_) {
    raise(ErrorCode::DimensionMismatch,
          "hidden vector has dimension " + std::to_string(v.size()) + ", featurizer expects " +
              std::to_string(d_));
  }
}

Eigen::VectorXd Featurizer::apply_activation(Eigen::VectorXd pre) const {
  switch (activation_) {
    case SaeActivation::ReLU:
      return pre.cwiseMax(0.0);
    case SaeActivation::JumpReLU: {
      // zero at or below the per-feature threshold, identity above
      Eigen::VectorXd out = pre;
      for (int i = 0; i < out.size(); ++i) {
        if (!(out[i] > threshold_[i])) out[i] = 0.0;
      }
      return out;
    }
    case SaeActivation::TopK: {
      Eigen::VectorXd relu = pre.cwiseMax(0.0);
      std::vector<int> order(static_cast<size_t>(relu.size()));
      std::iota(order.begin(), order.end(), 0);
      // largest first; equal values keep the lower index
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return relu[a] > relu[b]; });
      Eigen::VectorXd out = Eigen::VectorXd::Zero(relu.size());
      for (int i = 0; i < top_k_ && i < static_cast<int>(order.size()); ++i) {
        out[order[static_cast<size_t>(i)]] = relu[order[static_cast<size_t>(i)]];
      }
      return out;
    }
  }
  return pre;
}

Eigen::VectorXd Featurizer::encode(const Eigen::VectorXd& v) const {
  check_input(v);
  if (is_neuron_) return v;
  Eigen::VectorXd pre = w_enc_.transpose() * v + b_enc_;
  return apply_activation(std::move(pre));
}

Eigen::MatrixXd Featurizer::encode_rows(const Eigen::MatrixXd& hidden) const {
  if (hidden.cols() != d_) {
    raise(ErrorCode::DimensionMismatch, "hidden matrix width does not match featurizer input");
  }
  if (is_neuron_) return hidden;
  // row-by-row through encode() so batched and single-vector activations are
  // bit-identical
  Eigen::MatrixXd out(hidden.rows(), k_);
  for (Eigen::Index r = 0; r < hidden.rows(); ++r) {
    out.row(r) = encode(hidden.row(r).transpose()).transpose();
  }
  return out;
}

Eigen::VectorXd Featurizer::feature_vector(int index) const {
  if (index < 0 || index >= k_) {
    raise(ErrorCode::IndexOutOfRange,
          "feature index " + std::to_string(index) + " out of range [0, " + std::to_string(k_) + ")");
  }
  if (is_neuron_) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(d_);
    e[index] = 1.0;
    return e;
  }
  return w_dec_.row(index).transpose();
}

Eigen::VectorXd Featurizer::encoder_vector(int index) const {
  if (index < 0 || index >= k_) {
    raise(ErrorCode::IndexOutOfRange, "feature index out of range");
  }
  if (is_neuron_) return feature_vector(index);
  return w_enc_.col(index);
}

Eigen::VectorXd Featurizer::clamp_edit(const Eigen::VectorXd& v, int index, double m) const {
  check_input(v);
  const Eigen::VectorXd direction = feature_vector(index);  // range-checks index
  const double a = encode(v)[index];
  return v + (m - a) * direction;
}

bool FeatureRef::operator<(const FeatureRef& o) const {
  return std::tie(model_id, site.kind, site.layer, featurizer_id, index) <
         std::tie(o.model_id, o.site.kind, o.site.layer, o.featurizer_id, o.index);
}

std::string FeatureRef::to_string() const {
  return model_id + "/" + site.to_string() + "/" + featurizer_id + "/" + std::to_string(index);
}

FeaturizerSet FeaturizerSet::load(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) raise(ErrorCode::IoError, "cannot open featurizer manifest '" + manifest_path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(ErrorCode::ParseError, "featurizer manifest is not valid JSON");

  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  FeaturizerSet set;
  for (auto& [id, entry] : j.at("saes").items()) {
    HookSite site{hook_kind_from_name(entry.at("site").at("kind").get<std::string>()),
                  entry.at("site").at("layer").get<int>()};
    const SaeActivation activation =
        sae_activation_from_name(entry.at("activation").get<std::string>());
    const int top_k = entry.value("top_k", 0);
    std::filesystem::path file = entry.at("file").get<std::string>();
    if (file.is_relative()) file = base / file;
    Featurizer f = Featurizer::load_sae(file.string(), activation, top_k);
    const int declared_k = entry.at("k").get<int>();
    if (f.feature_count() != declared_k) {
      raise(ErrorCode::ShapeMismatch, "manifest declares k=" + std::to_string(declared_k) +
                                          " for '" + id + "' but weights have k=" +
                                          std::to_string(f.feature_count()));
    }
    set.add(id, site, std::move(f));
  }
  return set;
}

void FeaturizerSet::add(const std::string& id, HookSite site, Featurizer featurizer) {
  entries_[id] = Entry{site, std::make_shared<const Featurizer>(std::move(featurizer))};
}

const Featurizer& FeaturizerSet::featurizer(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    raise(ErrorCode::ConfigError, "unknown featurizer id '" + id + "'");
  }
  return *it->second.featurizer;
}

HookSite FeaturizerSet::site(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    raise(ErrorCode::ConfigError, "unknown featurizer id '" + id + "'");
  }
  return it->second.site;
}

std::vector<std::string> FeaturizerSet::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

}  // namespace featdesc
