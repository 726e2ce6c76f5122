#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace featdesc {

enum class HookKind { ResidualPost, MlpHidden };

std::string hook_kind_name(HookKind kind);
HookKind hook_kind_from_name(const std::string& name);

struct HookSite {
  HookKind kind = HookKind::ResidualPost;
  int layer = 0;

  bool operator==(const HookSite&) const = default;
  std::string to_string() const;
};

enum class SaeActivation { ReLU, JumpReLU, TopK };

std::string sae_activation_name(SaeActivation a);
SaeActivation sae_activation_from_name(const std::string& name);

/// Invertible featurizer over a d-dimensional hidden space: either the
/// identity (neuron basis, k = d) or a sparse autoencoder with k latents.
/// Immutable after construction; all operations are pure.
class Featurizer {
 public:
  static Featurizer neuron(int dim);
  static Featurizer sae(Eigen::MatrixXd w_enc,   // d x k
                        Eigen::VectorXd b_enc,   // k
                        Eigen::MatrixXd w_dec,   // k x d
                        Eigen::VectorXd b_dec,   // d
                        SaeActivation activation,
                        Eigen::VectorXd jumprelu_threshold = {},  // k, JumpReLU only
                        int top_k = 0);                           // TopK only

  /// Load SAE weights from a named-tensor container (tensors W_enc, b_enc,
  /// W_dec, b_dec and, for JumpReLU, threshold).
  static Featurizer load_sae(const std::string& path, SaeActivation activation, int top_k = 0);
  void save_sae(const std::string& path) const;

  bool is_neuron() const { return is_neuron_; }
  int input_dim() const { return d_; }
  int feature_count() const { return k_; }
  SaeActivation activation() const { return activation_; }

  /// Feature activations for one hidden vector.
  Eigen::VectorXd encode(const Eigen::VectorXd& v) const;

  /// Row-wise encode of a [T, d] matrix of hidden vectors -> [T, k].
  Eigen::MatrixXd encode_rows(const Eigen::MatrixXd& hidden) const;

  /// The feature direction v_f: basis vector for neurons, decoder row for
  /// SAEs. The shared decoder bias is not part of any single feature's
  /// direction and is excluded.
  Eigen::VectorXd feature_vector(int index) const;

  /// Encoder column for `index` (the encoder-based direction variant).
  Eigen::VectorXd encoder_vector(int index) const;

  /// Clamp the feature's activation to m: v + (m - encode(v)[index]) * v_f.
  /// Leaves the SAE reconstruction error untouched; negative m is allowed.
  Eigen::VectorXd clamp_edit(const Eigen::VectorXd& v, int index, double m) const;

  const Eigen::MatrixXd& w_dec() const { return w_dec_; }
  const Eigen::MatrixXd& w_enc() const { return w_enc_; }

 private:
  bool is_neuron_ = true;
  int d_ = 0;
  int k_ = 0;
  SaeActivation activation_ = SaeActivation::ReLU;
  Eigen::MatrixXd w_enc_;  // d x k
  Eigen::VectorXd b_enc_;  // k
  Eigen::MatrixXd w_dec_;  // k x d
  Eigen::VectorXd b_dec_;  // d
  Eigen::VectorXd threshold_;  // k
  int top_k_ = 0;

  void check_input(const Eigen::VectorXd& v) const;
  Eigen::VectorXd apply_activation(Eigen::VectorXd pre) const;
};

/// Identity of a feature across the pipeline.
struct FeatureRef {
  std::string model_id;
  HookSite site;
  std::string featurizer_id;  // "neuron" or an sae_id from the manifest
  int index = 0;

  bool operator==(const FeatureRef&) const = default;
  bool operator<(const FeatureRef& o) const;
  std::string to_string() const;
};

/// One manifest entry: where an SAE lives and how to interpret it.
struct FeaturizerManifestEntry {
  std::string file;
  HookSite site;
  SaeActivation activation = SaeActivation::ReLU;
  int k = 0;
  int top_k = 0;
};

/// Loaded set of featurizers addressable by id. "neuron" is implicit and
/// resolves to the identity featurizer for the requested site dimension.
class FeaturizerSet {
 public:
  /// Parse a manifest JSON {"saes": {id: {file, site, activation, k[, top_k]}}}
  /// and load every referenced weight container. Relative file paths resolve
  /// against the manifest's directory.
  static FeaturizerSet load(const std::string& manifest_path);

  void add(const std::string& id, HookSite site, Featurizer featurizer);

  bool has(const std::string& id) const { return entries_.count(id) > 0; }
  const Featurizer& featurizer(const std::string& id) const;
  HookSite site(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  struct Entry {
    HookSite site;
    std::shared_ptr<const Featurizer> featurizer;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace featdesc
