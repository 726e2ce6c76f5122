#pragma once

#include <map>
#include <string>
#include <vector>

#include "featdesc/corpus.hpp"
#include "featdesc/featurizer.hpp"
#include "featdesc/model.hpp"

namespace featdesc {

/// Per-sequence token-level activations of one feature.
struct ActivationRecord {
  std::string doc_id;
  std::vector<int> tokens;
  std::vector<double> activations;
  double max_activation = 0.0;
};

struct QuantileSample {
  int band = 0;  // 0..3 for (0-25], (25-50], (50-75], (75-100] of corpus max
  ActivationRecord record;
};

struct FeatureActivationSummary {
  FeatureRef feature;
  std::vector<ActivationRecord> top_records;  // max_activation desc, doc_id asc
  std::vector<QuantileSample> quantile_samples;
  double activation_density = 0.0;  // fraction of corpus tokens with activation > 0
  double corpus_max = 0.0;
  int64_t total_tokens = 0;
  int64_t positive_tokens = 0;
};

struct IndexParams {
  int k_top = 5;
  int samples_per_band = 2;
  uint64_t seed = 0;
  int workers = 1;
};

/// Evidence store for MaxAct and the dead-feature baseline. Built in one
/// streaming pass; per-feature memory stays bounded by k_top plus a small
/// sample pool regardless of corpus size. Shards merge associatively, so
/// parallel and serial builds agree.
class ActivationIndex {
 public:
  static ActivationIndex build(const Model& model, const FeaturizerSet& featurizers,
                               const std::vector<FeatureRef>& features,
                               const std::vector<CorpusSequence>& corpus,
                               const IndexParams& params = {});

  bool has(const FeatureRef& feature) const { return summaries_.count(feature) > 0; }

  /// Throws when the feature was not indexed.
  const FeatureActivationSummary& summary(const FeatureRef& feature) const;

  /// First min(n, available) records, already in canonical order.
  std::vector<ActivationRecord> top_sequences(const FeatureRef& feature, int n) const;

  bool is_dead(const FeatureRef& feature, double threshold) const;

  std::vector<FeatureRef> features() const;

  void save_jsonl(const std::string& path) const;
  static ActivationIndex load_jsonl(const std::string& path);

  void put(FeatureActivationSummary summary);  // used by the loader and tests

 private:
  std::map<FeatureRef, FeatureActivationSummary> summaries_;
};

}  // namespace featdesc
