#include "featdesc/activation_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"
#include "featdesc/json_io.hpp"
#include "featdesc/rng.hpp"

namespace featdesc {

namespace {

bool record_before(const ActivationRecord& a, const ActivationRecord& b) {
  if (a.max_activation != b.max_activation) return a.max_activation > b.max_activation;
  return a.doc_id < b.doc_id;
}

struct PoolEntry {
  uint64_t hash = 0;
  ActivationRecord record;
};

/// Shard-local accumulation for one feature. Merging two builders gives the
/// same result as feeding both shards into one, which is what makes the
/// parallel scan equal to the serial one.
struct SummaryBuilder {
  std::vector<ActivationRecord> top;     // bounded at k_top
  std::vector<PoolEntry> pool;           // bounded sample pool, lowest hash kept
  double corpus_max = 0.0;
  int64_t total_tokens = 0;
  int64_t positive_tokens = 0;

  static constexpr int kPoolCap = 32;

  void add(const IndexParams& params, uint64_t feature_salt, ActivationRecord record) {
    corpus_max = std::max(corpus_max, record.max_activation);
    total_tokens += static_cast<int64_t>(record.activations.size());
    for (double a : record.activations) {
      if (a > 0.0) ++positive_tokens;
    }

    if (record.max_activation > 0.0) {
      PoolEntry entry{derive_seed(params.seed, "index-pool", feature_salt,
                                  fnv1a64(record.doc_id)),
                      record};
      pool.push_back(std::move(entry));
      std::sort(pool.begin(), pool.end(),
                [](const PoolEntry& a, const PoolEntry& b) { return a.hash < b.hash; });
      if (static_cast<int>(pool.size()) > kPoolCap) pool.resize(kPoolCap);
    }

    top.push_back(std::move(record));
    std::sort(top.begin(), top.end(), record_before);
    if (static_cast<int>(top.size()) > params.k_top) top.resize(static_cast<size_t>(params.k_top));
  }

  void merge(const IndexParams& params, const SummaryBuilder& other) {
    corpus_max = std::max(corpus_max, other.corpus_max);
    total_tokens += other.total_tokens;
    positive_tokens += other.positive_tokens;
    top.insert(top.end(), other.top.begin(), other.top.end());
    std::sort(top.begin(), top.end(), record_before);
    if (static_cast<int>(top.size()) > params.k_top) top.resize(static_cast<size_t>(params.k_top));
    pool.insert(pool.end(), other.pool.begin(), other.pool.end());
    std::sort(pool.begin(), pool.end(),
              [](const PoolEntry& a, const PoolEntry& b) { return a.hash < b.hash; });
    if (static_cast<int>(pool.size()) > kPoolCap) pool.resize(kPoolCap);
  }

  FeatureActivationSummary finalize(const IndexParams& params, FeatureRef feature) const {
    FeatureActivationSummary s;
    s.feature = std::move(feature);
    s.top_records = top;
    s.corpus_max = corpus_max;
    s.total_tokens = total_tokens;
    s.positive_tokens = positive_tokens;
    s.activation_density =
        total_tokens == 0 ? 0.0
                          : static_cast<double>(positive_tokens) / static_cast<double>(total_tokens);
    if (corpus_max > 0.0) {
      int taken[4] = {0, 0, 0, 0};
      for (const PoolEntry& entry : pool) {  // already in hash order
        const double frac = entry.record.max_activation / corpus_max;
        int band = static_cast<int>(std::ceil(frac * 4.0)) - 1;
        band = std::clamp(band, 0, 3);
        if (taken[band] >= params.samples_per_band) continue;
        ++taken[band];
        s.quantile_samples.push_back(QuantileSample{band, entry.record});
      }
      std::stable_sort(s.quantile_samples.begin(), s.quantile_samples.end(),
                       [](const QuantileSample& a, const QuantileSample& b) {
                         return a.band < b.band;
                       });
    }
    return s;
  }
};

}  // namespace

nlohmann::json feature_to_json(const FeatureRef& f) {
  return {{"model", f.model_id},
          {"site", {{"kind", hook_kind_name(f.site.kind)}, {"layer", f.site.layer}}},
          {"featurizer", f.featurizer_id},
          {"index", f.index}};
}

FeatureRef feature_from_json(const nlohmann::json& j) {
  FeatureRef f;
  f.model_id = j.at("model").get<std::string>();
  f.site.kind = hook_kind_from_name(j.at("site").at("kind").get<std::string>());
  f.site.layer = j.at("site").at("layer").get<int>();
  f.featurizer_id = j.at("featurizer").get<std::string>();
  f.index = j.at("index").get<int>();
  return f;
}

nlohmann::json record_to_json(const ActivationRecord& r) {
  return {{"doc_id", r.doc_id},
          {"tokens", r.tokens},
          {"activations", r.activations},
          {"max_activation", r.max_activation}};
}

ActivationRecord record_from_json(const nlohmann::json& j) {
  ActivationRecord r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.activations = j.at("activations").get<std::vector<double>>();
  r.max_activation = j.at("max_activation").get<double>();
  return r;
}

ActivationIndex ActivationIndex::build(const Model& model, const FeaturizerSet& featurizers,
                                       const std::vector<FeatureRef>& features,
                                       const std::vector<CorpusSequence>& corpus,
                                       const IndexParams& params) {
  if (corpus.empty()) raise(ErrorCode::EmptyInput, "corpus is empty");
  if (features.empty()) raise(ErrorCode::EmptyInput, "no features requested");

  // group requested features by featurizer so each sequence is encoded once
  // per featurizer and forwarded once per site
  struct Group {
    HookSite site;
    const Featurizer* featurizer;
    std::vector<int> feature_indices;
    std::vector<size_t> output_slots;
  };
  std::map<std::string, Group> groups;
  std::map<int, Featurizer> neuron_featurizers;  // per-call, one per distinct width
  std::vector<FeatureRef> canonical(features);
  for (size_t slot = 0; slot < canonical.size(); ++slot) {
    const FeatureRef& f = canonical[slot];
    const Featurizer* fz = nullptr;
    HookSite site = f.site;
    if (f.featurizer_id == "neuron") {
      const int dim = model.site_dim(site);
      auto it = neuron_featurizers.find(dim);
      if (it == neuron_featurizers.end()) {
        it = neuron_featurizers.emplace(dim, Featurizer::neuron(dim)).first;
      }
      fz = &it->second;
    } else {
      fz = &featurizers.featurizer(f.featurizer_id);
      site = featurizers.site(f.featurizer_id);
    }
    model.check_site(site);
    if (fz->input_dim() != model.site_dim(site)) {
      raise(ErrorCode::DimensionMismatch,
            "featurizer '" + f.featurizer_id + "' does not match its hook site dimension");
    }
    if (f.index < 0 || f.index >= fz->feature_count()) {
      raise(ErrorCode::IndexOutOfRange, "feature index out of range for " + f.to_string());
    }
    const std::string group_key = f.featurizer_id + "@" + site.to_string();
    Group& g = groups[group_key];
    g.site = site;
    g.featurizer = fz;
    g.feature_indices.push_back(f.index);
    g.output_slots.push_back(slot);
  }

  const int workers = std::max(1, params.workers);
  std::vector<std::vector<SummaryBuilder>> shard_builders(
      static_cast<size_t>(workers), std::vector<SummaryBuilder>(canonical.size()));

  auto scan_range = [&](int worker, size_t begin, size_t end) {
    std::vector<SummaryBuilder>& builders = shard_builders[static_cast<size_t>(worker)];
    for (size_t si = begin; si < end; ++si) {
      const CorpusSequence& seq = corpus[si];
      for (const auto& [key, group] : groups) {
        ForwardResult fr = model.forward_capture(seq.tokens, group.site);
        Eigen::MatrixXd acts = group.featurizer->encode_rows(fr.hidden);
        for (size_t gi = 0; gi < group.feature_indices.size(); ++gi) {
          const int col = group.feature_indices[gi];
          ActivationRecord record;
          record.doc_id = seq.doc_id;
          record.tokens = seq.tokens;
          record.activations.resize(static_cast<size_t>(acts.rows()));
          double max_a = -std::numeric_limits<double>::infinity();
          for (Eigen::Index t = 0; t < acts.rows(); ++t) {
            record.activations[static_cast<size_t>(t)] = acts(t, col);
            max_a = std::max(max_a, acts(t, col));
          }
          record.max_activation = max_a;
          builders[group.output_slots[gi]].add(params, fnv1a64(canonical[group.output_slots[gi]].to_string()),
                                               std::move(record));
        }
      }
    }
  };

  if (workers == 1) {
    scan_range(0, 0, corpus.size());
  } else {
    std::vector<std::thread> threads;
    const size_t per = (corpus.size() + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const size_t begin = static_cast<size_t>(w) * per;
      const size_t end = std::min(corpus.size(), begin + per);
      if (begin >= end) break;
      threads.emplace_back(scan_range, w, begin, end);
    }
    for (auto& t : threads) t.join();
  }

  for (int w = 1; w < workers; ++w) {
    for (size_t slot = 0; slot < canonical.size(); ++slot) {
      shard_builders[0][slot].merge(params, shard_builders[static_cast<size_t>(w)][slot]);
    }
  }

  ActivationIndex index;
  for (size_t slot = 0; slot < canonical.size(); ++slot) {
    index.put(shard_builders[0][slot].finalize(params, canonical[slot]));
  }
  return index;
}

const FeatureActivationSummary& ActivationIndex::summary(const FeatureRef& feature) const {
  auto it = summaries_.find(feature);
  if (it == summaries_.end()) {
    raise(ErrorCode::Precondition, "feature not in index: " + feature.to_string());
  }
  return it->second;
}

std::vector<ActivationRecord> ActivationIndex::top_sequences(const FeatureRef& feature,
                                                             int n) const {
  const FeatureActivationSummary& s = summary(feature);
  const int take = std::clamp(n, 0, static_cast<int>(s.top_records.size()));
  return {s.top_records.begin(), s.top_records.begin() + take};
}

bool ActivationIndex::is_dead(const FeatureRef& feature, double threshold) const {
  return summary(feature).corpus_max <= threshold;
}

std::vector<FeatureRef> ActivationIndex::features() const {
  std::vector<FeatureRef> out;
  out.reserve(summaries_.size());
  for (const auto& [f, _] : summaries_) out.push_back(f);
  return out;
}

void ActivationIndex::put(FeatureActivationSummary summary) {
  summaries_[summary.feature] = std::move(summary);
}

void ActivationIndex::save_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::IoError, "cannot write index file '" + path + "'");
  for (const auto& [feature, s] : summaries_) {
    nlohmann::json j;
    j["feature"] = feature_to_json(feature);
    j["corpus_max"] = s.corpus_max;
    j["density"] = s.activation_density;
    j["total_tokens"] = s.total_tokens;
    j["positive_tokens"] = s.positive_tokens;
    nlohmann::json tops = nlohmann::json::array();
    for (const ActivationRecord& r : s.top_records) tops.push_back(record_to_json(r));
    j["top_records"] = tops;
    nlohmann::json samples = nlohmann::json::array();
    for (const QuantileSample& q : s.quantile_samples) {
      samples.push_back({{"band", q.band}, {"record", record_to_json(q.record)}});
    }
    j["quantile_samples"] = samples;
    out << j.dump() << "\n";
  }
}

ActivationIndex ActivationIndex::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open index file '" + path + "'");
  ActivationIndex index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) raise(ErrorCode::ParseError, "bad JSONL line in index file");
    FeatureActivationSummary s;
    s.feature = feature_from_json(j.at("feature"));
    s.corpus_max = j.at("corpus_max").get<double>();
    s.activation_density = j.at("density").get<double>();
    s.total_tokens = j.at("total_tokens").get<int64_t>();
    s.positive_tokens = j.at("positive_tokens").get<int64_t>();
    for (const auto& r : j.at("top_records")) s.top_records.push_back(record_from_json(r));
    for (const auto& q : j.at("quantile_samples")) {
      s.quantile_samples.push_back(
          QuantileSample{q.at("band").get<int>(), record_from_json(q.at("record"))});
    }
    index.put(std::move(s));
  }
  return index;
}

}  // namespace featdesc
