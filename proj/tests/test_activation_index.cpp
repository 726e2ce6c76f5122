#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "featdesc/activation_index.hpp"
#include "featdesc/error.hpp"
#include "featdesc/fixture.hpp"
#include "featdesc/json_io.hpp"
#include "featdesc/rng.hpp"
#include "support/test_env.hpp"

using namespace featdesc;

namespace {

const FeaturizerSet& fixture_featurizers() {
  static FeaturizerSet set = FeaturizerSet::load(testenv::shared_fixture().manifest_path);
  return set;
}

std::vector<CorpusSequence> fixture_corpus(int limit = 0) {
  const auto& fx = testenv::shared_fixture();
  std::vector<CorpusSequence> seqs =
      tokenize_corpus(read_corpus_jsonl(fx.corpus_path), testenv::shared_tokenizer(), 128);
  if (limit > 0 && static_cast<int>(seqs.size()) > limit) seqs.resize(static_cast<size_t>(limit));
  return seqs;
}

FeatureRef main_feature(int index) {
  return FeatureRef{"toy-2l", HookSite{HookKind::ResidualPost, 1}, "sae_main", index};
}

FeatureRef detect_feature(int index) {
  return FeatureRef{"toy-2l", HookSite{HookKind::ResidualPost, 0}, "sae_detect", index};
}

/// Exhaustive oracle: re-scan the whole corpus for the feature and sort.
std::vector<ActivationRecord> brute_force_records(const FeatureRef& feature,
                                                  const std::vector<CorpusSequence>& corpus) {
  const Model& model = testenv::shared_model();
  const FeaturizerSet& set = fixture_featurizers();
  const Featurizer& fz = set.featurizer(feature.featurizer_id);
  const HookSite site = set.site(feature.featurizer_id);
  std::vector<ActivationRecord> records;
  for (const CorpusSequence& seq : corpus) {
    ForwardResult fr = model.forward_capture(seq.tokens, site);
    ActivationRecord r;
    r.doc_id = seq.doc_id;
    r.tokens = seq.tokens;
    double max_a = -1e300;
    for (Eigen::Index t = 0; t < fr.hidden.rows(); ++t) {
      const double a = fz.encode(fr.hidden.row(t).transpose())[feature.index];
      r.activations.push_back(a);
      max_a = std::max(max_a, a);
    }
    r.max_activation = max_a;
    records.push_back(std::move(r));
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const ActivationRecord& a, const ActivationRecord& b) {
                     if (a.max_activation != b.max_activation) {
                       return a.max_activation > b.max_activation;
                     }
                     return a.doc_id < b.doc_id;
                   });
  return records;
}

}  // namespace

TEST_CASE("top records match the exhaustive oracle on a small corpus") {
  std::vector<CorpusSequence> corpus = fixture_corpus(60);
  std::vector<FeatureRef> features{main_feature(0), main_feature(3), main_feature(17)};
  ActivationIndex index =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), features, corpus);

  for (const FeatureRef& f : features) {
    std::vector<ActivationRecord> oracle = brute_force_records(f, corpus);
    std::vector<ActivationRecord> got = index.top_sequences(f, 5);
    REQUIRE(got.size() == 5);
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].doc_id == oracle[i].doc_id);
      CHECK(got[i].max_activation == oracle[i].max_activation);
    }
    // density equals the exhaustive positive-position count
    int64_t positives = 0, total = 0;
    for (const ActivationRecord& r : oracle) {
      total += static_cast<int64_t>(r.activations.size());
      for (double a : r.activations) positives += a > 0.0 ? 1 : 0;
    }
    const FeatureActivationSummary& s = index.summary(f);
    CHECK(s.positive_tokens == positives);
    CHECK(s.activation_density * static_cast<double>(total) ==
          doctest::Approx(static_cast<double>(positives)).epsilon(1e-9));
    CHECK(s.corpus_max == oracle.front().max_activation);
  }
}

TEST_CASE("a feature firing only on one token is topped by sequences holding it") {
  // detector 0 fires on 'q' only; build a tiny corpus where exactly one doc
  // contains q and confirm the exhaustive scan agrees
  const Tokenizer& tok = testenv::shared_tokenizer();
  std::vector<CorpusSequence> corpus;
  for (int i = 0; i < 20; ++i) {
    CorpusSequence seq;
    seq.doc_id = "doc-" + std::to_string(100 + i);
    seq.tokens = tok.encode(i == 7 ? "a calm q deal." : "a calm plain deal.");
    corpus.push_back(std::move(seq));
  }
  std::vector<FeatureRef> features{detect_feature(0)};
  ActivationIndex index =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), features, corpus);
  std::vector<ActivationRecord> top = index.top_sequences(detect_feature(0), 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].doc_id == "doc-107");
  CHECK(top[0].max_activation > 0.0);
  CHECK(index.summary(detect_feature(0)).positive_tokens == 1);
}

TEST_CASE("zero-encoder feature has zero density and zero corpus max") {
  std::vector<CorpusSequence> corpus = fixture_corpus(30);
  std::vector<FeatureRef> features{detect_feature(6)};
  ActivationIndex index =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), features, corpus);
  const FeatureActivationSummary& s = index.summary(detect_feature(6));
  CHECK(s.activation_density == 0.0);
  CHECK(s.corpus_max == 0.0);
  CHECK(index.is_dead(detect_feature(6), 0.0));
}

TEST_CASE("k_top caps at the corpus size") {
  std::vector<CorpusSequence> corpus = fixture_corpus(3);
  ActivationIndex index = ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                                 {main_feature(1)}, corpus);
  CHECK(index.summary(main_feature(1)).top_records.size() == 3);
}

TEST_CASE("top_sequences boundary and tie rules") {
  ActivationIndex index;
  FeatureActivationSummary s;
  s.feature = main_feature(9);
  for (const char* doc : {"doc-b", "doc-a", "doc-c"}) {
    ActivationRecord r;
    r.doc_id = doc;
    r.max_activation = 1.7;
    s.top_records.push_back(r);
  }
  ActivationRecord high;
  high.doc_id = "doc-z";
  high.max_activation = 2.0;
  s.top_records.push_back(high);
  std::sort(s.top_records.begin(), s.top_records.end(),
            [](const ActivationRecord& a, const ActivationRecord& b) {
              if (a.max_activation != b.max_activation) return a.max_activation > b.max_activation;
              return a.doc_id < b.doc_id;
            });
  index.put(s);

  CHECK(index.top_sequences(main_feature(9), 0).empty());
  std::vector<ActivationRecord> got = index.top_sequences(main_feature(9), 3);
  REQUIRE(got.size() == 3);
  CHECK(got[0].doc_id == "doc-z");
  CHECK(got[1].doc_id == "doc-a");  // tie at 1.7 broken by doc_id
  CHECK(got[2].doc_id == "doc-b");

  CHECK_THROWS_AS(index.top_sequences(main_feature(10), 1), Error);
}

TEST_CASE("is_dead follows the threshold strictly") {
  ActivationIndex index;
  FeatureActivationSummary s;
  s.feature = main_feature(2);
  s.corpus_max = 0.3;
  index.put(s);
  CHECK_FALSE(index.is_dead(main_feature(2), 0.0));
  CHECK(index.is_dead(main_feature(2), 0.3));
}

TEST_CASE("a feature firing only on an out-of-corpus token is dead until the token appears") {
  const Tokenizer& tok = testenv::shared_tokenizer();
  std::vector<CorpusSequence> corpus;
  for (int i = 0; i < 10; ++i) {
    corpus.push_back(CorpusSequence{"doc-" + std::to_string(i), tok.encode("a mild plan of oak.")});
  }
  const FeatureRef z = detect_feature(1);  // fires on 'z' only
  ActivationIndex dead_index =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), {z}, corpus);
  CHECK(dead_index.is_dead(z, 0.0));

  corpus.push_back(CorpusSequence{"doc-z", tok.encode("a zebra plan.")});
  ActivationIndex live_index =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), {z}, corpus);
  CHECK_FALSE(live_index.is_dead(z, 0.0));
}

TEST_CASE("permuting corpus order keeps the same top-record set") {
  std::vector<CorpusSequence> corpus = fixture_corpus(40);
  std::vector<FeatureRef> features{main_feature(5)};
  ActivationIndex a =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), features, corpus);

  Rng rng(55);
  rng.shuffle(corpus);
  ActivationIndex b =
      ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), features, corpus);

  auto ids = [](const std::vector<ActivationRecord>& rs) {
    std::vector<std::string> out;
    for (const auto& r : rs) out.push_back(r.doc_id);
    return out;
  };
  CHECK(ids(a.top_sequences(main_feature(5), 5)) == ids(b.top_sequences(main_feature(5), 5)));
}

TEST_CASE("parallel scan equals the serial scan") {
  std::vector<CorpusSequence> corpus = fixture_corpus(50);
  std::vector<FeatureRef> features{main_feature(0), main_feature(11), detect_feature(7)};
  IndexParams serial;
  IndexParams parallel;
  parallel.workers = 4;
  ActivationIndex a = ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                             features, corpus, serial);
  ActivationIndex b = ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                             features, corpus, parallel);
  testenv::ScratchDir dir("index_parallel");
  a.save_jsonl(dir.file("a.jsonl"));
  b.save_jsonl(dir.file("b.jsonl"));
  std::ifstream fa(dir.file("a.jsonl")), fb(dir.file("b.jsonl"));
  std::string sa{std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>()};
  std::string sb{std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>()};
  CHECK(sa == sb);
}

TEST_CASE("index persistence round trip") {
  std::vector<CorpusSequence> corpus = fixture_corpus(25);
  ActivationIndex index = ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                                 {main_feature(4), detect_feature(0)}, corpus);
  testenv::ScratchDir dir("index_io");
  index.save_jsonl(dir.file("index.jsonl"));
  ActivationIndex loaded = ActivationIndex::load_jsonl(dir.file("index.jsonl"));
  loaded.save_jsonl(dir.file("again.jsonl"));

  std::ifstream fa(dir.file("index.jsonl")), fb(dir.file("again.jsonl"));
  std::string sa{std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>()};
  std::string sb{std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>()};
  CHECK(sa == sb);
  CHECK(loaded.summary(main_feature(4)).top_records.size() ==
        index.summary(main_feature(4)).top_records.size());
}

TEST_CASE("build rejects an empty corpus and an unknown site") {
  CHECK_THROWS_AS(ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                         {main_feature(0)}, {}),
                  Error);
  FeatureRef bad{"toy-2l", HookSite{HookKind::ResidualPost, 9}, "neuron", 0};
  std::vector<CorpusSequence> corpus = fixture_corpus(5);
  CHECK_THROWS_AS(ActivationIndex::build(testenv::shared_model(), fixture_featurizers(), {bad},
                                         corpus),
                  Error);
}

TEST_CASE("quantile samples sit in their bands") {
  std::vector<CorpusSequence> corpus = fixture_corpus(120);
  ActivationIndex index = ActivationIndex::build(testenv::shared_model(), fixture_featurizers(),
                                                 {main_feature(7)}, corpus);
  const FeatureActivationSummary& s = index.summary(main_feature(7));
  REQUIRE(s.corpus_max > 0.0);
  int per_band[4] = {0, 0, 0, 0};
  for (const QuantileSample& q : s.quantile_samples) {
    REQUIRE(q.band >= 0);
    REQUIRE(q.band <= 3);
    ++per_band[q.band];
    const double frac = q.record.max_activation / s.corpus_max;
    CHECK(frac > 0.25 * q.band);
    CHECK(frac <= 0.25 * (q.band + 1));
  }
  for (int b = 0; b < 4; ++b) CHECK(per_band[b] <= 2);
}
