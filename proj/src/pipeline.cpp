#include "featdesc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"
#include "featdesc/json_io.hpp"
#include "featdesc/rng.hpp"
#include "featdesc/toml.hpp"

namespace featdesc {

namespace fs = std::filesystem;

double estimate_flops(const CostModel& cost, Method method, const MethodParams& params) {
  switch (method) {
    case Method::MaxAct:
      return 6.0 * cost.n_nonembed_params * cost.corpus_tokens;
    case Method::VocabProj:
      return 2.0 * cost.vocab_size * cost.d_model * cost.feature_count;
    case Method::TokenChange:
      return 6.0 * cost.n_nonembed_params *
             (2.0 * static_cast<double>(params.k_prompts) *
              static_cast<double>(params.prompt_len)) *
             cost.feature_count;
    default:
      raise(ErrorCode::Precondition, "no cost model for method " + method_name(method));
  }
}

namespace {

std::string resolve_path(const fs::path& base, const std::string& value) {
  if (value.empty()) return value;
  fs::path p = value;
  if (p.is_absolute()) return p.string();
  return (base / p).lexically_normal().string();
}

std::string iso8601_utc(int64_t epoch_seconds) {
  std::time_t t = static_cast<std::time_t>(epoch_seconds);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

RoleEndpoint endpoint_from(const nlohmann::json& j) {
  RoleEndpoint ep;
  ep.url = j.value("url", "");
  ep.model = j.value("model", "");
  ep.api_key_env = j.value("api_key_env", "");
  return ep;
}

/// Run fn(0..n-1) on a bounded pool; results land in submission order.
template <typename Fn>
void parallel_for(size_t n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto drain = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min<int>(workers, static_cast<int>(n));
  for (int w = 0; w < count; ++w) pool.emplace_back(drain);
  for (auto& t : pool) t.join();
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
  nlohmann::json j = toml::parse_file(path);
  const fs::path base = fs::path(path).parent_path();

  PipelineConfig c;
  {
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    c.config_hash = fnv1a64(buf.str());
  }

  const auto& m = j.at("model");
  c.model.model_id = m.value("model_id", "model");
  c.weights_path = resolve_path(base, m.at("weights").get<std::string>());
  c.tokenizer_path = resolve_path(base, m.at("tokenizer").get<std::string>());
  c.model.n_layers = m.at("n_layers").get<int>();
  c.model.d_model = m.at("d_model").get<int>();
  c.model.d_mlp = m.at("d_mlp").get<int>();
  c.model.n_heads = m.at("n_heads").get<int>();
  c.model.vocab_size = m.at("vocab_size").get<int>();
  c.model.ln_epsilon = m.value("ln_epsilon", 1e-5);
  c.model.positional = m.value("positional", std::string("learned")) == "none"
                           ? PositionalScheme::None
                           : PositionalScheme::Learned;
  c.model.layernorm_enabled = m.value("layernorm_enabled", true);

  c.featurizer_manifest = resolve_path(base, j.at("featurizers").at("manifest").get<std::string>());
  c.corpus_path = resolve_path(base, j.at("corpus").at("path").get<std::string>());
  c.corpus_window = j.at("corpus").value("window", 128);

  if (j.contains("index")) {
    c.index_k_top = j["index"].value("k_top", 5);
    c.index_samples_per_band = j["index"].value("samples_per_band", 2);
    c.dead_threshold = j["index"].value("dead_threshold", 0.0);
  }
  if (j.contains("methods")) {
    c.methods.t_vocabproj = j["methods"].value("t_vocabproj", 50);
    c.methods.t_tokenchange = j["methods"].value("t_tokenchange", 20);
    c.methods.k_prompts = j["methods"].value("k_prompts", 32);
    c.methods.prompt_len = j["methods"].value("prompt_len", 32);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    c.eval.n_sentences = e.value("n_sentences", 5);
    if (e.contains("open_ended_prompts")) {
      c.eval.open_ended_prompts = e["open_ended_prompts"].get<std::vector<std::string>>();
    }
    c.eval.max_gen_tokens = e.value("max_gen_tokens", 25);
    if (e.contains("kl_targets")) {
      c.eval.kl_targets = e["kl_targets"].get<std::vector<double>>();
    }
    c.eval.calibration_tolerance = e.value("calibration_tolerance", 0.01);
  }
  if (c.eval.n_sentences < 1 || c.eval.open_ended_prompts.empty()) {
    raise(ErrorCode::ConfigError, "eval needs at least one sentence and one prompt");
  }
  for (double t : c.eval.kl_targets) {
    if (!(t > 0.0)) raise(ErrorCode::ConfigError, "KL targets must be positive");
  }

  if (j.contains("gateway")) {
    const auto& g = j["gateway"];
    c.gateway.backend = g.value("backend", "mock");
    c.gateway.cache_dir = resolve_path(base, g.value("cache_dir", ""));
    c.gateway.retry_max_attempts = g.value("retry_max_attempts", 3);
    c.gateway.retry_backoff_ms = g.value("retry_backoff_ms", 250);
    c.gateway.rate_limit_per_minute = g.value("rate_limit_per_minute", 60);
    c.gateway.mock_judge_policy = g.value("mock_judge_policy", std::string("overlap")) == "random"
                                      ? MockJudgePolicy::Random
                                      : MockJudgePolicy::Overlap;
    c.gateway.mock_seed = g.value("mock_seed", 0);
    if (g.contains("explainer")) c.gateway.explainer = endpoint_from(g["explainer"]);
    if (g.contains("sentence_generator")) {
      c.gateway.sentence_generator = endpoint_from(g["sentence_generator"]);
    }
    if (g.contains("judge")) c.gateway.judge = endpoint_from(g["judge"]);
  }

  if (j.contains("output")) {
    c.output_dir = resolve_path(base, j["output"].value("dir", "runs/out"));
    c.created_at = j["output"].value("created_at", "");
  }
  if (j.contains("run")) {
    c.seed = static_cast<uint64_t>(j["run"].value("seed", 0ll));
    c.workers = j["run"].value("workers", 1);
    c.prompts_dir = resolve_path(base, j["run"].value("prompts_dir", ""));
  }

  for (const std::string& file : {c.weights_path, c.tokenizer_path, c.featurizer_manifest,
                                   c.corpus_path}) {
    if (!fs::exists(file)) {
      raise(ErrorCode::ConfigError, "configured file does not exist: " + file);
    }
  }
  return c;
}

std::vector<std::string> expand_feature_spec_files(const std::vector<std::string>& specs) {
  std::vector<std::string> out;
  for (const std::string& spec : specs) {
    if (spec.empty()) continue;
    if (spec[0] != '@') {
      out.push_back(spec);
      continue;
    }
    std::ifstream in(spec.substr(1));
    if (!in) raise(ErrorCode::IoError, "cannot open feature list file '" + spec.substr(1) + "'");
    std::string line;
    while (std::getline(in, line)) {
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const size_t b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const size_t e = line.find_last_not_of(" \t\r");
      out.push_back(line.substr(b, e - b + 1));
    }
  }
  return out;
}

Pipeline::Pipeline(PipelineConfig config)
    : config_(std::move(config)),
      tokenizer_(Tokenizer::load(config_.tokenizer_path)),
      featurizers_(FeaturizerSet::load(config_.featurizer_manifest)),
      prompts_(PromptLibrary::from_dir(config_.prompts_dir)) {
  model_ = std::make_unique<Model>(Model::load(config_.weights_path, config_.model));
  gateway_ = std::make_unique<Gateway>(config_.gateway);

  if (!config_.created_at.empty()) {
    created_at_ = config_.created_at;
  } else if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    created_at_ = iso8601_utc(std::strtoll(epoch, nullptr, 10));
  } else {
    created_at_ = iso8601_utc(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
  }
  fs::create_directories(config_.output_dir);
}

std::string Pipeline::index_path() const {
  return (fs::path(config_.output_dir) / "index.jsonl").string();
}
std::string Pipeline::descriptions_path() const {
  return (fs::path(config_.output_dir) / "descriptions.jsonl").string();
}
std::string Pipeline::evals_path() const {
  return (fs::path(config_.output_dir) / "evals.jsonl").string();
}
std::string Pipeline::revival_path() const {
  return (fs::path(config_.output_dir) / "revival.jsonl").string();
}

std::vector<CorpusSequence> Pipeline::load_corpus() const {
  return tokenize_corpus(read_corpus_jsonl(config_.corpus_path), tokenizer_,
                         config_.corpus_window);
}

DescriberContext Pipeline::describer_context() {
  return DescriberContext{gateway_.get(), &prompts_, &tokenizer_};
}

std::pair<HookSite, std::shared_ptr<const Featurizer>> Pipeline::resolve(
    const FeatureRef& feature) const {
  if (feature.featurizer_id == "neuron") {
    model_->check_site(feature.site);
    return {feature.site,
            std::make_shared<const Featurizer>(Featurizer::neuron(model_->site_dim(feature.site)))};
  }
  const HookSite site = featurizers_.site(feature.featurizer_id);
  return {site, std::make_shared<const Featurizer>(featurizers_.featurizer(feature.featurizer_id))};
}

std::vector<FeatureRef> Pipeline::parse_features(const std::vector<std::string>& raw) const {
  std::vector<std::string> specs = expand_feature_spec_files(raw);
  std::vector<FeatureRef> features;
  std::set<FeatureRef> seen;

  auto parse_indices = [](const std::string& text) {
    std::vector<int> out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (part.empty()) continue;
      const size_t dash = part.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoi(part));
      } else {
        const int lo = std::stoi(part.substr(0, dash));
        const int hi = std::stoi(part.substr(dash + 1));
        if (hi < lo) raise(ErrorCode::Precondition, "descending index range '" + part + "'");
        for (int i = lo; i <= hi; ++i) out.push_back(i);
      }
    }
    return out;
  };

  for (const std::string& spec : specs) {
    std::vector<std::string> parts;
    std::istringstream in(spec);
    std::string part;
    while (std::getline(in, part, ':')) parts.push_back(part);

    FeatureRef base;
    base.model_id = config_.model.model_id;
    int width = 0;
    std::string index_text;
    if (parts.size() == 3 && parts[0] == "neuron") {
      base.featurizer_id = "neuron";
      const std::string& site = parts[1];
      if (site.rfind("mlp", 0) == 0) {
        base.site = HookSite{HookKind::MlpHidden, std::stoi(site.substr(3))};
      } else if (site.rfind("res", 0) == 0) {
        base.site = HookSite{HookKind::ResidualPost, std::stoi(site.substr(3))};
      } else {
        raise(ErrorCode::Precondition, "bad neuron site '" + site + "' (use mlpN or resN)");
      }
      model_->check_site(base.site);
      width = model_->site_dim(base.site);
      index_text = parts[2];
    } else if (parts.size() == 2) {
      base.featurizer_id = parts[0];
      base.site = featurizers_.site(parts[0]);
      width = featurizers_.featurizer(parts[0]).feature_count();
      index_text = parts[1];
    } else {
      raise(ErrorCode::Precondition, "bad feature spec '" + spec + "'");
    }

    for (int index : parse_indices(index_text)) {
      if (index < 0 || index >= width) {
        raise(ErrorCode::IndexOutOfRange,
              "feature index " + std::to_string(index) + " out of range in '" + spec + "'");
      }
      FeatureRef f = base;
      f.index = index;
      if (seen.insert(f).second) features.push_back(f);
    }
  }
  std::sort(features.begin(), features.end());
  return features;
}

void Pipeline::append_manifest(const std::string& command, const nlohmann::json& extra) {
  const std::string path = (fs::path(config_.output_dir) / "run_manifest.json").string();
  nlohmann::json all = nlohmann::json::array();
  {
    std::ifstream in(path);
    if (in) {
      nlohmann::json parsed = nlohmann::json::parse(in, nullptr, false);
      if (parsed.is_array()) all = parsed;
    }
  }
  nlohmann::json entry{{"command", command},
                       {"config_hash", hex64(config_.config_hash)},
                       {"seed", config_.seed},
                       {"created_at", created_at_},
                       {"template_versions", prompts_.versions()}};
  entry.update(extra);
  all.push_back(entry);
  std::ofstream out(path, std::ios::trunc);
  out << all.dump(2) << "\n";
}

int Pipeline::cmd_index(const std::vector<std::string>& feature_specs, bool force) {
  const std::string path = index_path();
  if (fs::exists(path) && !force) {
    std::cerr << "index file already exists: " << path << " (use --force to overwrite)\n";
    return 2;
  }
  const std::vector<FeatureRef> features = parse_features(feature_specs);
  if (features.empty()) {
    std::cerr << "no features selected\n";
    return 2;
  }
  IndexParams params;
  params.k_top = config_.index_k_top;
  params.samples_per_band = config_.index_samples_per_band;
  params.seed = config_.seed;
  params.workers = config_.workers;
  ActivationIndex index =
      ActivationIndex::build(*model_, featurizers_, features, load_corpus(), params);
  index.save_jsonl(path);
  append_manifest("index", {{"features", features.size()}, {"store", path}});
  std::cout << "indexed " << features.size() << " features -> " << path << "\n";
  return 0;
}

Pipeline::DescribeOutcome Pipeline::describe_feature(
    const FeatureRef& feature, const std::vector<Method>& methods, const ActivationIndex* index,
    const std::vector<CorpusSequence>& corpus,
    const std::map<std::pair<FeatureRef, Method>, Description>& existing) {
  DescribeOutcome outcome;
  DescriberContext ctx = describer_context();
  auto [site, featurizer] = resolve(feature);

  auto fail = [&](Method m, const std::string& why) {
    outcome.failures.push_back(feature.to_string() + " " + method_name(m) + ": " + why);
  };
  auto wants = [&](Method m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };

  const bool needs_maxact = wants(Method::MaxAct) || wants(Method::EnsembleRaw);
  const bool needs_vocab = wants(Method::VocabProj) || wants(Method::EnsembleRaw);
  const bool needs_change = wants(Method::TokenChange) || wants(Method::EnsembleRaw);

  // evidence gathering (shared between single methods and the raw ensemble)
  std::optional<FeatureActivationSummary> summary;
  if (needs_maxact) {
    if (index == nullptr || !index->has(feature)) {
      for (Method m : {Method::MaxAct, Method::EnsembleRaw}) {
        if (wants(m)) fail(m, "feature missing from the activation index (run `index` first)");
      }
    } else {
      summary = index->summary(feature);
    }
  }

  std::optional<TokenScoreLists> vocab_lists;
  if (needs_vocab) {
    try {
      vocab_lists = vocab_projection_tokens(*model_, *featurizer, feature.index,
                                            config_.methods.t_vocabproj, tokenizer_);
    } catch (const Error& e) {
      for (Method m : {Method::VocabProj, Method::EnsembleRaw}) {
        if (wants(m)) fail(m, e.what());
      }
    }
  }

  std::optional<TokenScoreLists> change_lists;
  std::optional<double> change_clamp;
  if (needs_change) {
    try {
      std::vector<std::vector<int>> open;
      for (const std::string& p : config_.eval.open_ended_prompts) {
        open.push_back(tokenizer_.encode(p));
      }
      // the evidence clamp strength follows the evaluation protocol: the
      // positive-sign value at KL 0.5
      change_clamp = calibrate_clamp(*model_, featurizer, site, feature.index, open, 0.5, +1,
                                     config_.eval.calibration_tolerance);
      std::vector<std::vector<int>> windows = sample_prompt_windows(
          corpus, config_.methods.k_prompts, config_.methods.prompt_len,
          derive_seed(config_.seed, "tokenchange-prompts"));
      change_lists =
          token_change_scores(*model_, featurizer, site, feature.index, windows, *change_clamp,
                              config_.methods.t_tokenchange, tokenizer_);
    } catch (const Error& e) {
      for (Method m : {Method::TokenChange, Method::EnsembleRaw}) {
        if (wants(m)) fail(m, e.what());
      }
    }
  }

  std::map<Method, Description> produced;
  auto run_method = [&](Method m, auto&& fn) {
    if (!wants(m)) return;
    try {
      Description d = fn();
      produced[m] = d;
      outcome.descriptions.push_back(std::move(d));
    } catch (const Error& e) {
      fail(m, e.what());
    }
  };

  if (summary) {
    run_method(Method::MaxAct, [&] { return describe_maxact(ctx, *summary); });
  }
  if (vocab_lists) {
    run_method(Method::VocabProj,
               [&] { return describe_vocabproj(ctx, feature, *vocab_lists); });
  }
  if (change_lists) {
    run_method(Method::TokenChange,
               [&] { return describe_tokenchange(ctx, feature, *change_lists); });
  }
  if (wants(Method::EnsembleRaw)) {
    if (summary && vocab_lists && change_lists) {
      run_method(Method::EnsembleRaw, [&] {
        std::vector<EvidenceSection> sections;
        sections.push_back(EvidenceSection{Method::MaxAct,
                                           render_maxact_evidence(*summary, tokenizer_),
                                           maxact_evidence_json(*summary)});
        sections.push_back(EvidenceSection{
            Method::VocabProj,
            "Promoted tokens:\n" + render_token_score_lines(vocab_lists->top) +
                "Suppressed tokens:\n" + render_token_score_lines(vocab_lists->bottom),
            token_lists_to_json(*vocab_lists)});
        sections.push_back(EvidenceSection{
            Method::TokenChange,
            "Logits increased most:\n" + render_token_score_lines(change_lists->top) +
                "Logits decreased most:\n" + render_token_score_lines(change_lists->bottom),
            token_lists_to_json(*change_lists)});
        return ensemble_raw(ctx, feature, std::move(sections));
      });
    }
  }
  if (wants(Method::EnsembleConcat)) {
    std::vector<Description> members;
    bool missing = false;
    for (Method m : {Method::MaxAct, Method::VocabProj, Method::TokenChange}) {
      auto it = produced.find(m);
      if (it != produced.end()) {
        members.push_back(it->second);
        continue;
      }
      auto stored = existing.find({feature, m});
      if (stored != existing.end()) {
        members.push_back(stored->second);
        continue;
      }
      missing = true;
      fail(Method::EnsembleConcat,
           "member description " + method_name(m) + " not available (describe it first)");
      break;
    }
    if (!missing) {
      run_method(Method::EnsembleConcat, [&] { return ensemble_concat(members); });
    }
  }
  return outcome;
}

int Pipeline::cmd_describe(const std::vector<std::string>& feature_specs,
                           const std::vector<Method>& methods_in) {
  std::vector<Method> methods = methods_in;
  if (methods.empty()) {
    methods = {Method::MaxAct, Method::VocabProj, Method::TokenChange, Method::EnsembleRaw,
               Method::EnsembleConcat};
  }
  const std::vector<FeatureRef> features = parse_features(feature_specs);
  if (features.empty()) {
    std::cerr << "no features selected\n";
    return 2;
  }

  std::optional<ActivationIndex> index;
  if (fs::exists(index_path())) index = ActivationIndex::load_jsonl(index_path());

  std::map<std::pair<FeatureRef, Method>, Description> existing;
  if (fs::exists(descriptions_path())) {
    std::ifstream in(descriptions_path());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Description d = description_from_json(nlohmann::json::parse(line));
      existing[{d.feature, d.method}] = d;
    }
  }

  const std::vector<CorpusSequence> corpus = load_corpus();

  std::vector<DescribeOutcome> outcomes(features.size());
  parallel_for(features.size(), config_.workers, [&](size_t i) {
    try {
      outcomes[i] = describe_feature(features[i], methods, index ? &*index : nullptr, corpus,
                                     existing);
    } catch (const std::exception& e) {
      outcomes[i].failures.push_back(features[i].to_string() + ": " + e.what());
    }
  });

  std::ofstream out(descriptions_path(), std::ios::app);
  size_t written = 0;
  std::vector<std::string> failures;
  for (const DescribeOutcome& o : outcomes) {
    for (const Description& d : o.descriptions) {
      nlohmann::json j = description_to_json(d);
      j["created_at"] = created_at_;
      out << j.dump() << "\n";
      ++written;
    }
    failures.insert(failures.end(), o.failures.begin(), o.failures.end());
  }
  out.close();

  for (const std::string& f : failures) std::cerr << "describe failed: " << f << "\n";
  append_manifest("describe", {{"features", features.size()},
                               {"records_written", written},
                               {"failures", failures.size()},
                               {"store", descriptions_path()}});
  std::cout << "wrote " << written << " descriptions -> " << descriptions_path() << "\n";
  return failures.empty() ? 0 : 1;
}

namespace {

struct EvalTask {
  FeatureRef feature;
  Method method;
  std::string text;
};

struct EvalRow {
  std::optional<nlohmann::json> record;
  std::optional<std::string> failure;
};

void print_summary(const std::map<Method, std::pair<int, int>>& tallies) {
  // pass rate with a 95% normal-approximation interval
  for (const auto& [method, tally] : tallies) {
    const int n = tally.second;
    const double p = n == 0 ? 0.0 : static_cast<double>(tally.first) / n;
    const double ci = n == 0 ? 0.0 : 1.96 * std::sqrt(p * (1.0 - p) / n);
    std::printf("%-14s pass rate %.3f +- %.3f  (n=%d)\n", method_name(method).c_str(), p, ci, n);
  }
}

}  // namespace

int Pipeline::cmd_eval(const std::vector<std::string>& feature_specs,
                       const std::vector<Method>& methods_in, const std::string& metric) {
  if (metric != "input" && metric != "output") {
    std::cerr << "metric must be 'input' or 'output'\n";
    return 2;
  }
  const std::vector<FeatureRef> features = parse_features(feature_specs);
  if (features.empty()) {
    std::cerr << "no features selected\n";
    return 2;
  }
  if (!fs::exists(descriptions_path())) {
    std::cerr << "no description store at " << descriptions_path() << " (run `describe` first)\n";
    return 2;
  }

  std::set<Method> wanted(methods_in.begin(), methods_in.end());
  std::set<FeatureRef> feature_set(features.begin(), features.end());
  std::vector<EvalTask> tasks;
  {
    std::ifstream in(descriptions_path());
    std::string line;
    std::map<std::pair<FeatureRef, Method>, std::string> latest;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Description d = description_from_json(nlohmann::json::parse(line));
      if (!feature_set.count(d.feature)) continue;
      if (!wanted.empty() && !wanted.count(d.method)) continue;
      latest[{d.feature, d.method}] = d.text;
    }
    for (const auto& [key, text] : latest) {
      tasks.push_back(EvalTask{key.first, key.second, text});
    }
  }
  if (tasks.empty()) {
    std::cerr << "warning: no descriptions matched the requested features/methods\n";
    print_summary({});
    append_manifest("eval", {{"metric", metric}, {"records_written", 0}});
    return 0;
  }

  std::optional<ActivationIndex> index;
  if (fs::exists(index_path())) index = ActivationIndex::load_jsonl(index_path());

  std::vector<EvalRow> rows(tasks.size());
  parallel_for(tasks.size(), config_.workers, [&](size_t i) {
    const EvalTask& task = tasks[i];
    const uint64_t task_seed = derive_seed(config_.seed, "eval", fnv1a64(task.feature.to_string()),
                                           static_cast<uint64_t>(task.method));
    try {
      auto [site, featurizer] = resolve(task.feature);
      nlohmann::json record;
      record["feature"] = feature_to_json(task.feature);
      record["description_method"] = method_name(task.method);
      record["metric"] = metric;
      record["seeds"] = {{"run", config_.seed}, {"task", task_seed}};
      record["timestamps"] = {{"created_at", created_at_}};

      if (metric == "input") {
        SentenceSets sets =
            gen_eval_sentences(*gateway_, prompts_, task.text, config_.eval.n_sentences);
        InputEvalResult r = input_eval(*model_, *featurizer, site, task.feature.index, tokenizer_,
                                       sets.activating, sets.neutral);
        record["payload"] = {{"mean_activating", r.mean_activating},
                             {"mean_neutral", r.mean_neutral},
                             {"activating_max", r.activating_max},
                             {"neutral_max", r.neutral_max},
                             {"activating", sets.activating},
                             {"neutral", sets.neutral}};
        record["pass"] = r.pass;
      } else {
        // distractors: uniform over the same featurizer, never the target,
        // never each other, and never dead when an index is available
        const int width = task.feature.featurizer_id == "neuron"
                              ? model_->site_dim(site)
                              : featurizers_.featurizer(task.feature.featurizer_id).feature_count();
        if (width < 3) raise(ErrorCode::Precondition, "featurizer too small for distractors");
        Rng rng(derive_seed(task_seed, "distractors"));
        std::vector<FeatureRef> chosen;
        int guard = 0;
        while (chosen.size() < 2 && guard++ < 200) {
          FeatureRef candidate = task.feature;
          candidate.index = static_cast<int>(rng.below(static_cast<uint64_t>(width)));
          if (candidate == task.feature) continue;
          if (std::find(chosen.begin(), chosen.end(), candidate) != chosen.end()) continue;
          if (index && index->has(candidate) && index->is_dead(candidate, config_.dead_threshold)) {
            continue;
          }
          chosen.push_back(candidate);
        }
        if (chosen.size() < 2) {
          raise(ErrorCode::Precondition, "could not sample two live distractors");
        }

        EvalConfig eval_config = config_.eval;
        eval_config.seed = task_seed;
        SteeredTextSet target =
            steered_generations(*model_, featurizer, site, task.feature, eval_config, tokenizer_);
        SteeredTextSet d1 =
            steered_generations(*model_, featurizer, site, chosen[0], eval_config, tokenizer_);
        SteeredTextSet d2 =
            steered_generations(*model_, featurizer, site, chosen[1], eval_config, tokenizer_);
        OutputEvalResult r =
            output_eval(*gateway_, prompts_, task.text, target, d1, d2, task_seed);
        record["payload"] = {{"judge_choice", r.judge_choice},
                             {"presentation_order", r.presentation_order},
                             {"distractors",
                              {feature_to_json(chosen[0]), feature_to_json(chosen[1])}},
                             {"clamp_values", target.clamp_values},
                             {"target_texts", target.texts}};
        record["pass"] = r.pass;
      }
      rows[i].record = std::move(record);
    } catch (const Error& e) {
      rows[i].failure = task.feature.to_string() + " " + method_name(task.method) + ": " + e.what();
    }
  });

  std::ofstream out(evals_path(), std::ios::app);
  std::map<Method, std::pair<int, int>> tallies;
  size_t written = 0;
  std::vector<std::string> failures;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failure) {
      failures.push_back(*rows[i].failure);
      continue;
    }
    const nlohmann::json& record = *rows[i].record;
    out << record.dump() << "\n";
    ++written;
    auto& tally = tallies[tasks[i].method];
    tally.first += record.at("pass").get<bool>() ? 1 : 0;
    tally.second += 1;
  }
  out.close();

  for (const std::string& f : failures) std::cerr << "eval failed: " << f << "\n";
  print_summary(tallies);
  append_manifest("eval", {{"metric", metric},
                           {"records_written", written},
                           {"failures", failures.size()},
                           {"store", evals_path()}});
  return failures.empty() ? 0 : 1;
}

int Pipeline::cmd_revive(const std::vector<std::string>& feature_specs) {
  const std::vector<FeatureRef> features = parse_features(feature_specs);
  if (features.empty()) {
    std::cerr << "no features selected\n";
    return 2;
  }
  if (!fs::exists(index_path())) {
    std::cerr << "no index at " << index_path() << " (run `index` first)\n";
    return 2;
  }
  ActivationIndex index = ActivationIndex::load_jsonl(index_path());
  const std::vector<CorpusSequence> corpus = load_corpus();

  struct Row {
    std::optional<nlohmann::json> record;
    std::optional<std::string> failure;
    bool skipped = false;
  };
  std::vector<Row> rows(features.size());

  parallel_for(features.size(), config_.workers, [&](size_t i) {
    const FeatureRef& feature = features[i];
    try {
      if (!index.has(feature)) {
        raise(ErrorCode::Precondition, "feature missing from the index");
      }
      if (!index.is_dead(feature, config_.dead_threshold)) {
        rows[i].skipped = true;
        return;
      }
      auto [site, featurizer] = resolve(feature);
      const uint64_t feature_seed =
          derive_seed(config_.seed, "revival", fnv1a64(feature.to_string()));

      RevivalEvidence evidence;
      evidence.vocabproj = vocab_projection_tokens(*model_, *featurizer, feature.index,
                                                   config_.methods.t_vocabproj, tokenizer_);
      try {
        std::vector<std::vector<int>> open;
        for (const std::string& p : config_.eval.open_ended_prompts) {
          open.push_back(tokenizer_.encode(p));
        }
        const double m = calibrate_clamp(*model_, featurizer, site, feature.index, open, 0.5, +1,
                                         config_.eval.calibration_tolerance);
        std::vector<std::vector<int>> windows = sample_prompt_windows(
            corpus, config_.methods.k_prompts, config_.methods.prompt_len,
            derive_seed(config_.seed, "tokenchange-prompts"));
        evidence.tokenchange =
            token_change_scores(*model_, featurizer, site, feature.index, windows, m,
                                config_.methods.t_tokenchange, tokenizer_);
      } catch (const Error&) {
        evidence.has_tokenchange = false;  // projection-only pool
      }

      DescriberContext ctx = describer_context();
      RevivalPlan plan = build_revival_plan(ctx, feature, evidence, feature_seed);
      RevivalResult result = revive(*model_, featurizer, site, feature, plan, tokenizer_);

      nlohmann::json record;
      record["feature"] = feature_to_json(feature);
      record["activated"] = result.activated;
      record["witness"] = {{"kind", result.witness_kind},
                           {"text", result.witness_text},
                           {"tokens", result.witness_tokens}};
      record["witness_activation"] = result.witness_activation;
      record["candidates_tried"] = result.candidates_tried;
      record["seed"] = feature_seed;
      record["plan"] = {{"pool_size", plan.token_pool.size()},
                        {"sentences", plan.llm_sentences.size()},
                        {"combos", plan.combo_prompts.size()},
                        {"degraded", plan.degraded}};
      record["timestamps"] = {{"created_at", created_at_}};
      rows[i].record = std::move(record);
    } catch (const Error& e) {
      rows[i].failure = feature.to_string() + ": " + e.what();
    }
  });

  std::ofstream out(revival_path(), std::ios::app);
  int dead = 0, revived = 0;
  std::map<std::string, int> witness_kinds;
  size_t written = 0;
  std::vector<std::string> failures;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failure) {
      failures.push_back(*rows[i].failure);
      continue;
    }
    if (rows[i].skipped) {
      std::cout << "skipped " << features[i].to_string() << ": not dead on the index corpus\n";
      continue;
    }
    const nlohmann::json& record = *rows[i].record;
    out << record.dump() << "\n";
    ++written;
    ++dead;
    if (record.at("activated").get<bool>()) {
      ++revived;
      ++witness_kinds[record.at("witness").at("kind").get<std::string>()];
    }
  }
  out.close();

  for (const std::string& f : failures) std::cerr << "revive failed: " << f << "\n";
  if (dead > 0) {
    std::printf("revived %d of %d dead features (%.1f%%)\n", revived, dead,
                100.0 * revived / dead);
    for (const auto& [kind, count] : witness_kinds) {
      std::printf("  witness %-10s %d\n", kind.c_str(), count);
    }
  } else {
    std::cout << "no dead features among the selection\n";
  }
  append_manifest("revive", {{"records_written", written},
                             {"failures", failures.size()},
                             {"store", revival_path()}});
  return failures.empty() ? 0 : 1;
}

}  // namespace featdesc
