#include "featdesc/describers.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "featdesc/error.hpp"
#include "featdesc/json_io.hpp"

namespace featdesc {

namespace {

std::string format_score(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::vector<TokenScore> take_ranked(const Eigen::VectorXd& scores, int t, bool largest,
                                    const Tokenizer& tokenizer) {
  std::vector<int> order(static_cast<size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return largest ? scores[a] > scores[b] : scores[a] < scores[b];
    return a < b;  // ties by ascending token id
  });
  std::vector<TokenScore> out;
  out.reserve(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    const int id = order[static_cast<size_t>(i)];
    out.push_back(TokenScore{id, tokenizer.token_text(id), scores[id]});
  }
  return out;
}

std::string explainer_call(const DescriberContext& ctx, const PromptTemplate& tpl,
                           const std::map<std::string, std::string>& values,
                           std::string* prompt_hash) {
  ChatRequest request;
  request.role_class = RoleClass::Explainer;
  request.decoding.temperature = 0.0;
  request.messages = {{"user", render_prompt(tpl, values)}};
  *prompt_hash = ctx.gateway->request_hash(request);
  const std::string text = ctx.gateway->complete(request);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    raise(ErrorCode::ParseError, "explainer returned empty text");
  }
  return text;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::MaxAct: return "MaxAct";
    case Method::VocabProj: return "VocabProj";
    case Method::TokenChange: return "TokenChange";
    case Method::EnsembleRaw: return "EnsembleRaw";
    case Method::EnsembleConcat: return "EnsembleConcat";
  }
  return "MaxAct";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::MaxAct, Method::VocabProj, Method::TokenChange, Method::EnsembleRaw,
                   Method::EnsembleConcat}) {
    if (method_name(m) == name) return m;
  }
  raise(ErrorCode::ParseError, "unknown method '" + name + "'");
}

TokenScoreLists vocab_projection_tokens(const Model& model, const Featurizer& featurizer,
                                        int feature_index, int t, const Tokenizer& tokenizer,
                                        const VocabProjOptions& options) {
  if (t < 1) raise(ErrorCode::Precondition, "t must be at least 1");
  if (t > model.config().vocab_size) {
    raise(ErrorCode::Precondition, "t exceeds the vocabulary size");
  }
  const Eigen::VectorXd direction = options.encoder_direction
                                        ? featurizer.encoder_vector(feature_index)
                                        : featurizer.feature_vector(feature_index);
  const Eigen::VectorXd normed = model.apply_final_layernorm(direction);
  const Eigen::VectorXd scores = options.embedding_target
                                     ? Eigen::VectorXd(model.token_embedding() * normed)
                                     : Eigen::VectorXd(model.unembed().transpose() * normed);
  TokenScoreLists lists;
  lists.top = take_ranked(scores, t, /*largest=*/true, tokenizer);
  lists.bottom = take_ranked(scores, t, /*largest=*/false, tokenizer);
  return lists;
}

TokenScoreLists token_change_scores(const Model& model,
                                    const std::shared_ptr<const Featurizer>& featurizer,
                                    HookSite site, int feature_index,
                                    const std::vector<std::vector<int>>& prompts, double m, int t,
                                    const Tokenizer& tokenizer) {
  if (prompts.empty()) raise(ErrorCode::Precondition, "prompt set is empty");
  if (t < 1 || t > model.config().vocab_size) {
    raise(ErrorCode::Precondition, "t outside [1, vocab_size]");
  }
  Intervention iv{site, featurizer, feature_index, m};
  Eigen::VectorXd delta_sum = Eigen::VectorXd::Zero(model.config().vocab_size);
  int64_t positions = 0;
  for (const std::vector<int>& prompt : prompts) {
    ForwardResult base = model.forward_capture(prompt, site);
    ForwardResult steered = model.forward_capture(prompt, site, &iv);
    for (Eigen::Index p = 0; p < base.logits.rows(); ++p) {
      delta_sum += (steered.logits.row(p) - base.logits.row(p)).transpose();
      ++positions;
    }
  }
  const Eigen::VectorXd mean_delta = delta_sum / static_cast<double>(positions);
  TokenScoreLists lists;
  lists.top = take_ranked(mean_delta, t, /*largest=*/true, tokenizer);
  lists.bottom = take_ranked(mean_delta, t, /*largest=*/false, tokenizer);
  return lists;
}

std::string render_token_score_lines(const std::vector<TokenScore>& scores) {
  std::ostringstream os;
  for (const TokenScore& s : scores) {
    os << "- \"" << s.token_text << "\": " << format_score(s.score) << "\n";
  }
  return os.str();
}

std::string render_maxact_evidence(const FeatureActivationSummary& summary,
                                   const Tokenizer& tokenizer) {
  std::ostringstream os;
  auto render_record = [&](const ActivationRecord& r, const std::string& label) {
    os << label << " (doc " << r.doc_id << ", max activation " << format_score(r.max_activation)
       << "):\n";
    os << "  text: \"" << tokenizer.decode(r.tokens) << "\"\n";
    // token-activation pairs for the activating positions, strongest first
    std::vector<size_t> order;
    for (size_t i = 0; i < r.activations.size(); ++i) {
      if (r.activations[i] > 0.0) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return r.activations[a] > r.activations[b]; });
    if (order.empty()) {
      os << "  (no activating positions)\n";
      return;
    }
    size_t shown = 0;
    for (size_t i : order) {
      if (shown++ >= 12) break;
      os << "- \"" << tokenizer.token_text(r.tokens[i]) << "\": " << format_score(r.activations[i])
         << "\n";
    }
  };

  int n = 0;
  for (const ActivationRecord& r : summary.top_records) {
    render_record(r, "Example " + std::to_string(++n));
  }
  for (const QuantileSample& q : summary.quantile_samples) {
    render_record(q.record, "Band " + std::to_string(q.band + 1) + " sample");
  }
  return os.str();
}

nlohmann::json token_lists_to_json(const TokenScoreLists& lists) {
  auto side = [](const std::vector<TokenScore>& scores) {
    nlohmann::json arr = nlohmann::json::array();
    for (const TokenScore& s : scores) {
      arr.push_back({{"token_id", s.token_id}, {"token", s.token_text}, {"score", s.score}});
    }
    return arr;
  };
  return {{"top", side(lists.top)}, {"bottom", side(lists.bottom)}};
}

nlohmann::json maxact_evidence_json(const FeatureActivationSummary& summary) {
  nlohmann::json tops = nlohmann::json::array();
  for (const ActivationRecord& r : summary.top_records) tops.push_back(record_to_json(r));
  nlohmann::json samples = nlohmann::json::array();
  for (const QuantileSample& q : summary.quantile_samples) {
    samples.push_back({{"band", q.band}, {"record", record_to_json(q.record)}});
  }
  return {{"top_records", tops}, {"quantile_samples", samples}};
}

Description describe_maxact(const DescriberContext& ctx, const FeatureActivationSummary& summary) {
  if (summary.top_records.empty()) {
    raise(ErrorCode::Precondition, "summary has no records for " + summary.feature.to_string());
  }
  nlohmann::json evidence = maxact_evidence_json(summary);
  Description d;
  d.feature = summary.feature;
  d.method = Method::MaxAct;
  d.evidence = evidence;
  d.llm_model = ctx.gateway->role_model(RoleClass::Explainer);
  d.text = explainer_call(ctx, ctx.prompts->get("explainer_maxact"),
                          {{"EVIDENCE", render_maxact_evidence(summary, *ctx.tokenizer)}},
                          &d.prompt_hash);
  return d;
}

namespace {

Description describe_token_lists(const DescriberContext& ctx, const FeatureRef& feature,
                                 const TokenScoreLists& lists, Method method,
                                 const std::string& template_name) {
  if (lists.top.empty() || lists.bottom.empty()) {
    raise(ErrorCode::Precondition, "token score lists are empty");
  }
  Description d;
  d.feature = feature;
  d.method = method;
  d.evidence = token_lists_to_json(lists);
  d.llm_model = ctx.gateway->role_model(RoleClass::Explainer);
  d.text = explainer_call(ctx, ctx.prompts->get(template_name),
                          {{"TOP", render_token_score_lines(lists.top)},
                           {"BOTTOM", render_token_score_lines(lists.bottom)}},
                          &d.prompt_hash);
  return d;
}

}  // namespace

Description describe_vocabproj(const DescriberContext& ctx, const FeatureRef& feature,
                               const TokenScoreLists& lists) {
  return describe_token_lists(ctx, feature, lists, Method::VocabProj, "explainer_vocabproj");
}

Description describe_tokenchange(const DescriberContext& ctx, const FeatureRef& feature,
                                 const TokenScoreLists& lists) {
  return describe_token_lists(ctx, feature, lists, Method::TokenChange, "explainer_tokenchange");
}

Description ensemble_raw(const DescriberContext& ctx, const FeatureRef& feature,
                         std::vector<EvidenceSection> sections) {
  if (sections.size() < 2) {
    raise(ErrorCode::Precondition, "raw ensemble needs at least two member methods");
  }
  std::sort(sections.begin(), sections.end(),
            [](const EvidenceSection& a, const EvidenceSection& b) {
              return method_before(a.method, b.method);
            });
  std::ostringstream body;
  nlohmann::json raw_sections = nlohmann::json::array();
  Description d;
  for (const EvidenceSection& s : sections) {
    body << "### " << method_name(s.method) << "\n" << s.rendered;
    if (s.rendered.empty() || s.rendered.back() != '\n') body << "\n";
    raw_sections.push_back({{"method", method_name(s.method)}, {"evidence", s.raw}});
    d.members.push_back(s.method);
  }
  d.feature = feature;
  d.method = Method::EnsembleRaw;
  d.evidence = {{"sections", raw_sections}};
  d.llm_model = ctx.gateway->role_model(RoleClass::Explainer);
  d.text = explainer_call(ctx, ctx.prompts->get("explainer_ensemble_raw"),
                          {{"SECTIONS", body.str()}}, &d.prompt_hash);
  return d;
}

Description ensemble_concat(const std::vector<Description>& members) {
  if (members.size() < 2) {
    raise(ErrorCode::Precondition, "concat ensemble needs at least two member descriptions");
  }
  std::vector<const Description*> ordered;
  for (const Description& m : members) ordered.push_back(&m);
  std::sort(ordered.begin(), ordered.end(),
            [](const Description* a, const Description* b) {
              return method_before(a->method, b->method);
            });
  Description d;
  d.feature = members.front().feature;
  d.method = Method::EnsembleConcat;
  for (const Description* m : ordered) {
    if (!(m->feature == d.feature)) {
      raise(ErrorCode::Precondition, "concat ensemble members describe different features");
    }
    if (!d.text.empty()) d.text += "; ";
    d.text += m->text;
    d.members.push_back(m->method);
  }
  return d;
}

nlohmann::json description_to_json(const Description& d) {
  nlohmann::json j;
  j["feature"] = feature_to_json(d.feature);
  j["method"] = method_name(d.method);
  if (!d.members.empty()) {
    nlohmann::json members = nlohmann::json::array();
    for (Method m : d.members) members.push_back(method_name(m));
    j["members"] = members;
  }
  j["text"] = d.text;
  j["evidence"] = d.evidence;
  j["llm"] = {{"model", d.llm_model}, {"prompt_hash", d.prompt_hash}};
  return j;
}

Description description_from_json(const nlohmann::json& j) {
  Description d;
  d.feature = feature_from_json(j.at("feature"));
  d.method = method_from_name(j.at("method").get<std::string>());
  if (j.contains("members")) {
    for (const auto& m : j.at("members")) d.members.push_back(method_from_name(m.get<std::string>()));
  }
  d.text = j.at("text").get<std::string>();
  d.evidence = j.value("evidence", nlohmann::json());
  if (j.contains("llm")) {
    d.llm_model = j.at("llm").value("model", "");
    d.prompt_hash = j.at("llm").value("prompt_hash", "");
  }
  return d;
}

}  // namespace featdesc
