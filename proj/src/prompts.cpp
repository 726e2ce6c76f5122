#include "featdesc/prompts.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"

namespace featdesc {

namespace {

constexpr const char* kMaxAct = R"(You are describing what activates one feature inside a language model.
Below are corpus examples. Each line pairs a token with the feature's
activation at that token; the strongest examples come first, followed by
samples from lower activation bands.

{{EVIDENCE}}

Reply with one sentence describing the feature.)";

constexpr const char* kVocabProj = R"(One feature of a language model was projected onto the output vocabulary.
The highest-scoring tokens are the ones the feature promotes, the
lowest-scoring ones are the tokens it suppresses.

Promoted tokens:
{{TOP}}

Suppressed tokens:
{{BOTTOM}}

Reply with one sentence describing the feature.)";

constexpr const char* kTokenChange = R"(One feature of a language model was amplified during a forward pass.
The tokens below are the ones whose output logits moved the most,
averaged over every position of several prompts.

Logits increased most:
{{TOP}}

Logits decreased most:
{{BOTTOM}}

Reply with one sentence describing the feature.)";

constexpr const char* kEnsembleRaw = R"(Several kinds of evidence about one feature of a language model follow,
one section per method.

{{SECTIONS}}

Considering all sections together, reply with one sentence describing the feature.)";

constexpr const char* kSentenceGen = R"(Description: <<{{DESCRIPTION}}>>
Count: {{N}}

Write {{N}} sentences a reader would say match the description (ACTIVATING)
and {{N}} ordinary sentences unrelated to it (NEUTRAL).
Reply in exactly this format:
ACTIVATING:
1. <sentence>
NEUTRAL:
1. <sentence>)";

constexpr const char* kSentenceList = R"(Description: <<{{DESCRIPTION}}>>
Sentences: {{N}}

Write {{N}} short sentences that are likely to involve the description.
Reply as a numbered list, one sentence per line.)";

constexpr const char* kJudge = R"(Description: <<{{DESCRIPTION}}>>

Three sets of model generations follow. Exactly one of them was produced
while amplifying the feature the description refers to.

Set 1:
{{SET1}}

Set 2:
{{SET2}}

Set 3:
{{SET3}}

Which set matches the description? Answer with a single digit: 1, 2, or 3.)";

}  // namespace

PromptLibrary PromptLibrary::builtin() {
  PromptLibrary lib;
  auto add = [&](const std::string& name, const char* text) {
    lib.templates_[name] = PromptTemplate{name, "builtin/" + name + "/v1", text};
  };
  add("explainer_maxact", kMaxAct);
  add("explainer_vocabproj", kVocabProj);
  add("explainer_tokenchange", kTokenChange);
  add("explainer_ensemble_raw", kEnsembleRaw);
  add("sentence_generator", kSentenceGen);
  add("sentence_list", kSentenceList);
  add("judge", kJudge);
  return lib;
}

PromptLibrary PromptLibrary::from_dir(const std::string& dir) {
  PromptLibrary lib = builtin();
  if (dir.empty()) return lib;
  if (!std::filesystem::is_directory(dir)) {
    raise(ErrorCode::ConfigError, "prompt directory '" + dir + "' does not exist");
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    const std::string name = entry.path().stem().string();
    std::ifstream in(entry.path());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    lib.templates_[name] =
        PromptTemplate{name, "file/" + name + "/" + hex64(fnv1a64(text)).substr(0, 8), text};
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) {
    raise(ErrorCode::ConfigError, "unknown prompt template '" + name + "'");
  }
  return it->second;
}

std::map<std::string, std::string> PromptLibrary::versions() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, tpl] : templates_) out[name] = tpl.version;
  return out;
}

std::string render_prompt(const PromptTemplate& tpl,
                          const std::map<std::string, std::string>& values) {
  std::string out = tpl.text;
  for (const auto& [key, value] : values) {
    const std::string needle = "{{" + key + "}}";
    size_t pos = 0;
    while ((pos = out.find(needle, pos)) != std::string::npos) {
      out.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  const size_t open = out.find("{{");
  if (open != std::string::npos && out.find("}}", open) != std::string::npos) {
    raise(ErrorCode::ConfigError,
          "unresolved placeholder in template '" + tpl.name + "': " + out.substr(open, 24));
  }
  return out;
}

}  // namespace featdesc
