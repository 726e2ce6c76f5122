#include "featdesc/corpus.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"
#include "featdesc/rng.hpp"

namespace featdesc {

std::vector<CorpusDoc> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open corpus file '" + path + "'");
  std::vector<CorpusDoc> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      raise(ErrorCode::ParseError, "corpus line " + std::to_string(line_no) + " is not JSON");
    }
    docs.push_back(CorpusDoc{j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()});
  }
  return docs;
}

std::vector<CorpusSequence> tokenize_corpus(const std::vector<CorpusDoc>& docs,
                                            const Tokenizer& tokenizer, int window) {
  std::vector<CorpusSequence> out;
  out.reserve(docs.size());
  for (const CorpusDoc& doc : docs) {
    CorpusSequence seq;
    seq.doc_id = doc.doc_id;
    seq.tokens = tokenizer.encode(doc.text);
    if (window > 0 && static_cast<int>(seq.tokens.size()) > window) {
      seq.tokens.resize(static_cast<size_t>(window));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<int>> sample_prompt_windows(const std::vector<CorpusSequence>& sequences,
                                                    int count, int length, uint64_t seed) {
  std::vector<size_t> eligible;
  for (size_t i = 0; i < sequences.size(); ++i) {
    if (static_cast<int>(sequences[i].tokens.size()) >= length) eligible.push_back(i);
  }
  if (eligible.empty()) {
    raise(ErrorCode::Precondition, "no corpus sequence is long enough for the prompt window");
  }
  Rng rng(seed);
  std::vector<std::vector<int>> prompts;
  prompts.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const CorpusSequence& seq = sequences[eligible[rng.below(eligible.size())]];
    const size_t max_start = seq.tokens.size() - static_cast<size_t>(length);
    const size_t start = max_start == 0 ? 0 : static_cast<size_t>(rng.below(max_start + 1));
    prompts.emplace_back(seq.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                         seq.tokens.begin() + static_cast<std::ptrdiff_t>(start + length));
  }
  return prompts;
}

}  // namespace featdesc
