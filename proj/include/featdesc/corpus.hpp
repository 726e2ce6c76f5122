#pragma once

#include <string>
#include <vector>

#include "featdesc/tokenizer.hpp"

namespace featdesc {

struct CorpusDoc {
  std::string doc_id;
  std::string text;
};

/// One tokenized corpus sequence (window-truncated, BOS first).
struct CorpusSequence {
  std::string doc_id;
  std::vector<int> tokens;
};

/// Read a JSONL corpus of {doc_id, text} records.
std::vector<CorpusDoc> read_corpus_jsonl(const std::string& path);

/// Tokenize docs and truncate each to `window` tokens (BOS included).
std::vector<CorpusSequence> tokenize_corpus(const std::vector<CorpusDoc>& docs,
                                            const Tokenizer& tokenizer, int window);

/// Draw `count` windows of exactly `length` tokens from the corpus with a
/// seeded sampler (documents shorter than the window are skipped). Used for
/// the clamped-versus-baseline prompt set.
std::vector<std::vector<int>> sample_prompt_windows(const std::vector<CorpusSequence>& sequences,
                                                    int count, int length, uint64_t seed);

}  // namespace featdesc
