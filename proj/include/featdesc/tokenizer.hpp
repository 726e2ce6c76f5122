#pragma once

#include <map>
#include <string>
#include <vector>

namespace featdesc {

/// Pluggable vocabulary loaded from a JSON file mapping token string to id,
/// with BOS/EOS special ids. The toy fixture ships a byte-level map (every
/// non-special token is one character); encode walks the text greedily by
/// longest token match so multi-character vocabularies also work.
class Tokenizer {
 public:
  static Tokenizer load(const std::string& path);
  static Tokenizer from_tokens(std::map<std::string, int> tokens, int bos_id, int eos_id);

  /// Token ids for `text`. BOS is prepended when `add_bos` is set.
  /// Throws TokenizationFailed on text no vocabulary entry covers.
  std::vector<int> encode(const std::string& text, bool add_bos = true) const;

  /// Concatenated token strings, skipping BOS/EOS.
  std::string decode(const std::vector<int>& ids) const;

  const std::string& token_text(int id) const;

  int bos_id() const { return bos_id_; }
  int eos_id() const { return eos_id_; }
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }

  void save(const std::string& path) const;

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int bos_id_ = 0;
  int eos_id_ = 0;
  size_t max_token_len_ = 1;
};

}  // namespace featdesc
