#include "featdesc/tokenizer.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"

namespace featdesc {

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open tokenizer file '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(ErrorCode::ParseError, "tokenizer file is not valid JSON");
  std::map<std::string, int> tokens;
  for (auto& [text, id] : j.at("tokens").items()) {
    tokens[text] = id.get<int>();
  }
  return from_tokens(std::move(tokens), j.at("bos_id").get<int>(), j.at("eos_id").get<int>());
}

Tokenizer Tokenizer::from_tokens(std::map<std::string, int> tokens, int bos_id, int eos_id) {
  Tokenizer t;
  t.token_to_id_ = std::move(tokens);
  int max_id = -1;
  for (const auto& [text, id] : t.token_to_id_) {
    if (id < 0) raise(ErrorCode::ParseError, "negative token id for '" + text + "'");
    max_id = std::max(max_id, id);
  }
  t.id_to_token_.assign(static_cast<size_t>(max_id + 1), "");
  for (const auto& [text, id] : t.token_to_id_) {
    if (!t.id_to_token_[static_cast<size_t>(id)].empty()) {
      raise(ErrorCode::ParseError, "duplicate token id " + std::to_string(id));
    }
    t.id_to_token_[static_cast<size_t>(id)] = text;
    t.max_token_len_ = std::max(t.max_token_len_, text.size());
  }
  auto in_range = [&](int id) { return id >= 0 && id <= max_id; };
  if (!in_range(bos_id) || !in_range(eos_id)) {
    raise(ErrorCode::ParseError, "special token id out of vocabulary range");
  }
  t.bos_id_ = bos_id;
  t.eos_id_ = eos_id;
  return t;
}

std::vector<int> Tokenizer::encode(const std::string& text, bool add_bos) const {
  std::vector<int> ids;
  if (add_bos) ids.push_back(bos_id_);
  size_t pos = 0;
  while (pos < text.size()) {
    size_t take = std::min(max_token_len_, text.size() - pos);
    bool matched = false;
    for (; take >= 1; --take) {
      auto it = token_to_id_.find(text.substr(pos, take));
      if (it != token_to_id_.end() && it->second != bos_id_ && it->second != eos_id_) {
        ids.push_back(it->second);
        pos += take;
        matched = true;
        break;
      }
    }
    if (!matched) {
      raise(ErrorCode::TokenizationFailed,
            "no vocabulary entry covers text at byte " + std::to_string(pos) +
                " ('" + text.substr(pos, 1) + "')");
    }
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == bos_id_ || id == eos_id_) continue;
    out += token_text(id);
  }
  return out;
}

const std::string& Tokenizer::token_text(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
    raise(ErrorCode::TokenOutOfRange, "token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

void Tokenizer::save(const std::string& path) const {
  nlohmann::json j;
  nlohmann::json tokens = nlohmann::json::object();
  for (const auto& [text, id] : token_to_id_) tokens[text] = id;
  j["tokens"] = tokens;
  j["bos_id"] = bos_id_;
  j["eos_id"] = eos_id_;
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::IoError, "cannot write tokenizer file '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace featdesc
