#include "featdesc/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "featdesc/error.hpp"

namespace featdesc::toml {

namespace {

[[noreturn]] void fail(int line, const std::string& message) {
  raise(ErrorCode::ParseError, "TOML line " + std::to_string(line) + ": " + message);
}

std::string strip(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// removes a trailing comment that is not inside a string literal
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

std::string parse_basic_string(const std::string& raw, int line) {
  std::string out;
  for (size_t i = 1; i + 1 < raw.size(); ++i) {
    char c = raw[i];
    if (c == '\\') {
      if (i + 2 >= raw.size()) fail(line, "dangling escape");
      char esc = raw[++i];
      switch (esc) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(line, std::string("unsupported escape \\") + esc);
      }
    } else {
      out += c;
    }
  }
  return out;
}

nlohmann::json parse_scalar(const std::string& raw, int line);

nlohmann::json parse_array(const std::string& raw, int line) {
  nlohmann::json arr = nlohmann::json::array();
  std::string inner = strip(raw.substr(1, raw.size() - 2));
  if (inner.empty()) return arr;
  std::vector<std::string> parts;
  std::string cur;
  bool in_string = false;
  for (size_t i = 0; i < inner.size(); ++i) {
    char c = inner[i];
    if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_string = !in_string;
    if (c == ',' && !in_string) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!strip(cur).empty()) parts.push_back(cur);
  for (const std::string& part : parts) {
    arr.push_back(parse_scalar(strip(part), line));
  }
  return arr;
}

nlohmann::json parse_scalar(const std::string& raw, int line) {
  if (raw.empty()) fail(line, "missing value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string");
    return parse_basic_string(raw, line);
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') fail(line, "unterminated array");
    return parse_array(raw, line);
  }
  if (raw == "true") return true;
  if (raw == "false") return false;

  const bool looks_float = raw.find_first_of(".eE") != std::string::npos &&
                           raw.find_first_not_of("+-0123456789.eE") == std::string::npos;
  errno = 0;
  char* end = nullptr;
  if (!looks_float) {
    long long v = std::strtoll(raw.c_str(), &end, 10);
    if (errno == 0 && end && *end == '\0') return v;
  }
  double d = std::strtod(raw.c_str(), &end);
  if (errno == 0 && end && *end == '\0') return d;
  fail(line, "cannot parse value '" + raw + "'");
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  }
  return true;
}

}  // namespace

nlohmann::json parse(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;

  std::istringstream in(text);
  std::string raw_line;
  int line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string line = strip(strip_comment(raw_line));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated table header");
      std::string path = strip(line.substr(1, line.size() - 2));
      if (path.empty()) fail(line_no, "empty table header");
      table = &root;
      size_t pos = 0;
      while (pos <= path.size()) {
        size_t dot = path.find('.', pos);
        std::string part = strip(path.substr(pos, dot == std::string::npos ? dot : dot - pos));
        if (!valid_key(part)) fail(line_no, "bad table name '" + part + "'");
        table = &(*table)[part];
        if (table->is_null()) *table = nlohmann::json::object();
        if (!table->is_object()) fail(line_no, "table redefines a value");
        if (dot == std::string::npos) break;
        pos = dot + 1;
      }
      continue;
    }

    size_t eq = std::string::npos;
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_string = !in_string;
      if (line[i] == '=' && !in_string) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    std::string key = strip(line.substr(0, eq));
    if (!valid_key(key)) fail(line_no, "bad key '" + key + "'");
    if (table->contains(key)) fail(line_no, "duplicate key '" + key + "'");
    (*table)[key] = parse_scalar(strip(line.substr(eq + 1)), line_no);
  }
  return root;
}

nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::IoError, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace featdesc::toml
