#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace featdesc::toml {

/// Parse a TOML document into JSON. Covers the subset the pipeline configs
/// use: [table] and [dotted.table] headers, `key = value` with strings,
/// integers, floats, booleans and flat arrays, plus # comments. Errors carry
/// the 1-based line number.
nlohmann::json parse(const std::string& text);

nlohmann::json parse_file(const std::string& path);

}  // namespace featdesc::toml
