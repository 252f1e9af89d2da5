#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace conhd::cli {

using json = nlohmann::ordered_json;

/// Raw config text plus its parsed form; the text is kept so that errors can
/// point at the line of an offending key.
struct ConfigSource {
  std::string origin;  ///< file name used in messages
  std::string text;
  json value;
};

/// Parses a strict JSON object. Syntax errors become ConfigError with line
/// and column.
ConfigSource parse_config(const std::string& text, const std::string& origin);
ConfigSource load_config(const std::filesystem::path& path);

/// Applies "a.b=value" overrides. The value is read as JSON when it parses,
/// otherwise as a plain string.
void apply_overrides(ConfigSource& source, const std::vector<std::string>& overrides);

/// Copy of `defaults` with every user key laid over it. A key absent from
/// the defaults, or a value whose JSON type differs from the default's,
/// raises ConfigError naming the key and its line. A null default accepts
/// a string or null; an integer default accepts only integers.
json merge_strict(const json& defaults, const ConfigSource& source);

/// 1-based line of the first `"key":` in text, or 0 when absent.
std::size_t key_line(const std::string& text, const std::string& key);

}  // namespace conhd::cli
