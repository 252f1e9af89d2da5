#include "cli_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "conhd/errors.hpp"

namespace conhd::cli {

namespace {

std::string where(const ConfigSource& source, const std::string& key) {
  const std::size_t line = key_line(source.text, key);
  if (line == 0) return source.origin;
  return source.origin + " line " + std::to_string(line);
}

std::string type_name(const json& v) {
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_boolean()) return "a boolean";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

bool compatible(const json& def, const json& user) {
  if (def.is_null()) return user.is_null() || user.is_string();
  if (def.is_number_integer()) return user.is_number_integer();
  if (def.is_number()) return user.is_number();
  if (def.is_boolean()) return user.is_boolean();
  if (def.is_string()) return user.is_string();
  if (def.is_array()) return user.is_array();
  if (def.is_object()) return user.is_object();
  return false;
}

void merge_into(json& target, const json& user, const std::string& prefix, const ConfigSource& source) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!target.contains(key)) throw ConfigError(where(source, key) + ": unknown key '" + path + "'");
    json& slot = target[key];
    if (!compatible(slot, value)) {
      throw ConfigError(where(source, key) + ": key '" + path + "' expects " +
                        (slot.is_null() ? std::string("a string or null") : type_name(slot)) + ", got " +
                        type_name(value));
    }
    if (slot.is_object()) {
      merge_into(slot, value, path, source);
    } else {
      slot = value;
    }
  }
}

}  // namespace

std::size_t key_line(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  for (std::size_t pos = text.find(quoted); pos != std::string::npos; pos = text.find(quoted, pos + 1)) {
    std::size_t after = pos + quoted.size();
    while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
    if (after < text.size() && text[after] == ':') {
      return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
    }
  }
  return 0;
}

ConfigSource parse_config(const std::string& text, const std::string& origin) {
  ConfigSource source{origin, text, {}};
  try {
    source.value = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    const std::size_t end = std::min(byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n');
    const auto last_newline = text.rfind('\n', end == 0 ? 0 : end - 1);
    const std::size_t column = last_newline == std::string::npos || end == 0 ? end + 1 : end - last_newline;
    throw ConfigError(origin + " line " + std::to_string(line) + ", column " + std::to_string(column) +
                      ": invalid JSON");
  }
  if (!source.value.is_object()) throw ConfigError(origin + ": top level must be a JSON object");
  return source;
}

ConfigSource load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.filename().string());
}

void apply_overrides(ConfigSource& source, const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &source.value;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + item + "' has an empty key segment");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) throw ConfigError("override '" + item + "': '" + part + "' is not an object");
      node = &child;
      start = dot + 1;
    }
  }
}

json merge_strict(const json& defaults, const ConfigSource& source) {
  json out = defaults;
  merge_into(out, source.value, "", source);
  return out;
}

}  // namespace conhd::cli
