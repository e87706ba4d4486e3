#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace zofa {

// A value of the TOML subset: strings, integers, floats, booleans and
// (possibly nested) arrays of those.
struct ConfigValue {
  using Array = std::vector<ConfigValue>;
  std::variant<std::string, std::int64_t, double, bool, Array> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_float() const { return std::holds_alternative<double>(v); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_array() const { return std::holds_alternative<Array>(v); }

  // Typed access; throw ConfigError naming `key` on a type mismatch.
  // Integers are accepted where floats are expected.
  const std::string& as_string(std::string_view key) const;
  std::int64_t as_int(std::string_view key) const;
  double as_double(std::string_view key) const;
  bool as_bool(std::string_view key) const;
  const Array& as_array(std::string_view key) const;
};

// Flat document keyed by dotted path ("adapt.eta"), in sorted order.
using ConfigDoc = std::map<std::string, ConfigValue>;

// Grammar: `# comments`, `[table]` / `[a.b]` headers, `key = value` lines,
// bare or quoted keys, basic "strings" with \" \\ \n \t escapes, 'literal'
// strings, integers (with optional _ separators), floats (incl. exponent,
// inf, nan), true/false, and arrays that may span lines. Duplicate keys and
// anything else are rejected with a ConfigError carrying the line number.
ConfigDoc parse_config(std::string_view text);

// Parses a single value as it would appear on the right of `=`.
ConfigValue parse_config_value(std::string_view text);

std::string render_config_value(const ConfigValue& value);

}  // namespace zofa
