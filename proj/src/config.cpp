#include "zofa/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "zofa/error.hpp"

namespace zofa {

namespace {

[[noreturn]] void type_error(std::string_view key, const char* want) {
  throw ConfigError("config key '" + std::string(key) + "' must be " + want);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  ConfigDoc document() {
    ConfigDoc doc;
    std::string table;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        skip_ws();
        table = dotted_key();
        skip_ws();
        expect(']');
        end_of_line();
        if (!tables_.insert(table).second) fail("duplicate table [" + table + "]");
        continue;
      }
      std::string key = dotted_key();
      skip_ws();
      expect('=');
      skip_ws();
      ConfigValue value = parse_value();
      end_of_line();
      const std::string full = table.empty() ? key : table + "." + key;
      if (!doc.emplace(full, std::move(value)).second) fail("duplicate key '" + full + "'");
    }
    return doc;
  }

  ConfigValue single_value() {
    skip_ws();
    ConfigValue v = parse_value();
    skip_ws();
    if (!eof()) fail("trailing characters after value");
    return v;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::set<std::string> tables_;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void newline() {
    if (peek() == '\r') ++pos_;
    if (peek() != '\n') fail("expected end of line");
    ++pos_;
    ++line_;
  }

  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (eof()) return;
      if (peek() == '\n' || peek() == '\r') {
        newline();
        continue;
      }
      return;
    }
  }

  void end_of_line() {
    skip_ws();
    skip_comment();
    if (!eof()) newline();
  }

  // Whitespace, newlines and comments inside arrays.
  void skip_array_space() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        newline();
        continue;
      }
      return;
    }
  }

  std::string simple_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string dotted_key() {
    std::string key = simple_key();
    skip_ws();
    while (peek() == '.') {
      ++pos_;
      skip_ws();
      key += "." + simple_key();
      skip_ws();
    }
    return key;
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (s_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail("unsupported escape sequence");
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (peek() != '\'') fail("unterminated string");
    std::string out(s_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  ConfigValue parse_value() {
    const char c = peek();
    if (c == '"') return {basic_string()};
    if (c == '\'') return {literal_string()};
    if (c == '[') return parse_array();
    const std::size_t start = pos_;
    while (!eof() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != '\n' && peek() != '\r' &&
           peek() != ' ' && peek() != '\t')
      ++pos_;
    const std::string_view tok = s_.substr(start, pos_ - start);
    if (tok.empty()) fail("expected a value");
    return scalar(tok);
  }

  ConfigValue parse_array() {
    expect('[');
    ConfigValue::Array items;
    skip_array_space();
    while (peek() != ']') {
      items.push_back(parse_value());
      skip_array_space();
      if (peek() == ',') {
        ++pos_;
        skip_array_space();
        continue;
      }
      if (peek() != ']') fail("expected ',' or ']' in array");
    }
    ++pos_;
    return {std::move(items)};
  }

  ConfigValue scalar(std::string_view tok) {
    if (tok == "true") return {true};
    if (tok == "false") return {false};
    std::string clean;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1])))
          fail("misplaced '_' in number '" + std::string(tok) + "'");
        continue;
      }
      clean += tok[i];
    }
    std::string_view body = clean;
    const bool neg = !body.empty() && body[0] == '-';
    std::string_view mag = (!body.empty() && (body[0] == '-' || body[0] == '+')) ? body.substr(1) : body;
    if (mag == "inf") return {neg ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity()};
    if (mag == "nan") return {std::numeric_limits<double>::quiet_NaN()};
    if (mag.empty() || !std::isdigit(static_cast<unsigned char>(mag[0]))) fail("invalid value '" + std::string(tok) + "'");
    const bool is_float = mag.find_first_of(".eE") != std::string_view::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const char* first = mag.data();
      const char* last = mag.data() + mag.size();
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) fail("invalid integer '" + std::string(tok) + "'");
      return {neg ? -v : v};
    }
    double v = 0.0;
    const char* first = mag.data();
    const char* last = mag.data() + mag.size();
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) fail("invalid float '" + std::string(tok) + "'");
    return {neg ? -v : v};
  }
};

}  // namespace

const std::string& ConfigValue::as_string(std::string_view key) const {
  if (!is_string()) type_error(key, "a string");
  return std::get<std::string>(v);
}

std::int64_t ConfigValue::as_int(std::string_view key) const {
  if (!is_int()) type_error(key, "an integer");
  return std::get<std::int64_t>(v);
}

double ConfigValue::as_double(std::string_view key) const {
  if (is_int()) return static_cast<double>(std::get<std::int64_t>(v));
  if (!is_float()) type_error(key, "a number");
  return std::get<double>(v);
}

bool ConfigValue::as_bool(std::string_view key) const {
  if (!is_bool()) type_error(key, "a boolean");
  return std::get<bool>(v);
}

const ConfigValue::Array& ConfigValue::as_array(std::string_view key) const {
  if (!is_array()) type_error(key, "an array");
  return std::get<Array>(v);
}

ConfigDoc parse_config(std::string_view text) { return Parser(text).document(); }

ConfigValue parse_config_value(std::string_view text) { return Parser(text).single_value(); }

std::string render_config_value(const ConfigValue& value) {
  struct Visitor {
    std::string operator()(const std::string& s) const {
      std::string out = "\"";
      for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
          out += "\\n";
          continue;
        }
        out += c;
      }
      return out + "\"";
    }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      if (std::isnan(d)) return "nan";
      if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", d);
      std::string out = buf;
      if (out.find_first_of(".eE") == std::string::npos) out += ".0";
      return out;
    }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(const ConfigValue::Array& a) const {
      std::string out = "[";
      for (std::size_t i = 0; i < a.size(); ++i) out += (i ? ", " : "") + render_config_value(a[i]);
      return out + "]";
    }
  };
  return std::visit(Visitor{}, value.v);
}

}  // namespace zofa
