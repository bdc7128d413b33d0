#include "fairgen/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fairgen/types.hpp"

namespace fairgen::toml {

namespace {

[[noreturn]] void type_error(const char* wanted) {
  throw ConfigError(std::string("toml value is not a ") + wanted);
}

class Parser {
 public:
  Parser(std::string_view text, std::string_view origin) : text_(text), origin_(origin) {}

  Table parse() {
    Table table;
    std::string prefix;
    skip_trivia(true);
    while (!at_end()) {
      if (peek() == '[') {
        prefix = parse_header();
      } else {
        auto [key, value] = parse_key_value();
        const std::string full = prefix.empty() ? key : prefix + "." + key;
        if (table.has(full)) {
          fail("duplicate key '" + full + "'");
        }
        table.set(full, std::move(value));
      }
      expect_line_end();
      skip_trivia(true);
    }
    return table;
  }

 private:
  std::string_view text_;
  std::string_view origin_;
  std::size_t pos_ = 0;
  int line_ = 1;

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  char advance() {
    const char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
    }
    return c;
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream oss;
    oss << origin_ << ":" << line_ << ": " << what;
    throw ConfigError(oss.str());
  }

  // Whitespace and comments; newlines too when cross_lines is set.
  void skip_trivia(bool cross_lines) {
    while (!at_end()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
      } else if (c == '\n' && cross_lines) {
        advance();
      } else if (c == '#') {
        while (!at_end() && peek() != '\n') {
          advance();
        }
      } else {
        break;
      }
    }
  }

  void expect_line_end() {
    skip_trivia(false);
    if (at_end()) {
      return;
    }
    if (peek() != '\n') {
      fail(std::string("unexpected trailing content starting with '") + peek() + "'");
    }
    advance();
  }

  static bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
  }

  std::string parse_bare_key() {
    const std::size_t start = pos_;
    while (!at_end() && is_bare_key_char(peek())) {
      advance();
    }
    if (pos_ == start) {
      fail("expected a key");
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string parse_dotted_key() {
    std::string key = parse_bare_key();
    while (!at_end() && peek() == '.') {
      advance();
      key += '.';
      key += parse_bare_key();
    }
    return key;
  }

  std::string parse_header() {
    advance();  // '['
    if (!at_end() && peek() == '[') {
      fail("arrays of tables are not supported");
    }
    skip_trivia(false);
    const std::string name = parse_dotted_key();
    skip_trivia(false);
    if (at_end() || peek() != ']') {
      fail("expected ']' to close table header");
    }
    advance();
    return name;
  }

  std::pair<std::string, Value> parse_key_value() {
    const std::string key = parse_dotted_key();
    skip_trivia(false);
    if (at_end() || peek() != '=') {
      fail("expected '=' after key '" + key + "'");
    }
    advance();
    skip_trivia(false);
    return {key, parse_value()};
  }

  Value parse_value() {
    if (at_end()) {
      fail("expected a value");
    }
    const char c = peek();
    if (c == '"' || c == '\'') {
      return Value(parse_string_value());
    }
    if (c == '[') {
      return parse_array();
    }
    if (c == '{') {
      fail("inline tables are not supported");
    }
    return parse_scalar();
  }

  std::string parse_string_value() {
    const char quote = advance();
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') {
        fail("unterminated string");
      }
      const char c = advance();
      if (c == quote) {
        break;
      }
      if (quote == '"' && c == '\\') {
        if (at_end()) {
          fail("unterminated escape sequence");
        }
        const char esc = advance();
        switch (esc) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          default: fail(std::string("unsupported escape '\\") + esc + "'");
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Value parse_array() {
    advance();  // '['
    Value::Array items;
    skip_trivia(true);
    while (true) {
      if (at_end()) {
        fail("unterminated array");
      }
      if (peek() == ']') {
        advance();
        break;
      }
      items.push_back(parse_value());
      skip_trivia(true);
      if (at_end()) {
        fail("unterminated array");
      }
      if (peek() == ',') {
        advance();
        skip_trivia(true);
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
    return Value(std::move(items));
  }

  Value parse_scalar() {
    const std::size_t start = pos_;
    while (!at_end()) {
      const char c = peek();
      if (c == '\n' || c == ',' || c == ']' || c == '#' || c == ' ' || c == '\t' || c == '\r') {
        break;
      }
      advance();
    }
    std::string token(text_.substr(start, pos_ - start));
    if (token.empty()) {
      fail("expected a value");
    }
    if (token == "true") {
      return Value(true);
    }
    if (token == "false") {
      return Value(false);
    }

    std::string digits;
    digits.reserve(token.size());
    bool is_float = false;
    for (std::size_t i = 0; i < token.size(); ++i) {
      const char c = token[i];
      if (c == '_') {
        continue;  // 1_000 style separators
      }
      if (c == '.' || c == 'e' || c == 'E') {
        is_float = true;
      }
      digits += c;
    }

    if (!is_float) {
      std::int64_t iv = 0;
      const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), iv);
      if (ec == std::errc() && ptr == digits.data() + digits.size()) {
        return Value(iv);
      }
    }
    double dv = 0.0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), dv);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) {
      return Value(dv);
    }
    fail("cannot parse value '" + token + "'");
  }
};

}  // namespace

const std::string& Value::as_string() const {
  if (!is_string()) {
    type_error("string");
  }
  return std::get<std::string>(v_);
}

std::int64_t Value::as_int() const {
  if (!is_int()) {
    type_error("integer");
  }
  return std::get<std::int64_t>(v_);
}

double Value::as_double() const {
  if (is_int()) {
    return static_cast<double>(std::get<std::int64_t>(v_));
  }
  if (!is_float()) {
    type_error("float");
  }
  return std::get<double>(v_);
}

bool Value::as_bool() const {
  if (!is_bool()) {
    type_error("boolean");
  }
  return std::get<bool>(v_);
}

const Value::Array& Value::as_array() const {
  if (!is_array()) {
    type_error("array");
  }
  return std::get<Array>(v_);
}

std::vector<double> Value::as_double_array() const {
  std::vector<double> out;
  for (const Value& v : as_array()) {
    out.push_back(v.as_double());
  }
  return out;
}

std::vector<std::int64_t> Value::as_int_array() const {
  std::vector<std::int64_t> out;
  for (const Value& v : as_array()) {
    out.push_back(v.as_int());
  }
  return out;
}

std::vector<std::string> Value::as_string_array() const {
  std::vector<std::string> out;
  for (const Value& v : as_array()) {
    out.push_back(v.as_string());
  }
  return out;
}

bool Table::has(std::string_view key) const { return entries_.contains(std::string(key)); }

const Value& Table::at(std::string_view key) const {
  const auto it = entries_.find(std::string(key));
  if (it == entries_.end()) {
    throw ConfigError("missing toml key '" + std::string(key) + "'");
  }
  return it->second;
}

std::int64_t Table::get_int(std::string_view key, std::int64_t fallback) const {
  return has(key) ? at(key).as_int() : fallback;
}

double Table::get_double(std::string_view key, double fallback) const {
  return has(key) ? at(key).as_double() : fallback;
}

bool Table::get_bool(std::string_view key, bool fallback) const {
  return has(key) ? at(key).as_bool() : fallback;
}

std::string Table::get_string(std::string_view key, std::string fallback) const {
  return has(key) ? at(key).as_string() : fallback;
}

void Table::set(std::string key, Value v) { entries_.insert_or_assign(std::move(key), std::move(v)); }

Table parse_string(std::string_view text, std::string_view origin) {
  return Parser(text, origin).parse();
}

Table parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open toml file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str(), path.string());
}

}  // namespace fairgen::toml
