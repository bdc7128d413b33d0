#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fairgen::toml {

// Minimal TOML reader covering what the config and world files use:
// [section] headers, dotted keys, strings, integers, floats, booleans and
// (possibly nested, possibly multiline) arrays. Dates, inline tables and
// arrays-of-tables are rejected with a file:line diagnostic.
//
// Keys are flattened, so `image_tokens` under `[vocab]` is addressed as
// "vocab.image_tokens".

class Value {
 public:
  using Array = std::vector<Value>;

  explicit Value(std::string s) : v_(std::move(s)) {}
  explicit Value(std::int64_t i) : v_(i) {}
  explicit Value(double d) : v_(d) {}
  explicit Value(bool b) : v_(b) {}
  explicit Value(Array a) : v_(std::move(a)) {}

  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
  bool is_float() const { return std::holds_alternative<double>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_array() const { return std::holds_alternative<Array>(v_); }

  const std::string& as_string() const;
  std::int64_t as_int() const;
  double as_double() const;  // accepts int or float
  bool as_bool() const;
  const Array& as_array() const;

  std::vector<double> as_double_array() const;
  std::vector<std::int64_t> as_int_array() const;
  std::vector<std::string> as_string_array() const;

 private:
  std::variant<std::string, std::int64_t, double, bool, Array> v_;
};

class Table {
 public:
  bool has(std::string_view key) const;
  const Value& at(std::string_view key) const;  // ConfigError if missing

  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::string get_string(std::string_view key, std::string fallback) const;

  void set(std::string key, Value v);
  const std::map<std::string, Value>& entries() const { return entries_; }

 private:
  std::map<std::string, Value> entries_;
};

Table parse_string(std::string_view text, std::string_view origin = "<string>");
Table parse_file(const std::filesystem::path& path);

}  // namespace fairgen::toml
