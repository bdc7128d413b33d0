#include <string>

#include "doctest.h"
#include "fairgen/toml.hpp"
#include "fairgen/types.hpp"

using namespace fairgen;

TEST_CASE("toml parses sections, scalars and arrays") {
  const std::string text = R"(
# world file
title = "tiny"

[vocab]
text_tokens = 4
image_tokens = 1_6
labels = ["male", "female"]

[train]
lr = 5e-1
momentum = 0.9
resume = false
nested = [[1, 2], [3, 4]]
multiline = [
  1.5,   # first
  2.5,
]
)";
  const toml::Table t = toml::parse_string(text);
  CHECK(t.at("title").as_string() == "tiny");
  CHECK(t.at("vocab.text_tokens").as_int() == 4);
  CHECK(t.at("vocab.image_tokens").as_int() == 16);
  CHECK(t.at("vocab.labels").as_string_array() == std::vector<std::string>{"male", "female"});
  CHECK(t.at("train.lr").as_double() == doctest::Approx(0.5));
  CHECK(t.at("train.resume").as_bool() == false);
  CHECK(t.at("train.nested").as_array().at(1).as_int_array() ==
        std::vector<std::int64_t>{3, 4});
  CHECK(t.at("train.multiline").as_double_array() == std::vector<double>{1.5, 2.5});
  CHECK(t.get_int("train.not_there", 42) == 42);
}

TEST_CASE("toml reports the offending line") {
  const std::string text = "a = 1\nb = \nc = 3\n";
  try {
    toml::parse_string(text, "bad.toml");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.toml:2") != std::string::npos);
  }
}

TEST_CASE("toml rejects what it does not support") {
  CHECK_THROWS_AS(toml::parse_string("a = {x = 1}"), ConfigError);
  CHECK_THROWS_AS(toml::parse_string("[[table]]\n"), ConfigError);
  CHECK_THROWS_AS(toml::parse_string("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(toml::parse_string("a = [1, 2\n"), ConfigError);
  CHECK_THROWS_AS(toml::parse_string("a = \"unterminated\n"), ConfigError);
  CHECK_THROWS_AS(toml::parse_string("a = 1 trailing\n"), ConfigError);
}

TEST_CASE("toml type accessors enforce kinds") {
  const toml::Table t = toml::parse_string("i = 3\nf = 1.5\ns = \"x\"\n");
  CHECK(t.at("i").as_double() == 3.0);  // int promotes to double
  CHECK_THROWS_AS(t.at("f").as_int(), ConfigError);
  CHECK_THROWS_AS(t.at("s").as_bool(), ConfigError);
  CHECK_THROWS_AS(t.at("missing"), ConfigError);
}

TEST_CASE("toml negative numbers and exponents") {
  const toml::Table t = toml::parse_string("a = -4\nb = -2.5e-3\nc = 1E2\n");
  CHECK(t.at("a").as_int() == -4);
  CHECK(t.at("b").as_double() == doctest::Approx(-0.0025));
  CHECK(t.at("c").as_double() == doctest::Approx(100.0));
}
