#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "fairgen/io.hpp"
#include "fairgen/model.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace fairgen;

namespace {

ARModel uniform_model(int image_tokens = 4, int order = 2, int seq_len = 3, int prompts = 2) {
  Vocabulary vocab;
  vocab.text_tokens = 1;
  vocab.image_tokens = image_tokens;
  vocab.labels = {"a", "b"};
  return ARModel(vocab, order, seq_len, prompts);
}

}  // namespace

TEST_CASE("next_token_dist: zero logits give the uniform distribution") {
  const ARModel model = uniform_model(4);
  const std::vector<double> dist = model.next_token_dist(0, {});
  for (const double p : dist) {
    CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
  }
  double sum = 0.0;
  for (const double p : dist) {
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("next_token_dist: direct softmax evaluation") {
  ARModel model = uniform_model(3);
  const ContextKey key = model.context_key(0, {});
  model.logits().at_or_zero(key) = {std::log(2.0), 0.0, 0.0};
  const std::vector<double> dist = model.next_token_dist(0, {});
  CHECK(dist[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(dist[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(dist[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("next_token_dist: bad prompt and bad tokens are domain errors") {
  const ARModel model = uniform_model();
  CHECK_THROWS_AS(model.next_token_dist(9, {}), std::domain_error);
  CHECK_THROWS_AS(model.next_token_dist(-1, {}), std::domain_error);
  // Token outside the image range (text token 0) is rejected, not NaN.
  CHECK_THROWS_AS(model.next_token_dist(0, std::vector<TokenId>{0}), std::domain_error);
}

TEST_CASE("non-finite logits are a domain error, not NaN probabilities") {
  ARModel model = uniform_model(4, 1, 3);
  model.logits().at_or_zero(model.context_key(0, {})) = {
      0.0, -std::numeric_limits<double>::infinity(), 0.0, 0.0};
  CHECK_THROWS_AS(model.next_token_dist(0, {}), std::domain_error);
  CHECK_THROWS_AS(model.sequence_logprob(0, TokenSequence{1, 2, 3}), std::domain_error);
}

TEST_CASE("next_token_dist truncates long contexts to the most recent order-n") {
  ARModel model = uniform_model(4, /*order=*/1);
  const TokenId a = model.vocab().image_token(0);
  const TokenId b = model.vocab().image_token(1);
  model.logits().at_or_zero(model.context_key(0, std::vector<TokenId>{b})) = {5.0, 0.0, 0.0, 0.0};
  const std::vector<double> with_long_ctx =
      model.next_token_dist(0, std::vector<TokenId>{a, a, b});
  const std::vector<double> with_short_ctx = model.next_token_dist(0, std::vector<TokenId>{b});
  CHECK(with_long_ctx == with_short_ctx);
}

TEST_CASE("sequence_logprob: uniform model closed form") {
  const ARModel model = uniform_model(4, 2, 3);
  const TokenSequence z = {1, 2, 3};
  CHECK(model.sequence_logprob(0, z) == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("sequence_logprob: hand chain rule at p=0.5 per step") {
  const ARModel model = uniform_model(2, 1, 2);
  const TokenSequence z = {1, 2};
  CHECK(model.sequence_logprob(0, z) == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("sequence_logprob equals the sum of per-step next_token_dist logs") {
  ARModel model = test::random_model(11, 4, 2, 5);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence z = test::random_sequence(model, rng);
    double expected = 0.0;
    for (int t = 0; t < model.seq_len(); ++t) {
      const std::vector<double> dist = model.next_token_dist(
          0, std::span<const TokenId>(z.data(), static_cast<std::size_t>(t)));
      expected += std::log(dist[static_cast<std::size_t>(model.vocab().image_index(z[t]))]);
    }
    CHECK(model.sequence_logprob(0, z) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("sequence_logprob rejects wrong lengths") {
  const ARModel model = uniform_model(4, 2, 3);
  CHECK_THROWS_AS(model.sequence_logprob(0, TokenSequence{1, 2}), std::invalid_argument);
}

TEST_CASE("sample_sequence is deterministic per seed") {
  const ARModel model = test::random_model(5);
  const TokenSequence a = model.sample_sequence(0, 123);
  const TokenSequence b = model.sample_sequence(0, 123);
  const TokenSequence c = model.sample_sequence(0, 124);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("sample_sequence frequencies converge to next_token_dist") {
  const ARModel model = uniform_model(4, 2, 3);
  constexpr int kSamples = 40000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < kSamples; ++i) {
    const TokenSequence z = model.sample_sequence(0, derive_seed(99, static_cast<std::uint64_t>(i)));
    ++counts[static_cast<std::size_t>(model.vocab().image_index(z[0]))];
  }
  for (const int c : counts) {
    CHECK(std::abs(static_cast<double>(c) / kSamples - 0.25) < 0.01);
  }
}

TEST_CASE("sample_sequence respects a dominating logit") {
  ARModel model = uniform_model(4, 0, 1);
  model.logits().at_or_zero(model.context_key(0, {})) = {20.0, 0.0, 0.0, 0.0};
  int hits = 0;
  constexpr int kSamples = 4000;
  for (int i = 0; i < kSamples; ++i) {
    const TokenSequence z = model.sample_sequence(0, derive_seed(5, static_cast<std::uint64_t>(i)));
    hits += model.vocab().image_index(z[0]) == 0 ? 1 : 0;
  }
  CHECK(static_cast<double>(hits) / kSamples >= 0.999);
}

TEST_CASE("grad_sequence_logprob: analytic softmax gradient on a uniform row") {
  const ARModel model = uniform_model(4, 2, 1);
  const TokenSequence z = {1};  // image index 0
  const GradTable grads = model.grad_sequence_logprob(0, z);
  const std::vector<double>* row = grads.find(model.context_key(0, {}));
  REQUIRE(row != nullptr);
  CHECK((*row)[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK((*row)[1] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK((*row)[2] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK((*row)[3] == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("grad_sequence_logprob matches finite differences on random models") {
  Rng seq_rng(17);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    ARModel model = test::random_model(trial, 4, 1, 3, 2, 5.0);
    const TokenSequence z = test::random_sequence(model, seq_rng);
    const int prompt = static_cast<int>(trial % 2);
    const GradTable grads = model.grad_sequence_logprob(prompt, z);
    const double worst = test::max_grad_fd_deviation(
        model, grads, [&] { return model.sequence_logprob(prompt, z); });
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("gradient rows sum to zero") {
  ARModel model = test::random_model(23, 5, 2, 6);
  Rng rng(1);
  const TokenSequence z = test::random_sequence(model, rng);
  const GradTable grads = model.grad_sequence_logprob(1, z);
  CHECK(grads.size() > 0);
  for (const auto& [key, row] : grads) {
    double sum = 0.0;
    for (const double v : row) {
      sum += v;
    }
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ARModel model = test::random_model(77, 4, 2, 4, 3);
  const auto dir = test::scratch_dir("checkpoint");
  save_checkpoint(model, dir / "model.json");
  const ARModel loaded = load_checkpoint(dir / "model.json");

  CHECK(loaded.order() == model.order());
  CHECK(loaded.seq_len() == model.seq_len());
  CHECK(loaded.num_prompts() == model.num_prompts());
  CHECK(loaded.vocab().labels == model.vocab().labels);
  CHECK(loaded.logits().size() == model.logits().size());
  for (const auto& [key, row] : model.logits()) {
    const std::vector<double>* other = loaded.logits().find(key);
    REQUIRE(other != nullptr);
    CHECK(*other == row);  // bitwise
  }

  // Serialization is stable: dumping the reloaded model gives identical bytes.
  CHECK(checkpoint_to_json(model) == checkpoint_to_json(loaded));
}

TEST_CASE("checkpoint rejects malformed input") {
  CHECK_THROWS_AS(checkpoint_from_json("not json at all"), ConfigError);
  CHECK_THROWS_AS(checkpoint_from_json("{}"), ConfigError);
  CHECK_THROWS_AS(
      checkpoint_from_json(R"({"vocab":{"text_tokens":1,"image_tokens":4,"labels":["a","b"]},)"
                           R"("order":1,"seq_len":3,"prompts":1,"logits":{"0|":[1,2]}})"),
      ConfigError);
}

TEST_CASE("models validate construction parameters") {
  Vocabulary vocab;
  vocab.text_tokens = 1;
  vocab.image_tokens = 4;
  vocab.labels = {"a", "b"};
  CHECK_THROWS_AS(ARModel(vocab, -1, 3, 1), std::domain_error);
  CHECK_THROWS_AS(ARModel(vocab, 7, 3, 1), std::domain_error);
  CHECK_THROWS_AS(ARModel(vocab, 1, 0, 1), std::domain_error);
  CHECK_THROWS_AS(ARModel(vocab, 1, 3, 0), std::domain_error);
  Vocabulary bad = vocab;
  bad.image_tokens = 1;
  CHECK_THROWS_AS(ARModel(bad, 1, 3, 1), std::domain_error);
}
