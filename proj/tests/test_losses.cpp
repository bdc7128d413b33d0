#include <cmath>

#include "doctest.h"
#include "fairgen/losses.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace fairgen;

namespace {

SeqScore make_score(double p, int length = 4) {
  SeqScore s;
  s.normalized_prob = p;
  s.normalized_logprob = std::log(p);
  s.length = length;
  s.logprob_sum = s.normalized_logprob * length;
  return s;
}

}  // namespace

TEST_CASE("odds closed forms") {
  CHECK(odds(make_score(0.5)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(odds(make_score(0.8)) == doctest::Approx(4.0).epsilon(1e-12));
  for (const double p : {0.05, 0.3, 0.45, 0.71, 0.9}) {
    CHECK(odds(make_score(p)) * odds(make_score(1.0 - p)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SeqScore degenerate = make_score(0.5);
  degenerate.normalized_prob = 1.0;
  CHECK_THROWS_AS(odds(degenerate), std::domain_error);
  degenerate.normalized_prob = 0.0;
  CHECK_THROWS_AS(odds(degenerate), std::domain_error);
}

TEST_CASE("odds_ratio closed forms") {
  CHECK(odds_ratio(make_score(0.37), make_score(0.37)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(odds_ratio(make_score(0.8), make_score(0.5)) == doctest::Approx(4.0).epsilon(1e-12));
  for (const double pw : {0.2, 0.6, 0.9}) {
    for (const double pl : {0.1, 0.5, 0.8}) {
      CHECK(odds_ratio(make_score(pw), make_score(pl)) *
                odds_ratio(make_score(pl), make_score(pw)) ==
            doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("orpo closed forms") {
  CHECK(orpo_value(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // p_w = 0.8, p_l = 0.2: OR = 16, loss = -log sigmoid(log 16) = log(17/16).
  const double lor = log_odds_ratio(make_score(0.8), make_score(0.2));
  CHECK(lor == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(orpo_value(lor) == doctest::Approx(std::log(17.0 / 16.0)).epsilon(1e-9));
  CHECK(orpo_value(lor) == doctest::Approx(0.060625).epsilon(1e-4));

  // Strictly decreasing in the log odds ratio.
  double prev = orpo_value(-6.0);
  for (double x = -5.5; x <= 6.0; x += 0.5) {
    const double cur = orpo_value(x);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("bpo closed forms and bounds") {
  CHECK(bpo_value(0.0) == 0.0);
  // p_i = 0.8, p_j = 0.5: OR = 4, sigmoid(log 4) = 0.8, loss = log(1 + 0.09).
  const double lor = log_odds_ratio(make_score(0.8), make_score(0.5));
  CHECK(lor == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(bpo_value(lor) == doctest::Approx(std::log(1.09)).epsilon(1e-9));
  CHECK(bpo_value(lor) == doctest::Approx(0.086178).epsilon(1e-4));

  // Mathematically the value lives in [0, log(5/4)); in doubles sigmoid
  // saturates to 1 near |x| ~ 37 and the supremum is attained exactly.
  const double bound = std::log(1.25);
  for (double x = -40.0; x <= 40.0; x += 0.37) {
    const double v = bpo_value(x);
    CHECK(v >= 0.0);
    CHECK(v <= bound);
    if (std::abs(x) <= 30.0) {
      CHECK(v < bound);
    }
    CHECK(v == bpo_value(-x));  // exact, via the |x| route
  }
  CHECK(bpo_value(1e9) == bound);
}

TEST_CASE("dpo Bradley-Terry preference") {
  CHECK(dpo_bt_preference(-3.0, -4.0, -3.0, -4.0, 1.0) == 0.5);
  CHECK(dpo_bt_preference(std::log(3.0), 0.0, 0.0, 0.0, 1.0) ==
        doctest::Approx(0.75).epsilon(1e-12));

  // Monotone in the reward gap.
  double prev = 0.0;
  for (double gap = -4.0; gap <= 4.0; gap += 0.25) {
    const double p = dpo_bt_preference(gap, 0.0, 0.0, 0.0, 1.0);
    CHECK(p > prev);
    prev = p;
  }

  // Exact complement, any operand order.
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    const double lpw = -8.0 * rng.uniform();
    const double lpl = -8.0 * rng.uniform();
    const double lrw = -8.0 * rng.uniform();
    const double lrl = -8.0 * rng.uniform();
    const double beta = 0.1 + 3.0 * rng.uniform();
    const double a = dpo_bt_preference(lpw, lpl, lrw, lrl, beta);
    const double b = dpo_bt_preference(lpl, lpw, lrl, lrw, beta);
    CHECK(a + b == 1.0);
  }
  CHECK_THROWS_AS(dpo_bt_preference(0, 0, 0, 0, 0.0), std::domain_error);
}

TEST_CASE("nll_loss closed form and errors") {
  Vocabulary vocab;
  vocab.text_tokens = 1;
  vocab.image_tokens = 4;
  vocab.labels = {"a", "b"};
  const ARModel model(vocab, 2, 3, 1);
  const std::vector<PromptedSequence> batch = {{0, {1, 2, 3}}, {0, {4, 4, 4}}};
  const LossValue loss = nll_loss(model, batch);
  CHECK(loss.value == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(nll_loss(model, std::span<const PromptedSequence>{}), std::domain_error);
}

TEST_CASE("nll_loss decreases under SGD on a tiny corpus") {
  ARModel model = test::random_model(3, 4, 1, 3, 1);
  Rng rng(9);
  const std::vector<PromptedSequence> batch = {{0, test::random_sequence(model, rng)},
                                               {0, test::random_sequence(model, rng)}};
  double prev = nll_loss(model, batch).value;
  for (int step = 0; step < 50; ++step) {
    const LossValue loss = nll_loss(model, batch);
    for (const auto& [key, grad_row] : loss.grads) {
      auto& row = model.logits().at_or_zero(key);
      for (std::size_t i = 0; i < row.size(); ++i) {
        row[i] -= 0.1 * grad_row[i];
      }
    }
    const double cur = nll_loss(model, batch).value;
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(41);
  for (std::uint64_t trial = 0; trial < 6; ++trial) {
    ARModel model = test::random_model(100 + trial, 4, 1, 3, 1, 3.0);
    const TokenSequence ya = test::random_sequence(model, rng);
    TokenSequence yb = test::random_sequence(model, rng);
    if (yb == ya) {
      yb[0] = model.vocab().image_token((model.vocab().image_index(yb[0]) + 1) % 4);
    }
    const std::vector<PromptedSequence> batch = {{0, ya}, {0, yb}};

    {
      const LossValue loss = nll_loss(model, batch);
      const double worst = test::max_grad_fd_deviation(
          model, loss.grads, [&] { return nll_loss(model, batch).value; });
      CHECK(worst < 1e-6);
    }
    {
      const LossValue loss = orpo_loss(model, 0, ya, yb);
      const double worst = test::max_grad_fd_deviation(
          model, loss.grads, [&] { return orpo_loss(model, 0, ya, yb).value; });
      CHECK(worst < 1e-6);
    }
    {
      const LossValue loss = bpo_pair_loss(model, 0, ya, yb);
      const double worst = test::max_grad_fd_deviation(
          model, loss.grads, [&] { return bpo_pair_loss(model, 0, ya, yb).value; });
      CHECK(worst < 1e-6);
    }
    {
      BalancedRecord record;
      record.prompt_id = 0;
      record.group_sequences = {ya, yb, test::random_sequence(model, rng)};
      const LossValue loss = bpo_multigroup_loss(model, record);
      const double worst = test::max_grad_fd_deviation(
          model, loss.grads, [&] { return bpo_multigroup_loss(model, record).value; });
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("bpo_pair_loss is symmetric and zero only at equal scores") {
  ARModel model = test::random_model(55, 4, 1, 4, 1);
  Rng rng(13);
  const TokenSequence ya = test::random_sequence(model, rng);
  TokenSequence yb = test::random_sequence(model, rng);
  if (yb == ya) {
    yb[0] = model.vocab().image_token((model.vocab().image_index(yb[0]) + 1) % 4);
  }

  const LossValue ab = bpo_pair_loss(model, 0, ya, yb);
  const LossValue ba = bpo_pair_loss(model, 0, yb, ya);
  CHECK(std::abs(ab.value - ba.value) <= 1e-12);
  CHECK(ab.value > 0.0);
  CHECK(ab.grads.max_abs() > 0.0);

  const LossValue same = bpo_pair_loss(model, 0, ya, ya);
  CHECK(same.value == 0.0);
  CHECK(same.grads.max_abs() == 0.0);
}

TEST_CASE("repeated bpo steps shrink the log odds gap monotonically") {
  ARModel model = test::random_model(77, 4, 1, 4, 1);
  Rng rng(19);
  const TokenSequence ya = test::random_sequence(model, rng);
  TokenSequence yb = test::random_sequence(model, rng);
  yb[0] = model.vocab().image_token((model.vocab().image_index(ya[0]) + 1) % 4);

  const auto gap = [&] {
    return std::abs(log_odds_ratio(score_sequence(model, 0, ya), score_sequence(model, 0, yb)));
  };
  double prev = gap();
  for (int step = 0; step < 40; ++step) {
    const LossValue loss = bpo_pair_loss(model, 0, ya, yb);
    for (const auto& [key, grad_row] : loss.grads) {
      auto& row = model.logits().at_or_zero(key);
      for (std::size_t i = 0; i < row.size(); ++i) {
        row[i] -= 1e-2 * grad_row[i];
      }
    }
    const double cur = gap();
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("one orpo step increases the log odds ratio") {
  ARModel model = test::random_model(91, 4, 1, 4, 1);
  Rng rng(23);
  const TokenSequence yw = test::random_sequence(model, rng);
  TokenSequence yl = test::random_sequence(model, rng);
  yl[0] = model.vocab().image_token((model.vocab().image_index(yw[0]) + 1) % 4);

  const double before =
      log_odds_ratio(score_sequence(model, 0, yw), score_sequence(model, 0, yl));
  const LossValue loss = orpo_loss(model, 0, yw, yl);
  for (const auto& [key, grad_row] : loss.grads) {
    auto& row = model.logits().at_or_zero(key);
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] -= 1e-3 * grad_row[i];
    }
  }
  const double after =
      log_odds_ratio(score_sequence(model, 0, yw), score_sequence(model, 0, yl));
  CHECK(after > before);
}

TEST_CASE("bpo_multigroup_loss structure") {
  ARModel model = test::random_model(121, 4, 1, 4, 1);
  Rng rng(29);

  BalancedRecord record;
  record.prompt_id = 0;
  for (int g = 0; g < 4; ++g) {
    record.group_sequences.push_back(test::random_sequence(model, rng));
  }

  SUBCASE("equal sequences give zero") {
    BalancedRecord same;
    same.prompt_id = 0;
    same.group_sequences.assign(3, record.group_sequences[0]);
    CHECK(bpo_multigroup_loss(model, same).value == 0.0);
  }

  SUBCASE("K=2 cyclic equals twice the pair loss") {
    BalancedRecord two;
    two.prompt_id = 0;
    two.group_sequences = {record.group_sequences[0], record.group_sequences[1]};
    const double pair =
        bpo_pair_loss(model, 0, two.group_sequences[0], two.group_sequences[1]).value;
    CHECK(bpo_multigroup_loss(model, two).value == doctest::Approx(2.0 * pair).epsilon(1e-12));
  }

  SUBCASE("invariant under cyclic relabeling") {
    const double base = bpo_multigroup_loss(model, record).value;
    for (std::size_t rot = 1; rot < record.group_sequences.size(); ++rot) {
      BalancedRecord rotated;
      rotated.prompt_id = 0;
      for (std::size_t g = 0; g < record.group_sequences.size(); ++g) {
        rotated.group_sequences.push_back(
            record.group_sequences[(g + rot) % record.group_sequences.size()]);
      }
      CHECK(bpo_multigroup_loss(model, rotated).value == doctest::Approx(base).epsilon(1e-12));
    }
  }

  SUBCASE("all-pairs variant sums every ordered pair") {
    double expected = 0.0;
    for (std::size_t a = 0; a < record.group_sequences.size(); ++a) {
      for (std::size_t b = 0; b < record.group_sequences.size(); ++b) {
        if (a != b) {
          expected += bpo_pair_loss(model, 0, record.group_sequences[a],
                                    record.group_sequences[b])
                          .value;
        }
      }
    }
    CHECK(bpo_multigroup_loss(model, record, BpoVariant::all_pairs).value ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("K < 2 is a domain error") {
    BalancedRecord bad;
    bad.prompt_id = 0;
    bad.group_sequences = {record.group_sequences[0]};
    CHECK_THROWS_AS(bpo_multigroup_loss(model, bad), std::domain_error);
  }

  SUBCASE("bounded by K log(5/4)") {
    const double v = bpo_multigroup_loss(model, record).value;
    CHECK(v >= 0.0);
    CHECK(v < 4.0 * std::log(1.25));
  }
}

TEST_CASE("score_sequence raw-product mode") {
  ARModel model = test::random_model(131, 4, 1, 4, 1);
  Rng rng(37);
  const TokenSequence z = test::random_sequence(model, rng);
  const SeqScore norm = score_sequence(model, 0, z, ScoreMode::length_normalized);
  const SeqScore raw = score_sequence(model, 0, z, ScoreMode::raw_product);
  CHECK(raw.logprob_sum == norm.logprob_sum);
  CHECK(raw.normalized_logprob == raw.logprob_sum);
  CHECK(norm.normalized_logprob == doctest::Approx(norm.logprob_sum / 4.0).epsilon(1e-12));
  CHECK(raw.normalized_prob < norm.normalized_prob);
  CHECK(raw.normalized_prob > 0.0);
}
