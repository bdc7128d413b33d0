#include "fairgen/losses.hpp"

#include <cmath>
#include <string>

namespace fairgen {

namespace {

void check_interior(double p) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw std::domain_error("sequence probability " + std::to_string(p) +
                            " outside (0,1); odds undefined");
  }
}

// d log_odds / d normalized_logprob = 1 / (1 - p).
double dlogodds_dm(const SeqScore& s) {
  check_interior(s.normalized_prob);
  return 1.0 / (1.0 - s.normalized_prob);
}

double dm_dlogprob(const SeqScore& s, ScoreMode mode) {
  return mode == ScoreMode::length_normalized ? 1.0 / static_cast<double>(s.length) : 1.0;
}

}  // namespace

SeqScore score_sequence(const ARModel& model, int prompt_id, const TokenSequence& z,
                        ScoreMode mode) {
  SeqScore s;
  s.logprob_sum = model.sequence_logprob(prompt_id, z);
  s.length = static_cast<int>(z.size());
  s.normalized_logprob =
      mode == ScoreMode::length_normalized ? s.logprob_sum / static_cast<double>(s.length)
                                           : s.logprob_sum;
  s.normalized_prob = std::exp(s.normalized_logprob);
  return s;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  // 1 - u is exact here (u in [0.5, 1]), giving the exact complement.
  const double u = 1.0 / (1.0 + std::exp(x));
  return 1.0 - u;
}

double softplus(double x) {
  if (x > 0.0) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

double odds(const SeqScore& score) {
  const double p = score.normalized_prob;
  check_interior(p);
  return p / (1.0 - p);
}

double log_odds(const SeqScore& score) {
  const double p = score.normalized_prob;
  check_interior(p);
  return score.normalized_logprob - std::log1p(-p);
}

double odds_ratio(const SeqScore& winner, const SeqScore& loser) {
  return odds(winner) / odds(loser);
}

double log_odds_ratio(const SeqScore& winner, const SeqScore& loser) {
  return log_odds(winner) - log_odds(loser);
}

double orpo_value(double log_or) { return softplus(-log_or); }

double bpo_value(double log_or) {
  // Routed through |log_or| so that the pair penalty is exactly symmetric.
  const double d = stable_sigmoid(std::abs(log_or)) - 0.5;
  return std::log1p(d * d);
}

double dpo_bt_preference(double logprob_policy_w, double logprob_policy_l,
                         double logprob_ref_w, double logprob_ref_l, double beta) {
  if (!(beta > 0.0)) {
    throw std::domain_error("beta must be positive");
  }
  const double reward_w = logprob_policy_w - logprob_ref_w;
  const double reward_l = logprob_policy_l - logprob_ref_l;
  return stable_sigmoid(beta * (reward_w - reward_l));
}

LossValue nll_loss(const ARModel& model, std::span<const PromptedSequence> batch) {
  if (batch.empty()) {
    throw std::domain_error("nll_loss needs a non-empty batch");
  }
  LossValue loss(model.vocab().image_tokens);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const PromptedSequence& example : batch) {
    loss.value -= inv * model.sequence_logprob(example.prompt_id, example.tokens);
    model.accumulate_grad_sequence_logprob(example.prompt_id, example.tokens, -inv, loss.grads);
  }
  return loss;
}

LossValue orpo_loss(const ARModel& model, int prompt_id, const TokenSequence& y_w,
                    const TokenSequence& y_l, ScoreMode mode) {
  const SeqScore sw = score_sequence(model, prompt_id, y_w, mode);
  const SeqScore sl = score_sequence(model, prompt_id, y_l, mode);
  const double x = log_odds_ratio(sw, sl);

  LossValue loss(model.vocab().image_tokens);
  loss.value = orpo_value(x);
  // d softplus(-x) / dx = -sigmoid(-x)
  const double dvalue_dx = -stable_sigmoid(-x);
  const double coeff_w = dvalue_dx * dlogodds_dm(sw) * dm_dlogprob(sw, mode);
  const double coeff_l = -dvalue_dx * dlogodds_dm(sl) * dm_dlogprob(sl, mode);
  model.accumulate_grad_sequence_logprob(prompt_id, y_w, coeff_w, loss.grads);
  model.accumulate_grad_sequence_logprob(prompt_id, y_l, coeff_l, loss.grads);
  return loss;
}

LossValue bpo_pair_loss(const ARModel& model, int prompt_id, const TokenSequence& y_i,
                        const TokenSequence& y_j, ScoreMode mode) {
  const SeqScore si = score_sequence(model, prompt_id, y_i, mode);
  const SeqScore sj = score_sequence(model, prompt_id, y_j, mode);
  const double x = log_odds_ratio(si, sj);

  LossValue loss(model.vocab().image_tokens);
  loss.value = bpo_value(x);

  const double u = stable_sigmoid(std::abs(x));
  const double d = u - 0.5;
  double dvalue_dx = 2.0 * d * u * (1.0 - u) / (1.0 + d * d);
  if (x < 0.0) {
    dvalue_dx = -dvalue_dx;
  } else if (x == 0.0) {
    dvalue_dx = 0.0;
  }
  const double coeff_i = dvalue_dx * dlogodds_dm(si) * dm_dlogprob(si, mode);
  const double coeff_j = -dvalue_dx * dlogodds_dm(sj) * dm_dlogprob(sj, mode);
  model.accumulate_grad_sequence_logprob(prompt_id, y_i, coeff_i, loss.grads);
  model.accumulate_grad_sequence_logprob(prompt_id, y_j, coeff_j, loss.grads);
  return loss;
}

LossValue bpo_multigroup_loss(const ARModel& model, const BalancedRecord& record,
                              BpoVariant variant, ScoreMode mode) {
  const int k = static_cast<int>(record.group_sequences.size());
  if (k < 2) {
    throw std::domain_error("balanced record needs at least two group sequences");
  }
  LossValue total(model.vocab().image_tokens);
  auto add_pair = [&](int a, int b) {
    LossValue pair = bpo_pair_loss(model, record.prompt_id, record.group_sequences[a],
                                   record.group_sequences[b], mode);
    total.value += pair.value;
    total.grads.add_scaled(pair.grads, 1.0);
  };
  if (variant == BpoVariant::cyclic) {
    for (int g = 0; g < k; ++g) {
      add_pair(g, (g + 1) % k);
    }
  } else {
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        if (a != b) {
          add_pair(a, b);
        }
      }
    }
  }
  return total;
}

}  // namespace fairgen
