#pragma once

#include <span>

#include "fairgen/model.hpp"
#include "fairgen/records.hpp"

namespace fairgen {

// How a whole sequence is turned into the probability that feeds the odds
// map. The default is the length-normalized geometric mean
// exp(logprob_sum / length); raw products are available for ablation but
// collapse odds(p) toward p for long sequences.
enum class ScoreMode {
  length_normalized,
  raw_product,
};

// Which pairs the multi-group balanced loss sums over: the cyclic
// (d_k, d_{k+1 mod K}) chain, or every ordered pair k != l.
enum class BpoVariant {
  cyclic,
  all_pairs,
};

struct SeqScore {
  double logprob_sum = 0.0;        // nats
  int length = 0;
  double normalized_logprob = 0.0; // logprob_sum / length (or raw)
  double normalized_prob = 0.0;    // exp(normalized_logprob), in (0,1)
};

SeqScore score_sequence(const ARModel& model, int prompt_id, const TokenSequence& z,
                        ScoreMode mode = ScoreMode::length_normalized);

// Numerically stable sigmoid with the exact complement property
// sigmoid(x) + sigmoid(-x) == 1 (bitwise), which several preference
// identities below rely on.
double stable_sigmoid(double x);
double softplus(double x);  // log(1 + e^x)

double odds(const SeqScore& score);                              // p / (1 - p)
double log_odds(const SeqScore& score);
double odds_ratio(const SeqScore& winner, const SeqScore& loser);
double log_odds_ratio(const SeqScore& winner, const SeqScore& loser);

// Closed-form loss maps over the log odds ratio.
double orpo_value(double log_or);  // -log sigmoid(log_or) = softplus(-log_or)
double bpo_value(double log_or);   // log(1 + (sigmoid(log_or) - 1/2)^2)

// Bradley-Terry preference of the winning response under a beta-scaled
// policy/reference log-probability gap. The partition function cancels in
// the difference, so only the four log-probabilities enter.
double dpo_bt_preference(double logprob_policy_w, double logprob_policy_l,
                         double logprob_ref_w, double logprob_ref_l, double beta);

struct LossValue {
  double value = 0.0;
  GradTable grads;  // d value / d model logits

  explicit LossValue(int width) : grads(width) {}
};

// Mean sequence NLL over a batch, with gradients w.r.t. model logits.
LossValue nll_loss(const ARModel& model, std::span<const PromptedSequence> batch);

// ORPO preference loss -log sigmoid(log OR(y_w, y_l)).
LossValue orpo_loss(const ARModel& model, int prompt_id, const TokenSequence& y_w,
                    const TokenSequence& y_l, ScoreMode mode = ScoreMode::length_normalized);

// Balanced odds penalty for one pair of demographic variants. Zero exactly
// when the two sequences score equally; symmetric in its arguments; bounded
// by log(5/4).
LossValue bpo_pair_loss(const ARModel& model, int prompt_id, const TokenSequence& y_i,
                        const TokenSequence& y_j, ScoreMode mode = ScoreMode::length_normalized);

// Multi-group extension: sum of pair penalties over the chosen pair set.
LossValue bpo_multigroup_loss(const ARModel& model, const BalancedRecord& record,
                              BpoVariant variant = BpoVariant::cyclic,
                              ScoreMode mode = ScoreMode::length_normalized);

}  // namespace fairgen
