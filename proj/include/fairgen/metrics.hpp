#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fairgen/model.hpp"
#include "fairgen/records.hpp"

namespace fairgen {

// Normalized demographic-label histogram.
struct FreqVector {
  std::vector<double> freqs;
  int sample_count = 0;
};

// Representation disparity: mean absolute pairwise frequency gap,
// 0 = perfectly balanced, 2/K when one group takes all the mass.
double rd_bias(const FreqVector& fv);

FreqVector label_freqs(std::span<const GenRecord> records, int group_count);

// How sampled token sequences are folded into a categorical distribution.
// Sequence-level deltas saturate divergences at realistic sample counts, so
// the pooled unigram distribution is the default; per-position keeps one
// distribution per step and averages divergences across steps.
enum class Pooling {
  unigram_pooled,
  per_position,
};

struct EmpiricalDist {
  Pooling pooling = Pooling::unigram_pooled;
  int sample_count = 0;
  // unigram_pooled: one row over the image alphabet.
  // per_position: seq_len rows.
  std::vector<std::vector<double>> probs;
};

EmpiricalDist empirical_dist(std::span<const TokenSequence> samples, const Vocabulary& vocab,
                             Pooling pooling);

// KL(P||Q) in nats, 0 log 0 := 0. Returns +infinity when P puts mass where
// Q has none; never NaN. Per-position inputs average the per-step values.
double kl(const EmpiricalDist& p, const EmpiricalDist& q);

// Jensen-Shannon divergence, symmetric, in [0, ln 2]. The mixture dominates
// both arguments so the value is always finite.
double jsd(const EmpiricalDist& p, const EmpiricalDist& q);

using LabelOracle = std::function<int(const TokenSequence&)>;

// Output of the language-model bias audit for one neutral prompt: the JSD
// between the neutral-prompt token distribution and each demographically
// augmented prompt's distribution, plus which group the neutral samples
// actually majority-decode to.
struct LocateReport {
  int neutral_prompt = 0;
  std::vector<double> jsd_per_group;
  int majority_group = 0;
  int argmin_group = 0;
  bool aligned = false;  // argmin-JSD group == majority generated group
};

LocateReport locate_lm_bias(const ARModel& model, int neutral_prompt,
                            std::span<const int> augmented_prompts, int samples_per_prompt,
                            const LabelOracle& oracle, Pooling pooling, std::uint64_t seed);

}  // namespace fairgen
