#include "fairgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fairgen/rng.hpp"

namespace fairgen {

namespace {

double kl_row(std::span<const double> p, std::span<const double> q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) {
      continue;
    }
    if (q[i] == 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    sum += p[i] * std::log(p[i] / q[i]);
  }
  return sum;
}

void check_comparable(const EmpiricalDist& p, const EmpiricalDist& q) {
  if (p.pooling != q.pooling) {
    throw std::invalid_argument("cannot compare distributions with different pooling modes");
  }
  if (p.probs.size() != q.probs.size()) {
    throw std::invalid_argument("distribution position counts differ");
  }
  for (std::size_t r = 0; r < p.probs.size(); ++r) {
    if (p.probs[r].size() != q.probs[r].size()) {
      throw std::invalid_argument("distribution alphabets differ");
    }
  }
}

}  // namespace

double rd_bias(const FreqVector& fv) {
  const int k = static_cast<int>(fv.freqs.size());
  if (k < 2) {
    throw std::domain_error("rd_bias needs at least two groups");
  }
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      sum += std::abs(fv.freqs[i] - fv.freqs[j]);
    }
  }
  return sum / (static_cast<double>(k) * (k - 1) / 2.0);
}

FreqVector label_freqs(std::span<const GenRecord> records, int group_count) {
  if (records.empty()) {
    throw std::domain_error("label_freqs needs at least one record");
  }
  if (group_count < 2) {
    throw std::domain_error("label_freqs needs at least two groups");
  }
  FreqVector fv;
  fv.freqs.assign(static_cast<std::size_t>(group_count), 0.0);
  fv.sample_count = static_cast<int>(records.size());
  for (const GenRecord& r : records) {
    if (r.label < 0 || r.label >= group_count) {
      throw std::domain_error("record label " + std::to_string(r.label) + " out of range");
    }
    fv.freqs[static_cast<std::size_t>(r.label)] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(records.size());
  for (double& f : fv.freqs) {
    f *= inv;
  }
  return fv;
}

EmpiricalDist empirical_dist(std::span<const TokenSequence> samples, const Vocabulary& vocab,
                             Pooling pooling) {
  if (samples.empty()) {
    throw std::domain_error("empirical_dist needs at least one sample");
  }
  const std::size_t seq_len = samples.front().size();
  const std::size_t v = static_cast<std::size_t>(vocab.image_tokens);

  EmpiricalDist dist;
  dist.pooling = pooling;
  dist.sample_count = static_cast<int>(samples.size());
  const std::size_t rows = pooling == Pooling::unigram_pooled ? 1 : seq_len;
  dist.probs.assign(rows, std::vector<double>(v, 0.0));

  for (const TokenSequence& z : samples) {
    if (z.size() != seq_len) {
      throw std::domain_error("empirical_dist needs equal-length sequences");
    }
    for (std::size_t t = 0; t < seq_len; ++t) {
      if (!vocab.is_image_token(z[t])) {
        throw std::domain_error("token id " + std::to_string(z[t]) + " outside the image alphabet");
      }
      const std::size_t row = pooling == Pooling::unigram_pooled ? 0 : t;
      dist.probs[row][static_cast<std::size_t>(vocab.image_index(z[t]))] += 1.0;
    }
  }

  const double denom = pooling == Pooling::unigram_pooled
                           ? static_cast<double>(samples.size()) * static_cast<double>(seq_len)
                           : static_cast<double>(samples.size());
  for (auto& row : dist.probs) {
    for (double& c : row) {
      c /= denom;
    }
  }
  return dist;
}

double kl(const EmpiricalDist& p, const EmpiricalDist& q) {
  check_comparable(p, q);
  double total = 0.0;
  for (std::size_t r = 0; r < p.probs.size(); ++r) {
    total += kl_row(p.probs[r], q.probs[r]);
  }
  return total / static_cast<double>(p.probs.size());
}

double jsd(const EmpiricalDist& p, const EmpiricalDist& q) {
  check_comparable(p, q);
  double total = 0.0;
  std::vector<double> mix;
  for (std::size_t r = 0; r < p.probs.size(); ++r) {
    const auto& pr = p.probs[r];
    const auto& qr = q.probs[r];
    mix.resize(pr.size());
    for (std::size_t i = 0; i < pr.size(); ++i) {
      mix[i] = 0.5 * (pr[i] + qr[i]);
    }
    total += 0.5 * kl_row(pr, mix) + 0.5 * kl_row(qr, mix);
  }
  return total / static_cast<double>(p.probs.size());
}

LocateReport locate_lm_bias(const ARModel& model, int neutral_prompt,
                            std::span<const int> augmented_prompts, int samples_per_prompt,
                            const LabelOracle& oracle, Pooling pooling, std::uint64_t seed) {
  if (samples_per_prompt < 100) {
    throw std::domain_error("locate_lm_bias needs at least 100 samples per prompt");
  }
  if (augmented_prompts.empty()) {
    throw std::domain_error("locate_lm_bias needs one augmented prompt per group");
  }

  const auto sample_prompt = [&](int prompt_id) {
    std::vector<TokenSequence> out;
    out.reserve(static_cast<std::size_t>(samples_per_prompt));
    const std::uint64_t prompt_seed = derive_seed(seed, static_cast<std::uint64_t>(prompt_id));
    for (int i = 0; i < samples_per_prompt; ++i) {
      out.push_back(
          model.sample_sequence(prompt_id, derive_seed(prompt_seed, static_cast<std::uint64_t>(i))));
    }
    return out;
  };

  const std::vector<TokenSequence> neutral_samples = sample_prompt(neutral_prompt);
  const EmpiricalDist neutral_dist = empirical_dist(neutral_samples, model.vocab(), pooling);

  LocateReport report;
  report.neutral_prompt = neutral_prompt;
  report.jsd_per_group.reserve(augmented_prompts.size());
  for (const int aug : augmented_prompts) {
    const std::vector<TokenSequence> aug_samples = sample_prompt(aug);
    const EmpiricalDist aug_dist = empirical_dist(aug_samples, model.vocab(), pooling);
    report.jsd_per_group.push_back(jsd(neutral_dist, aug_dist));
  }

  std::vector<int> counts(augmented_prompts.size(), 0);
  for (const TokenSequence& z : neutral_samples) {
    const int label = oracle(z);
    if (label >= 0 && label < static_cast<int>(counts.size())) {
      ++counts[static_cast<std::size_t>(label)];
    }
  }
  report.majority_group = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
  report.argmin_group = static_cast<int>(
      std::min_element(report.jsd_per_group.begin(), report.jsd_per_group.end()) -
      report.jsd_per_group.begin());
  report.aligned = report.argmin_group == report.majority_group;
  return report;
}

}  // namespace fairgen
