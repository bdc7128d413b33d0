#include "fairgen/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairgen/kernels.hpp"
#include "fairgen/rng.hpp"
#include "json.hpp"

namespace fairgen {

namespace {

std::span<const double> weight_row(const ProbeModel& m, int k) {
  return std::span<const double>(m.weights.data() + static_cast<std::size_t>(k) * m.dim,
                                 static_cast<std::size_t>(m.dim));
}

void scores_into(const ProbeModel& m, std::span<const double> values, std::span<double> out) {
  for (int k = 0; k < m.classes; ++k) {
    out[static_cast<std::size_t>(k)] = kernels::dot(weight_row(m, k), values) +
                                       m.bias[static_cast<std::size_t>(k)];
  }
}

}  // namespace

int predict(const ProbeModel& probe, std::span<const double> values) {
  if (static_cast<int>(values.size()) != probe.dim) {
    throw std::invalid_argument("embedding dimension does not match probe");
  }
  std::vector<double> scores(static_cast<std::size_t>(probe.classes));
  scores_into(probe, values, scores);
  int best = 0;
  for (int k = 1; k < probe.classes; ++k) {
    if (scores[static_cast<std::size_t>(k)] > scores[static_cast<std::size_t>(best)]) {
      best = k;
    }
  }
  return best;
}

int predict(const ProbeModel& probe, const Embedding& e) { return predict(probe, e.values); }

std::pair<ProbeModel, ProbeReport> train_probe(std::span<const Embedding> embeddings,
                                               double split_ratio, int epochs, double lr,
                                               std::uint64_t seed,
                                               std::vector<double>* ce_history) {
  if (!(split_ratio > 0.0) || !(split_ratio < 1.0)) {
    throw std::domain_error("split_ratio must be strictly between 0 and 1");
  }
  if (embeddings.size() < 2) {
    throw std::domain_error("train_probe needs at least two embeddings");
  }
  if (epochs < 1 || !(lr > 0.0)) {
    throw std::domain_error("train_probe needs epochs >= 1 and lr > 0");
  }

  const int dim = static_cast<int>(embeddings.front().values.size());
  int classes = 0;
  for (const Embedding& e : embeddings) {
    if (static_cast<int>(e.values.size()) != dim) {
      throw std::invalid_argument("embeddings have inconsistent dimensions");
    }
    if (e.label < 0) {
      throw std::domain_error("embedding labels must be non-negative");
    }
    classes = std::max(classes, e.label + 1);
  }

  std::vector<std::size_t> order(embeddings.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  rng.shuffle(order);

  const int train_size =
      static_cast<int>(std::floor(static_cast<double>(embeddings.size()) * split_ratio));
  const int test_size = static_cast<int>(embeddings.size()) - train_size;
  if (train_size < 1 || test_size < 1) {
    throw std::domain_error("split leaves an empty train or test set");
  }

  std::vector<bool> seen(static_cast<std::size_t>(classes), false);
  for (int i = 0; i < train_size; ++i) {
    seen[static_cast<std::size_t>(embeddings[order[static_cast<std::size_t>(i)]].label)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw std::domain_error("training split holds fewer than two classes");
  }

  ProbeModel m;
  m.classes = classes;
  m.dim = dim;
  m.weights.assign(static_cast<std::size_t>(classes) * dim, 0.0);
  m.bias.assign(static_cast<std::size_t>(classes), 0.0);

  std::vector<double> grad_w(m.weights.size());
  std::vector<double> grad_b(m.bias.size());
  std::vector<double> probs(static_cast<std::size_t>(classes));
  const double inv_train = 1.0 / static_cast<double>(train_size);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    double ce = 0.0;
    for (int i = 0; i < train_size; ++i) {
      const Embedding& e = embeddings[order[static_cast<std::size_t>(i)]];
      scores_into(m, e.values, probs);
      const double logp = kernels::log_prob_at(probs, static_cast<std::size_t>(e.label));
      ce -= inv_train * logp;
      kernels::softmax(probs, probs);
      probs[static_cast<std::size_t>(e.label)] -= 1.0;
      for (int k = 0; k < classes; ++k) {
        const double err = probs[static_cast<std::size_t>(k)];
        kernels::axpy(err, e.values,
                      std::span<double>(grad_w.data() + static_cast<std::size_t>(k) * dim,
                                        static_cast<std::size_t>(dim)));
        grad_b[static_cast<std::size_t>(k)] += err;
      }
    }
    kernels::axpy(-lr * inv_train, grad_w, m.weights);
    kernels::axpy(-lr * inv_train, grad_b, m.bias);
    if (ce_history != nullptr) {
      ce_history->push_back(ce);
    }
  }

  // Held-out confusion matrix and macro scores.
  std::vector<int> confusion(static_cast<std::size_t>(classes) * classes, 0);
  int correct = 0;
  for (int i = train_size; i < static_cast<int>(embeddings.size()); ++i) {
    const Embedding& e = embeddings[order[static_cast<std::size_t>(i)]];
    const int guess = predict(m, e);
    confusion[static_cast<std::size_t>(e.label) * classes + guess] += 1;
    if (guess == e.label) {
      ++correct;
    }
  }

  ProbeReport report;
  report.split_seed = seed;
  report.train_size = train_size;
  report.test_size = test_size;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(test_size);
  double precision_sum = 0.0;
  double recall_sum = 0.0;
  double f1_sum = 0.0;
  for (int k = 0; k < classes; ++k) {
    int tp = confusion[static_cast<std::size_t>(k) * classes + k];
    int predicted = 0;
    int actual = 0;
    for (int j = 0; j < classes; ++j) {
      predicted += confusion[static_cast<std::size_t>(j) * classes + k];
      actual += confusion[static_cast<std::size_t>(k) * classes + j];
    }
    const double precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = actual > 0 ? static_cast<double>(tp) / actual : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    precision_sum += precision;
    recall_sum += recall;
    f1_sum += f1;
  }
  report.precision = precision_sum / classes;
  report.recall = recall_sum / classes;
  report.f1 = f1_sum / classes;
  return {std::move(m), report};
}

std::string probe_report_to_json(const ProbeReport& report) {
  const nlohmann::json j = {
      {"accuracy", report.accuracy},   {"precision", report.precision},
      {"recall", report.recall},       {"f1", report.f1},
      {"split_seed", report.split_seed}, {"train_size", report.train_size},
      {"test_size", report.test_size},
  };
  return j.dump(2) + "\n";
}

}  // namespace fairgen
