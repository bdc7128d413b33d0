#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairgen/world.hpp"

namespace fairgen {

// Multinomial logistic-regression probe over encoder embeddings.
struct ProbeModel {
  int classes = 0;
  int dim = 0;
  std::vector<double> weights;  // classes x dim, row-major
  std::vector<double> bias;     // classes
};

// Held-out metrics, macro-averaged over classes.
struct ProbeReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t split_seed = 0;
  int train_size = 0;
  int test_size = 0;
};

// Full-batch gradient descent on softmax cross-entropy. Embeddings are
// shuffled with `seed`, split train/test by `split_ratio` (train fraction),
// and the report is computed on the held-out split only. Throws
// std::domain_error when the training split has fewer than two classes.
// `ce_history`, when given, receives the train cross-entropy after every
// epoch.
std::pair<ProbeModel, ProbeReport> train_probe(std::span<const Embedding> embeddings,
                                               double split_ratio, int epochs, double lr,
                                               std::uint64_t seed,
                                               std::vector<double>* ce_history = nullptr);

// argmax of the affine scores, ties toward the lowest class index.
int predict(const ProbeModel& probe, std::span<const double> values);
int predict(const ProbeModel& probe, const Embedding& e);

std::string probe_report_to_json(const ProbeReport& report);

}  // namespace fairgen
