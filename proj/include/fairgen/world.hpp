#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fairgen/model.hpp"
#include "fairgen/records.hpp"

namespace fairgen {

// Parametric generative world standing in for the vision tokenizer and the
// diffusion-based data pipeline. Demographic identity is carried by the
// token distributions at `signal_positions`; every other position draws
// from a shared content distribution. Because the generating process is
// known, the Bayes-optimal attribute classifier and the exact bias of any
// dataset are available in closed form.
struct WorldSpec {
  Vocabulary vocab;
  int seq_len = 8;
  std::vector<int> signal_positions;               // sorted, unique, < seq_len
  std::vector<std::vector<double>> signal_dists;   // K x image_tokens
  std::vector<double> content_dist;                // image_tokens
  int embed_dim = 8;
  double embed_noise_sigma = 0.0;

  int group_count() const { return vocab.group_count(); }

  // Normalizes all distributions in place, then validates the invariants
  // (pairwise total-variation separation >= 0.2, positions in range,
  // embed_dim wide enough for the group block).
  void finalize();
  void validate() const;
};

// Total variation distance between two categorical distributions.
double total_variation(std::span<const double> a, std::span<const double> b);

// Encoder embedding of one token sequence: a one-hot group block for the
// oracle label, content-hash features on the remaining dims, plus optional
// Gaussian noise.
struct Embedding {
  std::vector<double> values;
  int label = 0;
};

Embedding encode(const WorldSpec& world, const TokenSequence& z, std::uint64_t seed);

// Bayes-optimal attribute oracle: argmax over groups of the signal-position
// likelihood, ties broken toward the lowest group index.
int classify(const WorldSpec& world, const TokenSequence& z);

// For each prompt, `per_group` records each holding one sequence per group;
// demographic frequencies are exactly uniform by construction and every
// sequence decodes to its intended label under the oracle.
std::vector<BalancedRecord> gen_balanced_dataset(const WorldSpec& world, std::span<const int> prompts,
                                                 int per_group, std::uint64_t seed);

// Skewed pretraining corpus: each record's group is drawn from `skew`, the
// sequence from that group's distributions, and the label records the drawn
// (ground-truth) group. Records cycle through `prompts` round-robin.
std::vector<GenRecord> gen_biased_pretrain(const WorldSpec& world, std::span<const int> prompts,
                                           std::span<const double> skew, int total,
                                           std::uint64_t seed);

std::vector<Embedding> encode_dataset(const WorldSpec& world,
                                      std::span<const BalancedRecord> records, std::uint64_t seed);

// Prompt-id layout used by the end-to-end pipelines: base (neutral) prompts
// first, then one augmented prompt per (base, group) pair.
struct PromptLayout {
  int base_prompts = 0;
  int groups = 0;

  int neutral_id(int base) const { return base; }
  int augmented_id(int base, int group) const {
    return base_prompts + base * groups + group;
  }
  int total_prompts() const { return base_prompts * (groups + 1); }
};

// ---------------------------------------------------------------------------
// Files: WorldSpec in TOML, datasets and embeddings in JSONL.
// ---------------------------------------------------------------------------

WorldSpec load_world(const std::filesystem::path& path);
void save_world(const WorldSpec& world, const std::filesystem::path& path);

void write_genrecords_jsonl(std::span<const GenRecord> records, const std::filesystem::path& path);
std::vector<GenRecord> read_genrecords_jsonl(const std::filesystem::path& path);
void write_balanced_jsonl(std::span<const BalancedRecord> records, const std::filesystem::path& path);
std::vector<BalancedRecord> read_balanced_jsonl(const std::filesystem::path& path);
void write_embeddings_jsonl(std::span<const Embedding> embeddings, const std::filesystem::path& path);
std::vector<Embedding> read_embeddings_jsonl(const std::filesystem::path& path);

// Compact disjoint-support world used by tests and the sample configs:
// two tokens per group at the signal positions, uniform content over the
// remaining alphabet.
WorldSpec make_disjoint_world(int groups, int image_tokens = 16, int seq_len = 8,
                              std::vector<int> signal_positions = {0, 1},
                              double embed_noise_sigma = 0.1);

}  // namespace fairgen
