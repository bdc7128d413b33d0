#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairgen/losses.hpp"
#include "fairgen/metrics.hpp"
#include "fairgen/model.hpp"
#include "fairgen/records.hpp"
#include "fairgen/world.hpp"

namespace fairgen {

struct TrainConfig {
  double lr = 1e-2;
  int batch_size = 16;
  int sft_epochs = 10;
  int bpo_epochs = 2;
  double lambda_nll_anchor = 0.0;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  int eval_samples_per_prompt = 160;
  BpoVariant loss_variant = BpoVariant::cyclic;
  ScoreMode score_mode = ScoreMode::length_normalized;
  double logit_clamp = 15.0;
  // Logical index of the first epoch this run trains. A run resumed from a
  // checkpoint with epoch_offset = k reproduces the k+1st.. epochs of the
  // unsplit run exactly.
  int epoch_offset = 0;
  double temperature = 1.0;

  void validate() const;
};

// Reads the [train] section; missing keys keep their defaults.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig train_config_from_toml_text(const std::string& text, const std::string& origin);

struct EpochRow {
  int epoch = 0;
  std::string stage;
  double nll_train = 0.0;
  std::optional<double> nll_heldout;
  std::optional<double> rd;
  std::optional<double> bpo_loss;
};

// Optional per-epoch evaluation: sampled-bias RD against the world oracle
// and a held-out content-token NLL as the fidelity proxy.
struct EvalHooks {
  const WorldSpec* world = nullptr;
  std::vector<int> eval_prompts;
  std::vector<PromptedSequence> heldout;
  std::uint64_t eval_seed = 0;
};

struct StageResult {
  std::vector<EpochRow> rows;
  std::size_t clamp_activations = 0;
  // bpo only: mean |log OR| over consecutive group pairs, entry 0 measured
  // before training, then one entry per epoch.
  std::vector<double> mean_abs_log_or;
};

// Algorithm stage 1: minibatch SGD on sequence NLL.
StageResult sft_stage(ARModel& model, std::span<const PromptedSequence> dataset,
                      const TrainConfig& cfg, const EvalHooks* hooks = nullptr);

// Algorithm stage 2: minibatch SGD on the multi-group balanced penalty,
// optionally anchored by lambda * record NLL.
StageResult bpo_stage(ARModel& model, std::span<const BalancedRecord> dataset,
                      const TrainConfig& cfg, const EvalHooks* hooks = nullptr);

struct PromptBias {
  int prompt_id = 0;
  FreqVector freqs;
  double rd = 0.0;
};

struct BiasEval {
  std::vector<PromptBias> per_prompt;
  FreqVector overall;
  double macro_rd = 0.0;
};

// Samples N sequences per prompt, labels them with the oracle and
// aggregates label frequencies and RD per prompt and macro-averaged.
BiasEval evaluate_bias(const ARModel& model, std::span<const int> prompts, int samples_per_prompt,
                       const LabelOracle& oracle, int group_count, std::uint64_t seed,
                       double temperature = 1.0);

// Mean dataset NLL without gradient bookkeeping.
double dataset_nll(const ARModel& model, std::span<const PromptedSequence> dataset);

// Fidelity proxy: mean negative log-probability per non-signal (content)
// token over a held-out set.
double heldout_content_nll(const ARModel& model, std::span<const PromptedSequence> heldout,
                           std::span<const int> signal_positions);

// Mean |log OR| over each record's consecutive cyclic group pairs.
double mean_abs_log_odds_ratio(const ARModel& model, std::span<const BalancedRecord> dataset,
                               ScoreMode mode);

void write_run_report_csv(std::span<const EpochRow> rows, const std::filesystem::path& path);

}  // namespace fairgen
