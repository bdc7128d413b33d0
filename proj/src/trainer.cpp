#include "fairgen/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fairgen/io.hpp"
#include "fairgen/kernels.hpp"
#include "fairgen/rng.hpp"
#include "fairgen/toml.hpp"

namespace fairgen {

namespace {

constexpr std::uint64_t kSftStreamTag = 1;
constexpr std::uint64_t kBpoStreamTag = 2;

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// One SGD step from an accumulated gradient table, with optional momentum
// and post-step clamping of every touched row.
class SgdStepper {
 public:
  SgdStepper(ARModel& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), velocity_(model.vocab().image_tokens) {}

  void apply(const GradTable& grads) {
    if (cfg_.lr == 0.0) {
      return;
    }
    if (cfg_.momentum > 0.0) {
      velocity_.scale(cfg_.momentum);
      velocity_.add_scaled(grads, 1.0);
      step_from(velocity_);
    } else {
      step_from(grads);
    }
  }

  std::size_t clamp_activations() const { return clamp_activations_; }

 private:
  void step_from(const GradTable& table) {
    for (const auto& [key, grad_row] : table) {
      std::vector<double>& row = model_.logits().at_or_zero(key);
      kernels::axpy(-cfg_.lr, grad_row, row);
      clamp_activations_ += kernels::clamp(row, -cfg_.logit_clamp, cfg_.logit_clamp);
    }
  }

  ARModel& model_;
  const TrainConfig& cfg_;
  GradTable velocity_;
  std::size_t clamp_activations_ = 0;
};

void check_finite(double value, const char* stage) {
  if (!std::isfinite(value)) {
    throw NumericalError(std::string(stage) + " loss became non-finite");
  }
}

std::optional<double> eval_rd(const ARModel& model, const TrainConfig& cfg,
                              const EvalHooks* hooks) {
  if (hooks == nullptr || hooks->world == nullptr || hooks->eval_prompts.empty()) {
    return std::nullopt;
  }
  const WorldSpec& world = *hooks->world;
  const LabelOracle oracle = [&world](const TokenSequence& z) { return classify(world, z); };
  const BiasEval eval =
      evaluate_bias(model, hooks->eval_prompts, cfg.eval_samples_per_prompt, oracle,
                    world.group_count(), hooks->eval_seed, cfg.temperature);
  return eval.macro_rd;
}

std::optional<double> eval_heldout(const ARModel& model, const EvalHooks* hooks) {
  if (hooks == nullptr || hooks->heldout.empty()) {
    return std::nullopt;
  }
  std::span<const int> signal;
  if (hooks->world != nullptr) {
    signal = hooks->world->signal_positions;
  }
  return heldout_content_nll(model, hooks->heldout, signal);
}

}  // namespace

void TrainConfig::validate() const {
  if (lr < 0.0 || !std::isfinite(lr)) {
    throw std::domain_error("lr must be non-negative");
  }
  if (batch_size < 1) {
    throw std::domain_error("batch_size must be at least 1");
  }
  if (sft_epochs < 1 || bpo_epochs < 1) {
    throw std::domain_error("epoch counts must be at least 1");
  }
  if (lambda_nll_anchor < 0.0) {
    throw std::domain_error("lambda_nll_anchor must be non-negative");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::domain_error("momentum must be in [0, 1)");
  }
  if (eval_samples_per_prompt < 1) {
    throw std::domain_error("eval_samples_per_prompt must be at least 1");
  }
  if (!(logit_clamp > 0.0)) {
    throw std::domain_error("logit_clamp must be positive");
  }
  if (epoch_offset < 0) {
    throw std::domain_error("epoch_offset must be non-negative");
  }
  if (!(temperature > 0.0)) {
    throw std::domain_error("temperature must be positive");
  }
}

TrainConfig train_config_from_toml_text(const std::string& text, const std::string& origin) {
  const toml::Table t = toml::parse_string(text, origin);
  TrainConfig cfg;
  cfg.lr = t.get_double("train.lr", cfg.lr);
  cfg.batch_size = static_cast<int>(t.get_int("train.batch_size", cfg.batch_size));
  cfg.sft_epochs = static_cast<int>(t.get_int("train.sft_epochs", cfg.sft_epochs));
  cfg.bpo_epochs = static_cast<int>(t.get_int("train.bpo_epochs", cfg.bpo_epochs));
  cfg.lambda_nll_anchor = t.get_double("train.lambda_nll_anchor", cfg.lambda_nll_anchor);
  cfg.momentum = t.get_double("train.momentum", cfg.momentum);
  cfg.seed = static_cast<std::uint64_t>(t.get_int("train.seed", 0));
  cfg.eval_samples_per_prompt =
      static_cast<int>(t.get_int("train.eval_samples_per_prompt", cfg.eval_samples_per_prompt));
  cfg.logit_clamp = t.get_double("train.logit_clamp", cfg.logit_clamp);
  cfg.epoch_offset = static_cast<int>(t.get_int("train.epoch_offset", cfg.epoch_offset));
  cfg.temperature = t.get_double("train.temperature", cfg.temperature);

  const std::string variant = t.get_string("train.loss_variant", "cyclic");
  if (variant == "cyclic") {
    cfg.loss_variant = BpoVariant::cyclic;
  } else if (variant == "all-pairs") {
    cfg.loss_variant = BpoVariant::all_pairs;
  } else {
    throw ConfigError(origin + ": unknown loss_variant '" + variant + "'");
  }
  const std::string mode = t.get_string("train.score_mode", "length-normalized");
  if (mode == "length-normalized") {
    cfg.score_mode = ScoreMode::length_normalized;
  } else if (mode == "raw-product") {
    cfg.score_mode = ScoreMode::raw_product;
  } else {
    throw ConfigError(origin + ": unknown score_mode '" + mode + "'");
  }

  try {
    cfg.validate();
  } catch (const std::domain_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return train_config_from_toml_text(text, path.string());
}

double dataset_nll(const ARModel& model, std::span<const PromptedSequence> dataset) {
  if (dataset.empty()) {
    throw std::domain_error("dataset_nll needs a non-empty dataset");
  }
  double total = 0.0;
  for (const PromptedSequence& e : dataset) {
    total -= model.sequence_logprob(e.prompt_id, e.tokens);
  }
  return total / static_cast<double>(dataset.size());
}

double heldout_content_nll(const ARModel& model, std::span<const PromptedSequence> heldout,
                           std::span<const int> signal_positions) {
  if (heldout.empty()) {
    throw std::domain_error("heldout_content_nll needs a non-empty dataset");
  }
  std::vector<bool> is_signal(static_cast<std::size_t>(model.seq_len()), false);
  for (const int p : signal_positions) {
    if (p >= 0 && p < model.seq_len()) {
      is_signal[static_cast<std::size_t>(p)] = true;
    }
  }
  double total = 0.0;
  std::size_t count = 0;
  for (const PromptedSequence& e : heldout) {
    model.validate_sequence(e.tokens);
    for (int t = 0; t < model.seq_len(); ++t) {
      if (is_signal[static_cast<std::size_t>(t)]) {
        continue;
      }
      const std::vector<double> dist = model.next_token_dist(
          e.prompt_id, std::span<const TokenId>(e.tokens.data(), static_cast<std::size_t>(t)));
      total -= std::log(dist[static_cast<std::size_t>(model.vocab().image_index(e.tokens[t]))]);
      ++count;
    }
  }
  if (count == 0) {
    throw std::domain_error("heldout set has no content positions");
  }
  return total / static_cast<double>(count);
}

double mean_abs_log_odds_ratio(const ARModel& model, std::span<const BalancedRecord> dataset,
                               ScoreMode mode) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (const BalancedRecord& record : dataset) {
    const int k = static_cast<int>(record.group_sequences.size());
    std::vector<SeqScore> scores;
    scores.reserve(static_cast<std::size_t>(k));
    for (const TokenSequence& z : record.group_sequences) {
      scores.push_back(score_sequence(model, record.prompt_id, z, mode));
    }
    for (int g = 0; g < k; ++g) {
      total += std::abs(log_odds_ratio(scores[static_cast<std::size_t>(g)],
                                       scores[static_cast<std::size_t>((g + 1) % k)]));
      ++pairs;
    }
  }
  if (pairs == 0) {
    throw std::domain_error("mean_abs_log_odds_ratio needs a non-empty dataset");
  }
  return total / static_cast<double>(pairs);
}

StageResult sft_stage(ARModel& model, std::span<const PromptedSequence> dataset,
                      const TrainConfig& cfg, const EvalHooks* hooks) {
  cfg.validate();
  if (dataset.empty()) {
    throw std::domain_error("sft_stage needs a non-empty dataset");
  }

  StageResult result;
  SgdStepper stepper(model, cfg);
  std::vector<std::size_t> order(dataset.size());
  std::vector<PromptedSequence> batch;

  for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
    const int epoch_global = cfg.epoch_offset + epoch;
    // The permutation is a pure function of (seed, stage, epoch index), so
    // a resumed run replays the very same batches.
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(derive_seed(derive_seed(cfg.seed, kSftStreamTag), static_cast<std::uint64_t>(epoch_global)));
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(dataset[order[i]]);
      }
      const LossValue loss = nll_loss(model, batch);
      check_finite(loss.value, "sft");
      stepper.apply(loss.grads);
    }

    if (!model.logits().all_finite()) {
      throw NumericalError("sft produced non-finite logits");
    }
    EpochRow row;
    row.epoch = epoch_global;
    row.stage = "sft";
    row.nll_train = dataset_nll(model, dataset);
    row.nll_heldout = eval_heldout(model, hooks);
    row.rd = eval_rd(model, cfg, hooks);
    result.rows.push_back(std::move(row));
  }
  result.clamp_activations = stepper.clamp_activations();
  return result;
}

StageResult bpo_stage(ARModel& model, std::span<const BalancedRecord> dataset,
                      const TrainConfig& cfg, const EvalHooks* hooks) {
  cfg.validate();
  if (dataset.empty()) {
    throw std::domain_error("bpo_stage needs a non-empty dataset");
  }
  for (const BalancedRecord& record : dataset) {
    if (record.group_sequences.size() < 2) {
      throw std::domain_error("balanced records need at least two group sequences");
    }
  }
  if (model.logits().empty()) {
    std::fprintf(stderr, "warning: bpo_stage starting from an untrained (uniform) model\n");
  }

  StageResult result;
  result.mean_abs_log_or.push_back(mean_abs_log_odds_ratio(model, dataset, cfg.score_mode));

  SgdStepper stepper(model, cfg);
  std::vector<std::size_t> order(dataset.size());

  // Record loss: multi-group balanced penalty, plus the optional NLL anchor
  // averaged over the record's K sequences.
  const auto record_loss = [&](const BalancedRecord& record) {
    LossValue loss = bpo_multigroup_loss(model, record, cfg.loss_variant, cfg.score_mode);
    if (cfg.lambda_nll_anchor > 0.0) {
      const double per_seq = cfg.lambda_nll_anchor / static_cast<double>(record.group_sequences.size());
      for (const TokenSequence& z : record.group_sequences) {
        loss.value -= per_seq * model.sequence_logprob(record.prompt_id, z);
        model.accumulate_grad_sequence_logprob(record.prompt_id, z, -per_seq, loss.grads);
      }
    }
    return loss;
  };

  for (int epoch = 0; epoch < cfg.bpo_epochs; ++epoch) {
    const int epoch_global = cfg.epoch_offset + epoch;
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(derive_seed(derive_seed(cfg.seed, kBpoStreamTag), static_cast<std::uint64_t>(epoch_global)));
    rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      GradTable grads(model.vocab().image_tokens);
      double batch_value = 0.0;
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const LossValue loss = record_loss(dataset[order[i]]);
        batch_value += inv * loss.value;
        grads.add_scaled(loss.grads, inv);
      }
      check_finite(batch_value, "bpo");
      stepper.apply(grads);
    }

    if (!model.logits().all_finite()) {
      throw NumericalError("bpo produced non-finite logits");
    }
    result.mean_abs_log_or.push_back(mean_abs_log_odds_ratio(model, dataset, cfg.score_mode));

    double mean_bpo = 0.0;
    std::vector<PromptedSequence> flat;
    for (const BalancedRecord& record : dataset) {
      mean_bpo += bpo_multigroup_loss(model, record, cfg.loss_variant, cfg.score_mode).value;
      for (const TokenSequence& z : record.group_sequences) {
        flat.push_back({record.prompt_id, z});
      }
    }
    mean_bpo /= static_cast<double>(dataset.size());

    EpochRow row;
    row.epoch = epoch_global;
    row.stage = "bpo";
    row.nll_train = dataset_nll(model, flat);
    row.nll_heldout = eval_heldout(model, hooks);
    row.rd = eval_rd(model, cfg, hooks);
    row.bpo_loss = mean_bpo;
    result.rows.push_back(std::move(row));
  }
  result.clamp_activations = stepper.clamp_activations();
  return result;
}

BiasEval evaluate_bias(const ARModel& model, std::span<const int> prompts, int samples_per_prompt,
                       const LabelOracle& oracle, int group_count, std::uint64_t seed,
                       double temperature) {
  if (samples_per_prompt < 1) {
    throw std::domain_error("evaluate_bias needs at least one sample per prompt");
  }
  if (prompts.empty()) {
    throw std::domain_error("evaluate_bias needs at least one prompt");
  }
  if (group_count < 2) {
    throw std::domain_error("evaluate_bias needs at least two groups");
  }

  BiasEval eval;
  std::vector<double> overall_counts(static_cast<std::size_t>(group_count), 0.0);
  double rd_sum = 0.0;
  for (const int prompt : prompts) {
    const std::uint64_t prompt_seed = derive_seed(seed, static_cast<std::uint64_t>(prompt));
    PromptBias pb;
    pb.prompt_id = prompt;
    pb.freqs.freqs.assign(static_cast<std::size_t>(group_count), 0.0);
    pb.freqs.sample_count = samples_per_prompt;
    for (int i = 0; i < samples_per_prompt; ++i) {
      const TokenSequence z = model.sample_sequence(
          prompt, derive_seed(prompt_seed, static_cast<std::uint64_t>(i)), temperature);
      const int label = oracle(z);
      if (label < 0 || label >= group_count) {
        throw std::domain_error("oracle returned label " + std::to_string(label) + " out of range");
      }
      pb.freqs.freqs[static_cast<std::size_t>(label)] += 1.0;
    }
    for (std::size_t g = 0; g < overall_counts.size(); ++g) {
      overall_counts[g] += pb.freqs.freqs[g];
      pb.freqs.freqs[g] /= static_cast<double>(samples_per_prompt);
    }
    pb.rd = rd_bias(pb.freqs);
    rd_sum += pb.rd;
    eval.per_prompt.push_back(std::move(pb));
  }

  eval.macro_rd = rd_sum / static_cast<double>(prompts.size());
  eval.overall.sample_count = samples_per_prompt * static_cast<int>(prompts.size());
  eval.overall.freqs = std::move(overall_counts);
  for (double& f : eval.overall.freqs) {
    f /= static_cast<double>(eval.overall.sample_count);
  }
  return eval;
}

void write_run_report_csv(std::span<const EpochRow> rows, const std::filesystem::path& path) {
  std::string body = "epoch,stage,nll_train,nll_heldout,rd,bpo_loss\n";
  for (const EpochRow& row : rows) {
    body += std::to_string(row.epoch);
    body += ',';
    body += row.stage;
    body += ',';
    body += format_double(row.nll_train);
    body += ',';
    body += row.nll_heldout ? format_double(*row.nll_heldout) : "";
    body += ',';
    body += row.rd ? format_double(*row.rd) : "";
    body += ',';
    body += row.bpo_loss ? format_double(*row.bpo_loss) : "";
    body += '\n';
  }
  write_text_atomic(path, body);
}

}  // namespace fairgen
