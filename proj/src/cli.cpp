#include "fairgen/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fairgen/io.hpp"
#include "fairgen/kernels.hpp"
#include "fairgen/losses.hpp"
#include "fairgen/metrics.hpp"
#include "fairgen/model.hpp"
#include "fairgen/probe.hpp"
#include "fairgen/rng.hpp"
#include "fairgen/trainer.hpp"
#include "fairgen/world.hpp"
#include "json.hpp"

namespace fairgen::cli {

namespace {

using Clock = std::chrono::steady_clock;

std::string iso_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t env_seed_fallback() {
  const char* env = std::getenv("FAIRGEN_SEED");
  if (env == nullptr) {
    return 0;
  }
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw ConfigError("FAIRGEN_SEED is not an unsigned integer");
  }
}

std::vector<double> parse_skew(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse skew entry '" + part + "'");
    }
  }
  if (out.empty()) {
    throw ConfigError("empty --skew");
  }
  return out;
}

std::vector<int> neutral_prompt_ids(int count) {
  std::vector<int> ids(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    ids[static_cast<std::size_t>(i)] = i;
  }
  return ids;
}

void check_model_world_compat(const ARModel& model, const WorldSpec& world) {
  const Vocabulary& mv = model.vocab();
  const Vocabulary& wv = world.vocab;
  if (mv.text_tokens != wv.text_tokens || mv.image_tokens != wv.image_tokens ||
      mv.labels != wv.labels) {
    throw ConfigError("model vocabulary does not match the world's token alphabet");
  }
  if (model.seq_len() != world.seq_len) {
    throw ConfigError("model seq_len does not match the world");
  }
}

LabelOracle world_oracle(const WorldSpec& world) {
  return [&world](const TokenSequence& z) { return classify(world, z); };
}

std::string join_args(const std::vector<std::string>& args) {
  std::string out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += args[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string world_path;
  std::string out_path;
  bool balanced = false;
  std::string skew_text;
  int prompts = 1;
  int per_group = 1;
  int total = 1000;
  int aug_per_group = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_gen_data(const GenDataOpts& opts, const std::string& command) {
  const Clock::time_point started = Clock::now();
  const std::uint64_t seed = opts.seed_given ? opts.seed : env_seed_fallback();
  const WorldSpec world = load_world(opts.world_path);
  const std::vector<int> prompts = neutral_prompt_ids(opts.prompts);

  if (opts.balanced == !opts.skew_text.empty()) {
    throw ConfigError("choose exactly one of --balanced or --skew");
  }

  std::size_t record_count = 0;
  if (opts.balanced) {
    const std::vector<BalancedRecord> records =
        gen_balanced_dataset(world, prompts, opts.per_group, seed);
    write_balanced_jsonl(records, opts.out_path);
    record_count = records.size();
  } else {
    const std::vector<double> skew = parse_skew(opts.skew_text);
    std::vector<GenRecord> records =
        gen_biased_pretrain(world, prompts, skew, opts.total, derive_seed(seed, 0));
    if (opts.aug_per_group > 0) {
      // Faithful augmented-prompt data: prompt aug(b, g) only ever carries
      // group g, mirroring "a photo of a <group> <occupation>" training rows.
      const PromptLayout layout{opts.prompts, world.group_count()};
      for (int b = 0; b < opts.prompts; ++b) {
        for (int g = 0; g < world.group_count(); ++g) {
          std::vector<double> onehot(static_cast<std::size_t>(world.group_count()), 0.0);
          onehot[static_cast<std::size_t>(g)] = 1.0;
          const int aug_id = layout.augmented_id(b, g);
          const std::vector<int> aug_prompt{aug_id};
          std::vector<GenRecord> aug =
              gen_biased_pretrain(world, aug_prompt, onehot, opts.aug_per_group,
                                  derive_seed(seed, 1000 + static_cast<std::uint64_t>(aug_id)));
          records.insert(records.end(), std::make_move_iterator(aug.begin()),
                         std::make_move_iterator(aug.end()));
        }
      }
    }
    write_genrecords_jsonl(records, opts.out_path);
    record_count = records.size();
  }

  RunManifest manifest;
  manifest.command = command;
  manifest.seed = seed;
  manifest.inputs = {opts.world_path};
  manifest.outputs = {opts.out_path};
  manifest.timestamp = iso_timestamp();
  manifest.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  const std::filesystem::path out_dir =
      std::filesystem::path(opts.out_path).has_parent_path()
          ? std::filesystem::path(opts.out_path).parent_path()
          : std::filesystem::path(".");
  write_manifest(manifest, out_dir);

  std::cout << "wrote " << record_count << " records to " << opts.out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string stage;
  std::string config_path;
  std::string world_path;
  std::string data_path;
  std::string out_dir;
  std::string init_path;
  std::string heldout_path;
  int eval_prompts = 0;
  int order = 2;
  int num_prompts = 0;
  bool dry_run = false;

  // flag overrides; only applied when given
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> epochs;
  std::optional<double> lambda;
  std::optional<double> momentum;
  std::optional<std::string> loss_variant;
  std::optional<int> eval_samples;
  std::optional<int> epoch_offset;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

TrainConfig resolve_train_config(const TrainOpts& opts) {
  TrainConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = load_train_config(opts.config_path);
  }
  if (opts.lr) {
    cfg.lr = *opts.lr;
  }
  if (opts.batch_size) {
    cfg.batch_size = *opts.batch_size;
  }
  if (opts.epochs) {
    (opts.stage == "sft" ? cfg.sft_epochs : cfg.bpo_epochs) = *opts.epochs;
  }
  if (opts.lambda) {
    cfg.lambda_nll_anchor = *opts.lambda;
  }
  if (opts.momentum) {
    cfg.momentum = *opts.momentum;
  }
  if (opts.loss_variant) {
    if (*opts.loss_variant == "cyclic") {
      cfg.loss_variant = BpoVariant::cyclic;
    } else if (*opts.loss_variant == "all-pairs") {
      cfg.loss_variant = BpoVariant::all_pairs;
    } else {
      throw ConfigError("unknown --loss-variant '" + *opts.loss_variant + "'");
    }
  }
  if (opts.eval_samples) {
    cfg.eval_samples_per_prompt = *opts.eval_samples;
  }
  if (opts.epoch_offset) {
    cfg.epoch_offset = *opts.epoch_offset;
  }
  if (opts.seed_given) {
    cfg.seed = opts.seed;
  } else if (opts.config_path.empty() || cfg.seed == 0) {
    const std::uint64_t env = env_seed_fallback();
    if (env != 0) {
      cfg.seed = env;
    }
  }
  cfg.validate();
  return cfg;
}

int run_train(const TrainOpts& opts, const std::string& command) {
  const Clock::time_point started = Clock::now();
  if (opts.stage != "sft" && opts.stage != "bpo") {
    throw ConfigError("--stage must be sft or bpo");
  }
  if (opts.stage == "bpo" && opts.init_path.empty()) {
    throw ConfigError("bpo stage requires --init <checkpoint>");
  }

  const TrainConfig cfg = resolve_train_config(opts);
  const WorldSpec world = load_world(opts.world_path);

  std::vector<PromptedSequence> sft_data;
  std::vector<BalancedRecord> bpo_data;
  int max_prompt = -1;
  if (opts.stage == "sft") {
    for (GenRecord& r : read_genrecords_jsonl(opts.data_path)) {
      max_prompt = std::max(max_prompt, r.prompt_id);
      sft_data.push_back({r.prompt_id, std::move(r.tokens)});
    }
  } else {
    bpo_data = read_balanced_jsonl(opts.data_path);
    for (const BalancedRecord& r : bpo_data) {
      max_prompt = std::max(max_prompt, r.prompt_id);
    }
  }
  if (max_prompt < 0) {
    throw ConfigError("dataset is empty: " + opts.data_path);
  }

  std::optional<ARModel> model;
  if (!opts.init_path.empty()) {
    model.emplace(load_checkpoint(opts.init_path));
    check_model_world_compat(*model, world);
  } else {
    int prompt_count = std::max(max_prompt + 1, opts.eval_prompts);
    if (opts.num_prompts > 0) {
      prompt_count = opts.num_prompts;
    }
    model.emplace(world.vocab, opts.order, world.seq_len, prompt_count);
  }

  EvalHooks hooks;
  hooks.world = &world;
  hooks.eval_seed = derive_seed(cfg.seed, 99);
  if (opts.eval_prompts > 0) {
    hooks.eval_prompts = neutral_prompt_ids(opts.eval_prompts);
  }
  if (!opts.heldout_path.empty()) {
    for (GenRecord& r : read_genrecords_jsonl(opts.heldout_path)) {
      hooks.heldout.push_back({r.prompt_id, std::move(r.tokens)});
    }
  }

  if (opts.dry_run) {
    std::cout << "dry-run: configuration, world, data and model all load cleanly\n";
    return 0;
  }

  StageResult result;
  if (opts.stage == "sft") {
    result = sft_stage(*model, sft_data, cfg, &hooks);
  } else {
    result = bpo_stage(*model, bpo_data, cfg, &hooks);
  }

  const std::filesystem::path out_dir(opts.out_dir);
  std::filesystem::create_directories(out_dir);
  save_checkpoint(*model, out_dir / "checkpoint.json");
  write_run_report_csv(result.rows, out_dir / "run-report.csv");

  nlohmann::json stats = {{"clamp_activations", result.clamp_activations}};
  if (!result.mean_abs_log_or.empty()) {
    stats["mean_abs_log_or"] = result.mean_abs_log_or;
  }

  RunManifest manifest;
  manifest.command = command;
  manifest.config_path = opts.config_path;
  manifest.seed = cfg.seed;
  manifest.inputs = {opts.world_path, opts.data_path};
  if (!opts.init_path.empty()) {
    manifest.inputs.push_back(opts.init_path);
  }
  manifest.outputs = {(out_dir / "checkpoint.json").string(),
                      (out_dir / "run-report.csv").string()};
  manifest.timestamp = iso_timestamp();
  manifest.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  manifest.extra_json = stats.dump();
  write_manifest(manifest, out_dir);

  const EpochRow& last = result.rows.back();
  std::cout << opts.stage << ": " << result.rows.size() << " epochs, final train NLL "
            << last.nll_train;
  if (last.rd) {
    std::cout << ", RD " << *last.rd;
  }
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

struct AuditLocateOpts {
  std::string model_path;
  std::string world_path;
  std::string out_dir;
  int base_prompts = 1;
  int samples = 400;
  std::string pooling = "pooled";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_audit_locate(const AuditLocateOpts& opts, const std::string& command) {
  const Clock::time_point started = Clock::now();
  const std::uint64_t seed = opts.seed_given ? opts.seed : env_seed_fallback();
  const WorldSpec world = load_world(opts.world_path);
  const ARModel model = load_checkpoint(opts.model_path);
  check_model_world_compat(model, world);

  const Pooling pooling =
      opts.pooling == "per-position" ? Pooling::per_position : Pooling::unigram_pooled;
  if (opts.pooling != "pooled" && opts.pooling != "per-position") {
    throw ConfigError("--pooling must be 'pooled' or 'per-position'");
  }

  const PromptLayout layout{opts.base_prompts, world.group_count()};
  if (model.num_prompts() < layout.total_prompts()) {
    throw ConfigError("model has too few prompts for " + std::to_string(opts.base_prompts) +
                      " base prompts plus their augmented variants");
  }

  const LabelOracle oracle = world_oracle(world);
  nlohmann::json report = nlohmann::json::array();
  std::string csv = "prompt,group,jsd,majority,flag\n";
  int aligned_count = 0;
  for (int b = 0; b < opts.base_prompts; ++b) {
    std::vector<int> aug;
    for (int g = 0; g < world.group_count(); ++g) {
      aug.push_back(layout.augmented_id(b, g));
    }
    const LocateReport r = locate_lm_bias(model, layout.neutral_id(b), aug, opts.samples, oracle,
                                          pooling, derive_seed(seed, static_cast<std::uint64_t>(b)));
    report.push_back({{"prompt", r.neutral_prompt},
                      {"jsd", r.jsd_per_group},
                      {"majority", r.majority_group},
                      {"argmin", r.argmin_group},
                      {"aligned", r.aligned}});
    aligned_count += r.aligned ? 1 : 0;
    for (int g = 0; g < world.group_count(); ++g) {
      csv += std::to_string(r.neutral_prompt) + "," + std::to_string(g) + "," +
             std::to_string(r.jsd_per_group[static_cast<std::size_t>(g)]) + "," +
             std::to_string(r.majority_group) + "," + (r.aligned ? "1" : "0") + "\n";
    }
  }

  const std::filesystem::path out_dir(opts.out_dir);
  std::filesystem::create_directories(out_dir);
  write_text_atomic(out_dir / "locate-report.json", report.dump(2) + "\n");
  write_text_atomic(out_dir / "locate-report.csv", csv);

  RunManifest manifest;
  manifest.command = command;
  manifest.seed = seed;
  manifest.inputs = {opts.model_path, opts.world_path};
  manifest.outputs = {(out_dir / "locate-report.json").string(),
                      (out_dir / "locate-report.csv").string()};
  manifest.timestamp = iso_timestamp();
  manifest.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  write_manifest(manifest, out_dir);

  std::cout << "locate: " << aligned_count << "/" << opts.base_prompts
            << " prompts align argmin-JSD with the majority generated group\n";
  return 0;
}

struct AuditProbeOpts {
  std::string embeddings_path;
  std::string world_path;
  std::string out_dir;
  int prompts = 1;
  int per_group = 100;
  double split = 0.8;
  int epochs = 300;
  double lr = 0.5;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_audit_probe(const AuditProbeOpts& opts, const std::string& command) {
  const Clock::time_point started = Clock::now();
  const std::uint64_t seed = opts.seed_given ? opts.seed : env_seed_fallback();

  std::vector<Embedding> embeddings;
  std::vector<std::string> inputs;
  if (!opts.embeddings_path.empty()) {
    embeddings = read_embeddings_jsonl(opts.embeddings_path);
    inputs.push_back(opts.embeddings_path);
  } else if (!opts.world_path.empty()) {
    const WorldSpec world = load_world(opts.world_path);
    const std::vector<BalancedRecord> records = gen_balanced_dataset(
        world, neutral_prompt_ids(opts.prompts), opts.per_group, derive_seed(seed, 0));
    embeddings = encode_dataset(world, records, derive_seed(seed, 1));
    inputs.push_back(opts.world_path);
  } else {
    throw ConfigError("audit probe needs --embeddings or --world");
  }

  const auto [probe, report] = train_probe(embeddings, opts.split, opts.epochs, opts.lr, seed);

  const std::filesystem::path out_dir(opts.out_dir);
  std::filesystem::create_directories(out_dir);
  write_text_atomic(out_dir / "probe-report.json", probe_report_to_json(report));

  RunManifest manifest;
  manifest.command = command;
  manifest.seed = seed;
  manifest.inputs = inputs;
  manifest.outputs = {(out_dir / "probe-report.json").string()};
  manifest.timestamp = iso_timestamp();
  manifest.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  write_manifest(manifest, out_dir);

  std::cout << "probe: held-out accuracy " << report.accuracy << " (precision " << report.precision
            << ", recall " << report.recall << ", f1 " << report.f1 << ")\n";
  return 0;
}

struct AuditBiasOpts {
  std::string model_path;
  std::string world_path;
  std::string out_dir;
  int prompts = 1;
  int samples = 160;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_audit_bias(const AuditBiasOpts& opts, const std::string& command) {
  const Clock::time_point started = Clock::now();
  const std::uint64_t seed = opts.seed_given ? opts.seed : env_seed_fallback();
  const WorldSpec world = load_world(opts.world_path);
  const ARModel model = load_checkpoint(opts.model_path);
  check_model_world_compat(model, world);

  const BiasEval eval = evaluate_bias(model, neutral_prompt_ids(opts.prompts), opts.samples,
                                      world_oracle(world), world.group_count(), seed);

  nlohmann::json per_prompt = nlohmann::json::array();
  std::string csv = "prompt,group,freq,rd\n";
  for (const PromptBias& pb : eval.per_prompt) {
    per_prompt.push_back(
        {{"prompt", pb.prompt_id}, {"freqs", pb.freqs.freqs}, {"rd", pb.rd}});
    for (std::size_t g = 0; g < pb.freqs.freqs.size(); ++g) {
      csv += std::to_string(pb.prompt_id) + "," + std::to_string(g) + "," +
             std::to_string(pb.freqs.freqs[g]) + "," + std::to_string(pb.rd) + "\n";
    }
  }
  const nlohmann::json report = {{"per_prompt", per_prompt},
                                 {"overall_freqs", eval.overall.freqs},
                                 {"macro_rd", eval.macro_rd},
                                 {"samples_per_prompt", opts.samples}};

  const std::filesystem::path out_dir(opts.out_dir);
  std::filesystem::create_directories(out_dir);
  write_text_atomic(out_dir / "bias-report.json", report.dump(2) + "\n");
  write_text_atomic(out_dir / "bias-report.csv", csv);

  RunManifest manifest;
  manifest.command = command;
  manifest.seed = seed;
  manifest.inputs = {opts.model_path, opts.world_path};
  manifest.outputs = {(out_dir / "bias-report.json").string(),
                      (out_dir / "bias-report.csv").string()};
  manifest.timestamp = iso_timestamp();
  manifest.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  write_manifest(manifest, out_dir);

  std::cout << "bias: macro RD " << eval.macro_rd << " over " << opts.prompts << " prompts\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int run_report(const std::string& run_dir) {
  const std::filesystem::path dir(run_dir);
  const std::filesystem::path manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest_path.string() + ": " + e.what());
  }

  std::cout << "run: " << manifest.value("command", std::string("<unknown>")) << "\n";
  std::cout << "seed: " << manifest.value("seed", 0ull) << "\n";
  std::cout << "timestamp: " << manifest.value("timestamp", std::string()) << "\n";

  const std::filesystem::path report_path = dir / "run-report.csv";
  if (std::filesystem::exists(report_path)) {
    const std::string csv = read_text_file(report_path);
    std::istringstream lines(csv);
    std::string line;
    std::string last;
    std::getline(lines, line);  // header
    int rows = 0;
    while (std::getline(lines, line)) {
      if (!line.empty()) {
        last = line;
        ++rows;
      }
    }
    std::cout << "epochs: " << rows << "\n";
    if (!last.empty()) {
      std::cout << "final row (epoch,stage,nll_train,nll_heldout,rd,bpo_loss): " << last << "\n";
    }
  }
  return 0;
}

}  // namespace

void write_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j = {
      {"tool", "fairgen"},
      {"version", kVersion},
      {"command", manifest.command},
      {"config", manifest.config_path},
      {"seed", manifest.seed},
      {"inputs", manifest.inputs},
      {"outputs", manifest.outputs},
      {"timestamp", manifest.timestamp},
      {"wall_clock_seconds", manifest.wall_clock_seconds},
  };
  if (!manifest.extra_json.empty()) {
    j["stats"] = nlohmann::json::parse(manifest.extra_json);
  }
  write_text_atomic(out_dir / "manifest.json", j.dump(2) + "\n");
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"balanced preference optimization workbench for token-based generation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string kernels = "auto";
  app.add_option("--kernels", kernels, "kernel variant: auto, scalar or avx2")
      ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  GenDataOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate synthetic token datasets");
  gen_cmd->add_option("--world", gen.world_path, "world spec TOML")->required();
  gen_cmd->add_option("--out", gen.out_path, "output JSONL path")->required();
  gen_cmd->add_flag("--balanced", gen.balanced, "balanced per-group records");
  gen_cmd->add_option("--skew", gen.skew_text, "per-group frequencies, e.g. 0.9,0.1");
  gen_cmd->add_option("--prompts", gen.prompts, "number of neutral prompts")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--per-group", gen.per_group, "records per prompt (balanced mode)");
  gen_cmd->add_option("--total", gen.total, "total records (skew mode)");
  gen_cmd->add_option("--aug-per-group", gen.aug_per_group,
                      "also emit this many records per augmented prompt (skew mode)");
  CLI::Option* gen_seed = gen_cmd->add_option("--seed", gen.seed, "rng seed");

  TrainOpts train;
  CLI::App* train_cmd = app.add_subcommand("train", "run one training stage");
  train_cmd->add_option("--stage", train.stage, "sft or bpo")->required();
  train_cmd->add_option("--config", train.config_path, "train config TOML");
  train_cmd->add_option("--world", train.world_path, "world spec TOML")->required();
  train_cmd->add_option("--data", train.data_path, "training data JSONL")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->add_option("--init", train.init_path, "initial checkpoint");
  train_cmd->add_option("--heldout", train.heldout_path, "held-out JSONL for fidelity NLL");
  train_cmd->add_option("--eval-prompts", train.eval_prompts,
                        "evaluate RD on this many neutral prompts each epoch");
  train_cmd->add_option("--order", train.order, "context order for fresh models");
  train_cmd->add_option("--num-prompts", train.num_prompts, "prompt count for fresh models");
  train_cmd->add_flag("--dry-run", train.dry_run, "validate inputs and exit");
  double train_lr = 0.0;
  int train_batch = 0, train_epochs = 0, train_eval_samples = 0, train_epoch_offset = 0;
  double train_lambda = 0.0, train_momentum = 0.0;
  std::string train_variant;
  CLI::Option* o_lr = train_cmd->add_option("--lr", train_lr, "learning rate");
  CLI::Option* o_batch = train_cmd->add_option("--batch-size", train_batch, "minibatch size");
  CLI::Option* o_epochs = train_cmd->add_option("--epochs", train_epochs, "epochs for this stage");
  CLI::Option* o_lambda = train_cmd->add_option("--lambda", train_lambda, "NLL anchor weight");
  CLI::Option* o_momentum = train_cmd->add_option("--momentum", train_momentum, "SGD momentum");
  CLI::Option* o_variant =
      train_cmd->add_option("--loss-variant", train_variant, "cyclic or all-pairs");
  CLI::Option* o_eval_samples =
      train_cmd->add_option("--eval-samples", train_eval_samples, "samples per prompt for RD");
  CLI::Option* o_epoch_offset =
      train_cmd->add_option("--epoch-offset", train_epoch_offset, "first epoch index (resume)");
  CLI::Option* train_seed = train_cmd->add_option("--seed", train.seed, "rng seed");

  CLI::App* audit_cmd = app.add_subcommand("audit", "bias audits");
  audit_cmd->require_subcommand(1);

  AuditLocateOpts locate;
  CLI::App* locate_cmd = audit_cmd->add_subcommand("locate", "JSD bias localization");
  locate_cmd->add_option("--model", locate.model_path, "checkpoint JSON")->required();
  locate_cmd->add_option("--world", locate.world_path, "world spec TOML")->required();
  locate_cmd->add_option("--out", locate.out_dir, "output directory")->required();
  locate_cmd->add_option("--base-prompts", locate.base_prompts, "number of base prompts");
  locate_cmd->add_option("--samples", locate.samples, "samples per prompt");
  locate_cmd->add_option("--pooling", locate.pooling, "pooled or per-position");
  CLI::Option* locate_seed = locate_cmd->add_option("--seed", locate.seed, "rng seed");

  AuditProbeOpts probe;
  CLI::App* probe_cmd = audit_cmd->add_subcommand("probe", "linear probe on embeddings");
  probe_cmd->add_option("--embeddings", probe.embeddings_path, "embeddings JSONL");
  probe_cmd->add_option("--world", probe.world_path, "world spec TOML (generates embeddings)");
  probe_cmd->add_option("--out", probe.out_dir, "output directory")->required();
  probe_cmd->add_option("--prompts", probe.prompts, "prompts when generating");
  probe_cmd->add_option("--per-group", probe.per_group, "records per prompt when generating");
  probe_cmd->add_option("--split", probe.split, "train fraction");
  probe_cmd->add_option("--epochs", probe.epochs, "training epochs");
  probe_cmd->add_option("--lr", probe.lr, "learning rate");
  CLI::Option* probe_seed = probe_cmd->add_option("--seed", probe.seed, "rng seed");

  AuditBiasOpts bias;
  CLI::App* bias_cmd = audit_cmd->add_subcommand("bias", "sampled RD bias tables");
  bias_cmd->add_option("--model", bias.model_path, "checkpoint JSON")->required();
  bias_cmd->add_option("--world", bias.world_path, "world spec TOML")->required();
  bias_cmd->add_option("--out", bias.out_dir, "output directory")->required();
  bias_cmd->add_option("--prompts", bias.prompts, "number of neutral prompts");
  bias_cmd->add_option("--samples", bias.samples, "samples per prompt");
  CLI::Option* bias_seed = bias_cmd->add_option("--seed", bias.seed, "rng seed");

  std::string report_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "summarize a run directory");
  report_cmd->add_option("--run", report_dir, "run directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) {
      reversed.pop_back();  // program name
    }
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = join_args(args);
  try {
    if (!kernels::select_by_name(kernels)) {
      throw ConfigError("unknown kernel variant: " + kernels);
    }
    if (gen_cmd->parsed()) {
      gen.seed_given = gen_seed->count() > 0;
      return run_gen_data(gen, command);
    }
    if (train_cmd->parsed()) {
      train.seed_given = train_seed->count() > 0;
      if (o_lr->count() > 0) train.lr = train_lr;
      if (o_batch->count() > 0) train.batch_size = train_batch;
      if (o_epochs->count() > 0) train.epochs = train_epochs;
      if (o_lambda->count() > 0) train.lambda = train_lambda;
      if (o_momentum->count() > 0) train.momentum = train_momentum;
      if (o_variant->count() > 0) train.loss_variant = train_variant;
      if (o_eval_samples->count() > 0) train.eval_samples = train_eval_samples;
      if (o_epoch_offset->count() > 0) train.epoch_offset = train_epoch_offset;
      return run_train(train, command);
    }
    if (locate_cmd->parsed()) {
      locate.seed_given = locate_seed->count() > 0;
      return run_audit_locate(locate, command);
    }
    if (probe_cmd->parsed()) {
      probe.seed_given = probe_seed->count() > 0;
      return run_audit_probe(probe, command);
    }
    if (bias_cmd->parsed()) {
      bias.seed_given = bias_seed->count() > 0;
      return run_audit_bias(bias, command);
    }
    if (report_cmd->parsed()) {
      return run_report(report_dir);
    }
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc));
  for (int i = 0; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args);
}

}  // namespace fairgen::cli
