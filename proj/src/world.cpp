#include "fairgen/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "fairgen/io.hpp"
#include "fairgen/rng.hpp"
#include "fairgen/toml.hpp"
#include "json.hpp"

namespace fairgen {

namespace {

void normalize_dist(std::vector<double>& dist, const char* what) {
  double sum = 0.0;
  for (const double v : dist) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw std::domain_error(std::string(what) + " has a negative or non-finite weight");
    }
    sum += v;
  }
  if (sum <= 0.0) {
    throw std::domain_error(std::string(what) + " has no mass");
  }
  for (double& v : dist) {
    v /= sum;
  }
}

int draw_categorical(Rng& rng, std::span<const double> dist) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    cum += dist[i];
    if (u < cum) {
      return static_cast<int>(i);
    }
  }
  return static_cast<int>(dist.size()) - 1;
}

std::uint64_t content_hash(const TokenSequence& z) {
  std::uint64_t state = 0x6a09e667f3bcc909ull;
  for (const TokenId t : z) {
    state ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
    (void)splitmix64(state);
  }
  return state;
}

}  // namespace

void WorldSpec::finalize() {
  for (auto& dist : signal_dists) {
    normalize_dist(dist, "signal distribution");
  }
  normalize_dist(content_dist, "content distribution");
  std::sort(signal_positions.begin(), signal_positions.end());
  signal_positions.erase(std::unique(signal_positions.begin(), signal_positions.end()),
                         signal_positions.end());
  validate();
}

void WorldSpec::validate() const {
  vocab.validate();
  const int k = group_count();
  const std::size_t v = static_cast<std::size_t>(vocab.image_tokens);
  if (seq_len < 1) {
    throw std::domain_error("world seq_len must be positive");
  }
  if (signal_positions.empty()) {
    throw std::domain_error("world needs at least one signal position");
  }
  for (const int p : signal_positions) {
    if (p < 0 || p >= seq_len) {
      throw std::domain_error("signal position " + std::to_string(p) + " outside the sequence");
    }
  }
  if (static_cast<int>(signal_dists.size()) != k) {
    throw std::domain_error("world needs one signal distribution per demographic label");
  }
  for (const auto& dist : signal_dists) {
    if (dist.size() != v) {
      throw std::domain_error("signal distribution width does not match the image alphabet");
    }
  }
  if (content_dist.size() != v) {
    throw std::domain_error("content distribution width does not match the image alphabet");
  }
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      const double tv = total_variation(signal_dists[a], signal_dists[b]);
      if (tv < 0.2) {
        throw std::domain_error("signal distributions for groups " + std::to_string(a) + " and " +
                                std::to_string(b) + " overlap too much (TV " + std::to_string(tv) +
                                " < 0.2); the attribute oracle would be ill-posed");
      }
    }
  }
  if (embed_dim < k) {
    throw std::domain_error("embed_dim must be at least the group count");
  }
  if (embed_noise_sigma < 0.0) {
    throw std::domain_error("embed_noise_sigma must be non-negative");
  }
}

double total_variation(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += std::abs(a[i] - b[i]);
  }
  return 0.5 * sum;
}

int classify(const WorldSpec& world, const TokenSequence& z) {
  if (static_cast<int>(z.size()) != world.seq_len) {
    throw std::invalid_argument("sequence length does not match the world seq_len");
  }
  const int k = world.group_count();
  double best = -std::numeric_limits<double>::infinity();
  int best_group = 0;
  for (int g = 0; g < k; ++g) {
    double score = 0.0;
    for (const int pos : world.signal_positions) {
      const TokenId t = z[static_cast<std::size_t>(pos)];
      if (!world.vocab.is_image_token(t)) {
        throw std::domain_error("token id " + std::to_string(t) + " outside the image alphabet");
      }
      const double w = world.signal_dists[static_cast<std::size_t>(g)]
                                         [static_cast<std::size_t>(world.vocab.image_index(t))];
      score += w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    }
    if (score > best) {
      best = score;
      best_group = g;
    }
  }
  return best_group;
}

Embedding encode(const WorldSpec& world, const TokenSequence& z, std::uint64_t seed) {
  Embedding e;
  e.label = classify(world, z);
  e.values.assign(static_cast<std::size_t>(world.embed_dim), 0.0);
  e.values[static_cast<std::size_t>(e.label)] = 1.0;

  const std::uint64_t h = content_hash(z);
  for (int j = world.group_count(); j < world.embed_dim; ++j) {
    std::uint64_t s = h ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(j + 1));
    e.values[static_cast<std::size_t>(j)] =
        static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53 - 0.5;
  }

  if (world.embed_noise_sigma > 0.0) {
    Rng rng(seed);
    for (double& v : e.values) {
      v += world.embed_noise_sigma * rng.gaussian();
    }
  }
  return e;
}

namespace {

TokenSequence draw_sequence(const WorldSpec& world, int group, Rng& rng) {
  TokenSequence z(static_cast<std::size_t>(world.seq_len));
  std::size_t next_signal = 0;
  for (int t = 0; t < world.seq_len; ++t) {
    const bool is_signal = next_signal < world.signal_positions.size() &&
                           world.signal_positions[next_signal] == t;
    const auto& dist =
        is_signal ? world.signal_dists[static_cast<std::size_t>(group)] : world.content_dist;
    if (is_signal) {
      ++next_signal;
    }
    z[static_cast<std::size_t>(t)] = world.vocab.image_token(draw_categorical(rng, dist));
  }
  return z;
}

TokenSequence draw_sequence_for_label(const WorldSpec& world, int group, Rng& rng) {
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    TokenSequence z = draw_sequence(world, group, rng);
    if (classify(world, z) == group) {
      return z;
    }
  }
  throw NumericalError("could not draw a sequence that decodes to group " + std::to_string(group) +
                       "; signal distributions overlap too heavily");
}

}  // namespace

std::vector<BalancedRecord> gen_balanced_dataset(const WorldSpec& world, std::span<const int> prompts,
                                                 int per_group, std::uint64_t seed) {
  if (prompts.empty()) {
    throw std::domain_error("gen_balanced_dataset needs at least one prompt");
  }
  if (per_group < 1) {
    throw std::domain_error("per_group must be at least 1");
  }
  const int k = world.group_count();
  Rng rng(seed);
  std::vector<BalancedRecord> out;
  out.reserve(prompts.size() * static_cast<std::size_t>(per_group));
  for (const int prompt : prompts) {
    for (int r = 0; r < per_group; ++r) {
      BalancedRecord record;
      record.prompt_id = prompt;
      record.group_sequences.reserve(static_cast<std::size_t>(k));
      for (int g = 0; g < k; ++g) {
        record.group_sequences.push_back(draw_sequence_for_label(world, g, rng));
      }
      out.push_back(std::move(record));
    }
  }
  return out;
}

std::vector<GenRecord> gen_biased_pretrain(const WorldSpec& world, std::span<const int> prompts,
                                           std::span<const double> skew, int total,
                                           std::uint64_t seed) {
  if (prompts.empty()) {
    throw std::domain_error("gen_biased_pretrain needs at least one prompt");
  }
  if (static_cast<int>(skew.size()) != world.group_count()) {
    throw std::domain_error("skew must have one entry per demographic group");
  }
  double sum = 0.0;
  for (const double s : skew) {
    if (s < 0.0) {
      throw std::domain_error("skew entries must be non-negative");
    }
    sum += s;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::domain_error("skew must sum to 1");
  }
  if (total < 1) {
    throw std::domain_error("total must be at least 1");
  }

  Rng rng(seed);
  std::vector<GenRecord> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    GenRecord record;
    record.prompt_id = prompts[static_cast<std::size_t>(i) % prompts.size()];
    record.label = draw_categorical(rng, skew);
    record.tokens = draw_sequence(world, record.label, rng);
    out.push_back(std::move(record));
  }
  return out;
}

std::vector<Embedding> encode_dataset(const WorldSpec& world,
                                      std::span<const BalancedRecord> records, std::uint64_t seed) {
  std::vector<Embedding> out;
  std::uint64_t index = 0;
  for (const BalancedRecord& record : records) {
    for (const TokenSequence& z : record.group_sequences) {
      out.push_back(encode(world, z, derive_seed(seed, index++)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TOML world files
// ---------------------------------------------------------------------------

namespace {

std::vector<double> dist_from_table(const toml::Table& t, const std::string& prefix,
                                    std::size_t width) {
  if (t.has(prefix + ".dist")) {
    return t.at(prefix + ".dist").as_double_array();
  }
  if (t.has(prefix + ".support")) {
    const auto support = t.at(prefix + ".support").as_int_array();
    std::vector<double> weights(support.size(), 1.0);
    if (t.has(prefix + ".weights")) {
      weights = t.at(prefix + ".weights").as_double_array();
      if (weights.size() != support.size()) {
        throw ConfigError(prefix + ": weights and support must have the same length");
      }
    }
    std::vector<double> dist(width, 0.0);
    for (std::size_t i = 0; i < support.size(); ++i) {
      const std::int64_t idx = support[i];
      if (idx < 0 || idx >= static_cast<std::int64_t>(width)) {
        throw ConfigError(prefix + ": support index " + std::to_string(idx) +
                          " outside the image alphabet");
      }
      dist[static_cast<std::size_t>(idx)] += weights[i];
    }
    return dist;
  }
  throw ConfigError("world file is missing " + prefix + ".dist or " + prefix + ".support");
}

}  // namespace

WorldSpec load_world(const std::filesystem::path& path) {
  const toml::Table t = toml::parse_file(path);
  WorldSpec world;
  try {
    world.vocab.text_tokens = static_cast<int>(t.get_int("vocab.text_tokens", 1));
    world.vocab.image_tokens = static_cast<int>(t.at("vocab.image_tokens").as_int());
    world.vocab.labels = t.at("vocab.labels").as_string_array();
    world.seq_len = static_cast<int>(t.at("sequence.length").as_int());
    for (const std::int64_t p : t.at("sequence.signal_positions").as_int_array()) {
      world.signal_positions.push_back(static_cast<int>(p));
    }

    const std::size_t v = static_cast<std::size_t>(world.vocab.image_tokens);
    if (t.has("signal.dists")) {
      for (const toml::Value& row : t.at("signal.dists").as_array()) {
        world.signal_dists.push_back(row.as_double_array());
      }
    } else if (t.has("signal.support")) {
      const auto& supports = t.at("signal.support").as_array();
      const toml::Value* weights =
          t.has("signal.weights") ? &t.at("signal.weights") : nullptr;
      for (std::size_t g = 0; g < supports.size(); ++g) {
        std::vector<double> dist(v, 0.0);
        const auto support = supports[g].as_int_array();
        std::vector<double> w(support.size(), 1.0);
        if (weights != nullptr) {
          w = weights->as_array().at(g).as_double_array();
          if (w.size() != support.size()) {
            throw ConfigError("signal.weights[" + std::to_string(g) +
                              "] length does not match its support");
          }
        }
        for (std::size_t i = 0; i < support.size(); ++i) {
          if (support[i] < 0 || support[i] >= static_cast<std::int64_t>(v)) {
            throw ConfigError("signal.support index outside the image alphabet");
          }
          dist[static_cast<std::size_t>(support[i])] += w[i];
        }
        world.signal_dists.push_back(std::move(dist));
      }
    } else {
      throw ConfigError("world file is missing signal.dists or signal.support");
    }

    world.content_dist = dist_from_table(t, "content", v);
    world.embed_dim = static_cast<int>(t.get_int("embedding.dim", world.group_count()));
    world.embed_noise_sigma = t.get_double("embedding.noise_sigma", 0.0);
  } catch (const std::domain_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }

  try {
    world.finalize();
  } catch (const std::domain_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return world;
}

void save_world(const WorldSpec& world, const std::filesystem::path& path) {
  std::ostringstream out;
  const auto dump_dist = [&](std::span<const double> dist) {
    out << "[";
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (i > 0) {
        out << ", ";
      }
      out << dist[i];
    }
    out << "]";
  };

  out.precision(17);
  out << "[vocab]\n";
  out << "text_tokens = " << world.vocab.text_tokens << "\n";
  out << "image_tokens = " << world.vocab.image_tokens << "\n";
  out << "labels = [";
  for (std::size_t i = 0; i < world.vocab.labels.size(); ++i) {
    if (i > 0) {
      out << ", ";
    }
    out << '"' << world.vocab.labels[i] << '"';
  }
  out << "]\n\n[sequence]\nlength = " << world.seq_len << "\nsignal_positions = [";
  for (std::size_t i = 0; i < world.signal_positions.size(); ++i) {
    if (i > 0) {
      out << ", ";
    }
    out << world.signal_positions[i];
  }
  out << "]\n\n[signal]\ndists = [\n";
  for (const auto& dist : world.signal_dists) {
    out << "  ";
    dump_dist(dist);
    out << ",\n";
  }
  out << "]\n\n[content]\ndist = ";
  dump_dist(world.content_dist);
  out << "\n\n[embedding]\ndim = " << world.embed_dim
      << "\nnoise_sigma = " << world.embed_noise_sigma << "\n";

  write_text_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// JSONL datasets
// ---------------------------------------------------------------------------

namespace {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open file: " + path.string());
  }
  std::vector<nlohmann::json> lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    try {
      lines.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return lines;
}

}  // namespace

void write_genrecords_jsonl(std::span<const GenRecord> records, const std::filesystem::path& path) {
  std::string body;
  for (const GenRecord& r : records) {
    const nlohmann::json j = {{"prompt_id", r.prompt_id}, {"tokens", r.tokens}, {"label", r.label}};
    body += j.dump();
    body += '\n';
  }
  write_text_atomic(path, body);
}

std::vector<GenRecord> read_genrecords_jsonl(const std::filesystem::path& path) {
  std::vector<GenRecord> out;
  for (const nlohmann::json& j : read_jsonl(path)) {
    GenRecord r;
    try {
      r.prompt_id = j.at("prompt_id").get<int>();
      r.tokens = j.at("tokens").get<TokenSequence>();
      r.label = j.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": bad record: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_balanced_jsonl(std::span<const BalancedRecord> records,
                          const std::filesystem::path& path) {
  std::string body;
  for (const BalancedRecord& r : records) {
    const nlohmann::json j = {{"prompt_id", r.prompt_id}, {"groups", r.group_sequences}};
    body += j.dump();
    body += '\n';
  }
  write_text_atomic(path, body);
}

std::vector<BalancedRecord> read_balanced_jsonl(const std::filesystem::path& path) {
  std::vector<BalancedRecord> out;
  for (const nlohmann::json& j : read_jsonl(path)) {
    BalancedRecord r;
    try {
      r.prompt_id = j.at("prompt_id").get<int>();
      r.group_sequences = j.at("groups").get<std::vector<TokenSequence>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": bad record: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_embeddings_jsonl(std::span<const Embedding> embeddings,
                            const std::filesystem::path& path) {
  std::string body;
  for (const Embedding& e : embeddings) {
    const nlohmann::json j = {{"values", e.values}, {"label", e.label}};
    body += j.dump();
    body += '\n';
  }
  write_text_atomic(path, body);
}

std::vector<Embedding> read_embeddings_jsonl(const std::filesystem::path& path) {
  std::vector<Embedding> out;
  for (const nlohmann::json& j : read_jsonl(path)) {
    Embedding e;
    try {
      e.values = j.at("values").get<std::vector<double>>();
      e.label = j.at("label").get<int>();
    } catch (const nlohmann::json::exception& e2) {
      throw ConfigError(path.string() + ": bad embedding: " + e2.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

WorldSpec make_disjoint_world(int groups, int image_tokens, int seq_len,
                              std::vector<int> signal_positions, double embed_noise_sigma) {
  constexpr int kTokensPerGroup = 2;
  if (image_tokens < kTokensPerGroup * groups + 2) {
    throw std::domain_error("image alphabet too small for disjoint group supports");
  }
  WorldSpec world;
  world.vocab.text_tokens = 4;
  world.vocab.image_tokens = image_tokens;
  for (int g = 0; g < groups; ++g) {
    world.vocab.labels.push_back("group" + std::to_string(g));
  }
  world.seq_len = seq_len;
  world.signal_positions = std::move(signal_positions);
  world.signal_dists.assign(static_cast<std::size_t>(groups),
                            std::vector<double>(static_cast<std::size_t>(image_tokens), 0.0));
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < kTokensPerGroup; ++i) {
      world.signal_dists[static_cast<std::size_t>(g)]
                        [static_cast<std::size_t>(g * kTokensPerGroup + i)] = 1.0;
    }
  }
  world.content_dist.assign(static_cast<std::size_t>(image_tokens), 0.0);
  for (int i = kTokensPerGroup * groups; i < image_tokens; ++i) {
    world.content_dist[static_cast<std::size_t>(i)] = 1.0;
  }
  world.embed_dim = std::max(8, groups + 4);
  world.embed_noise_sigma = embed_noise_sigma;
  world.finalize();
  return world;
}

}  // namespace fairgen
