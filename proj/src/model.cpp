#include "fairgen/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fairgen/io.hpp"
#include "fairgen/kernels.hpp"
#include "fairgen/rng.hpp"
#include "json.hpp"

namespace fairgen {

void Vocabulary::validate() const {
  if (text_tokens < 1) {
    throw std::domain_error("vocabulary needs at least one text token");
  }
  if (image_tokens < 2) {
    throw std::domain_error("vocabulary needs at least two image tokens");
  }
  if (labels.size() < 2) {
    throw std::domain_error("vocabulary needs at least two demographic labels");
  }
}

std::size_t ContextKeyHash::operator()(const ContextKey& k) const noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.prompt_id));
  h = splitmix64(h);
  h ^= k.length;
  for (int i = 0; i < k.length; ++i) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.tokens[i])) + 0x9e3779b9ull;
    h = splitmix64(h);
  }
  return static_cast<std::size_t>(h);
}

const std::vector<double>* RowTable::find(const ContextKey& key) const {
  const auto it = rows_.find(key);
  return it == rows_.end() ? nullptr : &it->second;
}

std::vector<double>& RowTable::at_or_zero(const ContextKey& key) {
  auto [it, inserted] = rows_.try_emplace(key);
  if (inserted) {
    it->second.assign(static_cast<std::size_t>(width_), 0.0);
  }
  return it->second;
}

void RowTable::add_scaled(const RowTable& other, double a) {
  for (const auto& [key, row] : other.rows_) {
    kernels::axpy(a, row, at_or_zero(key));
  }
}

void RowTable::scale(double a) {
  for (auto& [key, row] : rows_) {
    kernels::scale(row, a);
  }
}

double RowTable::max_abs() const {
  double m = 0.0;
  for (const auto& [key, row] : rows_) {
    for (const double v : row) {
      m = std::max(m, std::abs(v));
    }
  }
  return m;
}

bool RowTable::all_finite() const {
  for (const auto& [key, row] : rows_) {
    for (const double v : row) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// ARModel
// ---------------------------------------------------------------------------

ARModel::ARModel(Vocabulary vocab, int order, int seq_len, int num_prompts)
    : vocab_(std::move(vocab)),
      order_(order),
      seq_len_(seq_len),
      num_prompts_(num_prompts),
      logits_(vocab_.image_tokens) {
  vocab_.validate();
  if (order_ < 0 || order_ > kMaxOrder) {
    throw std::domain_error("model order must be in [0, " + std::to_string(kMaxOrder) + "]");
  }
  if (seq_len_ < 1) {
    throw std::domain_error("seq_len must be positive");
  }
  if (num_prompts_ < 1) {
    throw std::domain_error("model needs at least one prompt");
  }
}

void ARModel::validate_prompt(int prompt_id) const {
  if (prompt_id < 0 || prompt_id >= num_prompts_) {
    throw std::domain_error("prompt_id " + std::to_string(prompt_id) +
                            " outside configured prompt set [0, " + std::to_string(num_prompts_) + ")");
  }
}

void ARModel::validate_tokens(std::span<const TokenId> tokens) const {
  for (const TokenId t : tokens) {
    if (!vocab_.is_image_token(t)) {
      throw std::domain_error("token id " + std::to_string(t) + " outside the image-token range");
    }
  }
}

void ARModel::validate_sequence(const TokenSequence& z) const {
  if (static_cast<int>(z.size()) != seq_len_) {
    throw std::invalid_argument("sequence length " + std::to_string(z.size()) +
                                " does not match seq_len " + std::to_string(seq_len_));
  }
  validate_tokens(z);
}

ContextKey ARModel::context_key(int prompt_id, std::span<const TokenId> context) const {
  validate_prompt(prompt_id);
  validate_tokens(context);
  ContextKey key;
  key.prompt_id = prompt_id;
  const std::size_t keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_));
  key.length = static_cast<std::uint8_t>(keep);
  const std::size_t offset = context.size() - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    key.tokens[i] = context[offset + i];
  }
  return key;
}

namespace {

// Non-finite logits (NaN or +/-inf sentinels) are rejected up front so they
// surface as a domain error instead of NaN probabilities downstream.
void check_row_finite(const std::vector<double>& row) {
  for (const double v : row) {
    if (!std::isfinite(v)) {
      throw std::domain_error("logits row contains a non-finite value");
    }
  }
}

}  // namespace

void ARModel::dist_into(const ContextKey& key, double temperature, std::span<double> out) const {
  const std::vector<double>* row = logits_.find(key);
  const std::size_t v = out.size();
  if (row == nullptr) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(v));
    return;
  }
  check_row_finite(*row);
  if (temperature == 1.0) {
    kernels::softmax(*row, out);
    return;
  }
  if (!(temperature > 0.0)) {
    throw std::domain_error("temperature must be positive");
  }
  thread_local std::vector<double> scaled;
  scaled.assign(row->begin(), row->end());
  kernels::scale(scaled, 1.0 / temperature);
  kernels::softmax(scaled, out);
}

std::vector<double> ARModel::next_token_dist(int prompt_id, std::span<const TokenId> context) const {
  const ContextKey key = context_key(prompt_id, context);
  std::vector<double> out(static_cast<std::size_t>(vocab_.image_tokens));
  dist_into(key, 1.0, out);
  return out;
}

double ARModel::sequence_logprob(int prompt_id, const TokenSequence& z) const {
  validate_prompt(prompt_id);
  validate_sequence(z);
  const double uniform_logp = -std::log(static_cast<double>(vocab_.image_tokens));
  double logp = 0.0;
  for (int t = 0; t < seq_len_; ++t) {
    const ContextKey key =
        context_key(prompt_id, std::span<const TokenId>(z.data(), static_cast<std::size_t>(t)));
    const std::vector<double>* row = logits_.find(key);
    if (row == nullptr) {
      logp += uniform_logp;
    } else {
      check_row_finite(*row);
      logp += kernels::log_prob_at(*row, static_cast<std::size_t>(vocab_.image_index(z[t])));
    }
  }
  return logp;
}

TokenSequence ARModel::sample_sequence(int prompt_id, std::uint64_t seed, double temperature) const {
  validate_prompt(prompt_id);
  Rng rng(seed);
  const std::size_t v = static_cast<std::size_t>(vocab_.image_tokens);
  thread_local std::vector<double> probs;
  probs.resize(v);

  TokenSequence z;
  z.reserve(static_cast<std::size_t>(seq_len_));
  for (int t = 0; t < seq_len_; ++t) {
    const ContextKey key =
        context_key(prompt_id, std::span<const TokenId>(z.data(), z.size()));
    dist_into(key, temperature, probs);
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t pick = v - 1;
    for (std::size_t i = 0; i < v; ++i) {
      cum += probs[i];
      if (u < cum) {
        pick = i;
        break;
      }
    }
    z.push_back(vocab_.image_token(static_cast<int>(pick)));
  }
  return z;
}

void ARModel::accumulate_grad_sequence_logprob(int prompt_id, const TokenSequence& z, double weight,
                                               GradTable& into) const {
  validate_prompt(prompt_id);
  validate_sequence(z);
  const std::size_t v = static_cast<std::size_t>(vocab_.image_tokens);
  thread_local std::vector<double> probs;
  probs.resize(v);

  for (int t = 0; t < seq_len_; ++t) {
    const ContextKey key =
        context_key(prompt_id, std::span<const TokenId>(z.data(), static_cast<std::size_t>(t)));
    dist_into(key, 1.0, probs);
    std::vector<double>& g = into.at_or_zero(key);
    kernels::axpy(-weight, probs, g);
    g[static_cast<std::size_t>(vocab_.image_index(z[t]))] += weight;
  }
}

GradTable ARModel::grad_sequence_logprob(int prompt_id, const TokenSequence& z) const {
  GradTable grad(vocab_.image_tokens);
  accumulate_grad_sequence_logprob(prompt_id, z, 1.0, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string context_key_string(const ContextKey& key) {
  std::string out = std::to_string(key.prompt_id);
  out += '|';
  for (int i = 0; i < key.length; ++i) {
    if (i > 0) {
      out += ',';
    }
    out += std::to_string(key.tokens[i]);
  }
  return out;
}

std::int32_t parse_i32(std::string_view text, const std::string& origin) {
  std::int32_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("malformed checkpoint logits key: " + origin);
  }
  return value;
}

ContextKey parse_context_key(const std::string& text) {
  const std::size_t bar = text.find('|');
  if (bar == std::string::npos) {
    throw ConfigError("malformed checkpoint logits key: " + text);
  }
  ContextKey key;
  key.prompt_id = parse_i32(std::string_view(text).substr(0, bar), text);
  std::size_t pos = bar + 1;
  int count = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    if (count >= kMaxOrder) {
      throw ConfigError("checkpoint context longer than supported order: " + text);
    }
    key.tokens[count++] = parse_i32(std::string_view(text).substr(pos, end - pos), text);
    if (comma == std::string::npos) {
      break;
    }
    pos = comma + 1;
  }
  key.length = static_cast<std::uint8_t>(count);
  return key;
}

}  // namespace

std::string checkpoint_to_json(const ARModel& model) {
  if (!model.logits().all_finite()) {
    throw NumericalError("refusing to checkpoint non-finite logits");
  }
  nlohmann::json j;
  j["vocab"] = {
      {"text_tokens", model.vocab().text_tokens},
      {"image_tokens", model.vocab().image_tokens},
      {"labels", model.vocab().labels},
  };
  j["order"] = model.order();
  j["seq_len"] = model.seq_len();
  j["prompts"] = model.num_prompts();
  nlohmann::json logits = nlohmann::json::object();
  for (const auto& [key, row] : model.logits()) {
    logits[context_key_string(key)] = row;
  }
  j["logits"] = std::move(logits);
  return j.dump(2) + "\n";
}

ARModel checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid checkpoint json: ") + e.what());
  }
  try {
    Vocabulary vocab;
    vocab.text_tokens = j.at("vocab").at("text_tokens").get<int>();
    vocab.image_tokens = j.at("vocab").at("image_tokens").get<int>();
    vocab.labels = j.at("vocab").at("labels").get<std::vector<std::string>>();
    ARModel model(std::move(vocab), j.at("order").get<int>(), j.at("seq_len").get<int>(),
                  j.at("prompts").get<int>());
    for (const auto& [key_text, row_json] : j.at("logits").items()) {
      const ContextKey key = parse_context_key(key_text);
      std::vector<double> row = row_json.get<std::vector<double>>();
      if (static_cast<int>(row.size()) != model.vocab().image_tokens) {
        throw ConfigError("checkpoint row width mismatch at key " + key_text);
      }
      model.logits().at_or_zero(key) = std::move(row);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint missing fields: ") + e.what());
  }
}

void save_checkpoint(const ARModel& model, const std::filesystem::path& path) {
  write_text_atomic(path, checkpoint_to_json(model));
}

ARModel load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_text_file(path));
}

}  // namespace fairgen
