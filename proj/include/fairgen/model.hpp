#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fairgen/types.hpp"

namespace fairgen {

// Unified text+image token id space: text tokens occupy [0, text_tokens),
// image tokens [text_tokens, text_tokens + image_tokens). Generation and all
// distributions run over the image alphabet; demographic labels index the
// groups the synthetic world and metrics reason about.
struct Vocabulary {
  int text_tokens = 1;
  int image_tokens = 0;
  std::vector<std::string> labels;

  int total_tokens() const { return text_tokens + image_tokens; }
  int image_base() const { return text_tokens; }
  int group_count() const { return static_cast<int>(labels.size()); }

  bool is_image_token(TokenId id) const {
    return id >= image_base() && id < total_tokens();
  }
  int image_index(TokenId id) const { return id - image_base(); }
  TokenId image_token(int index) const { return static_cast<TokenId>(image_base() + index); }

  void validate() const;  // text >= 1, image >= 2, K >= 2
};

inline constexpr int kMaxOrder = 6;

// Conditioning state of one next-token distribution: which prompt, and the
// most recent (up to `order`) generated tokens.
struct ContextKey {
  std::int32_t prompt_id = 0;
  std::uint8_t length = 0;
  std::array<TokenId, kMaxOrder> tokens{};

  friend bool operator==(const ContextKey&, const ContextKey&) = default;
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const noexcept;
};

// Sparse (context -> dense row) table. Holds both model logits and
// gradients; rows are image_tokens wide.
class RowTable {
 public:
  using Map = std::unordered_map<ContextKey, std::vector<double>, ContextKeyHash>;

  explicit RowTable(int width) : width_(width) {}

  int width() const { return width_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  void clear() { rows_.clear(); }

  const std::vector<double>* find(const ContextKey& key) const;
  std::vector<double>& at_or_zero(const ContextKey& key);

  // this += a * other, materializing rows as needed.
  void add_scaled(const RowTable& other, double a);
  void scale(double a);
  double max_abs() const;
  bool all_finite() const;

  Map::const_iterator begin() const { return rows_.begin(); }
  Map::const_iterator end() const { return rows_.end(); }
  Map::iterator begin() { return rows_.begin(); }
  Map::iterator end() { return rows_.end(); }

 private:
  int width_;
  Map rows_;
};

using GradTable = RowTable;

// Tabular autoregressive categorical model over image tokens, conditioned on
// a discrete prompt id and an order-n context window. Rows absent from the
// table act as all-zero logits, i.e. the uniform distribution, so every
// reachable context resolves. Evaluation and sampling are const and safe to
// run from many threads; mutation (training steps) needs exclusive access.
class ARModel {
 public:
  ARModel(Vocabulary vocab, int order, int seq_len, int num_prompts);

  const Vocabulary& vocab() const { return vocab_; }
  int order() const { return order_; }
  int seq_len() const { return seq_len_; }
  int num_prompts() const { return num_prompts_; }

  RowTable& logits() { return logits_; }
  const RowTable& logits() const { return logits_; }

  // Truncates context to the most recent `order` tokens.
  ContextKey context_key(int prompt_id, std::span<const TokenId> context) const;

  // softmax of the context's logits row; strictly positive, sums to 1.
  std::vector<double> next_token_dist(int prompt_id, std::span<const TokenId> context) const;

  // log P(z | prompt) in nats, summed over all seq_len steps.
  double sequence_logprob(int prompt_id, const TokenSequence& z) const;

  // Ancestral sampling, one seed per sequence.
  TokenSequence sample_sequence(int prompt_id, std::uint64_t seed, double temperature = 1.0) const;

  // d sequence_logprob / d logits: one_hot(z_t) - softmax(row) accumulated
  // over visited rows, zero elsewhere.
  GradTable grad_sequence_logprob(int prompt_id, const TokenSequence& z) const;
  void accumulate_grad_sequence_logprob(int prompt_id, const TokenSequence& z, double weight,
                                        GradTable& into) const;

  void validate_prompt(int prompt_id) const;
  void validate_tokens(std::span<const TokenId> tokens) const;
  void validate_sequence(const TokenSequence& z) const;

 private:
  void dist_into(const ContextKey& key, double temperature, std::span<double> out) const;

  Vocabulary vocab_;
  int order_;
  int seq_len_;
  int num_prompts_;
  RowTable logits_;
};

// Checkpoint: JSON {vocab, order, seq_len, prompts, logits} where logits is
// a sparse "promptId|tok,tok" -> row map. Finite doubles round-trip
// bit-exactly.
std::string checkpoint_to_json(const ARModel& model);
ARModel checkpoint_from_json(const std::string& text);
void save_checkpoint(const ARModel& model, const std::filesystem::path& path);
ARModel load_checkpoint(const std::filesystem::path& path);

}  // namespace fairgen
