#pragma once

#include <vector>

#include "fairgen/types.hpp"

namespace fairgen {

// One supervised example: generate `tokens` when conditioned on `prompt_id`.
struct PromptedSequence {
  int prompt_id = 0;
  TokenSequence tokens;
};

// One generated/labeled sample; `label` indexes the vocabulary's
// demographic labels.
struct GenRecord {
  int prompt_id = 0;
  TokenSequence tokens;
  int label = 0;
};

// One balanced-dataset row: a neutral prompt paired with one sequence per
// demographic group, ordered by group index.
struct BalancedRecord {
  int prompt_id = 0;
  std::vector<TokenSequence> group_sequences;
};

}  // namespace fairgen
