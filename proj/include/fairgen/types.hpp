#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairgen {

using TokenId = std::int32_t;

// A generated image-token sequence, length seq_len, ids within the
// image-token range of the owning vocabulary.
using TokenSequence = std::vector<TokenId>;

// Bad config files, bad flags, mismatched inputs. The CLI maps this to exit 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where the math guarantees finiteness. CLI exit 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fairgen
