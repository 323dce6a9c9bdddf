#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace seqmatch {

using TokenId = std::int32_t;
using ActionId = std::int32_t;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// State enumeration or reachability walk would exceed the configured cap.
class BudgetExceededError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state was looked up that is not part of the enumerated table. This
/// signals an enumeration/budget bug in the caller, not bad user input.
class UnknownStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk input: dataset record, checkpoint, config file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, failed fixed-point convergence, or similar.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Max-shifted log(sum(exp(xs))). Throws std::invalid_argument on empty input.
double log_sum_exp(std::span<const double> xs);

/// Masked variant: entries with mask[i] == 0 are excluded entirely.
double log_sum_exp_masked(std::span<const double> xs, std::span<const std::uint8_t> mask);

/// Writes softmax(xs) into out and returns log_sum_exp(xs).
double softmax(std::span<const double> xs, std::span<double> out);

/// Masked softmax; excluded entries get probability 0.
double softmax_masked(std::span<const double> xs, std::span<const std::uint8_t> mask,
                      std::span<double> out);

/// FNV-1a over raw bytes, used for enumeration/content hashes in checkpoints.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 14695981039346656037ull);

}  // namespace seqmatch
