#include "seqmatch/common.hpp"

#include <cmath>

namespace seqmatch {

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  double m = -kInfinity;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_sum_exp_masked(std::span<const double> xs, std::span<const std::uint8_t> mask) {
  double m = -kInfinity;
  bool any = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    m = std::max(m, xs[i]);
  }
  if (!any) throw std::invalid_argument("log_sum_exp_masked: no unmasked entries");
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (mask[i]) s += std::exp(xs[i] - m);
  }
  return m + std::log(s);
}

double softmax(std::span<const double> xs, std::span<double> out) {
  const double lse = log_sum_exp(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::exp(xs[i] - lse);
  return lse;
}

double softmax_masked(std::span<const double> xs, std::span<const std::uint8_t> mask,
                      std::span<double> out) {
  const double lse = log_sum_exp_masked(xs, mask);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = mask[i] ? std::exp(xs[i] - lse) : 0.0;
  }
  return lse;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace seqmatch
