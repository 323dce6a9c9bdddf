#include "seqmatch/divergence.hpp"

#include <cmath>

namespace seqmatch {

namespace {

constexpr double kLog2 = 0.6931471805599453;

double js_junction(const JsGuard& g) { return -kLog2 + g.margin; }

double js_smooth(double x) { return std::log(2.0 - std::exp(-x)); }
double js_smooth_prime(double x) { return std::exp(-x) / (2.0 - std::exp(-x)); }

}  // namespace

PhiKind phi_kind_from_string(std::string_view name) {
  if (name == "kl") return PhiKind::kl;
  if (name == "js") return PhiKind::js;
  if (name == "chi2") return PhiKind::chi2;
  if (name == "chi2-mixture") return PhiKind::chi2_mixture;
  throw std::invalid_argument("unknown divergence kind '" + std::string(name) +
                              "' (expected kl, js, chi2, chi2-mixture)");
}

std::string_view to_string(PhiKind kind) {
  switch (kind) {
    case PhiKind::kl: return "kl";
    case PhiKind::js: return "js";
    case PhiKind::chi2: return "chi2";
    case PhiKind::chi2_mixture: return "chi2-mixture";
  }
  return "?";
}

double phi(const PhiSpec& spec, double x) {
  switch (spec.kind) {
    case PhiKind::kl:
      return -std::exp(-x);
    case PhiKind::js: {
      const double x0 = js_junction(spec.js_guard);
      if (x >= x0) return js_smooth(x);
      const double dx = x - x0;
      return js_smooth(x0) + js_smooth_prime(x0) * dx - 0.5 * spec.js_guard.curvature * dx * dx;
    }
    case PhiKind::chi2:
      return x - 0.25 * x * x;
    case PhiKind::chi2_mixture:
      return x;
  }
  throw std::logic_error("phi: bad kind");
}

double phi_prime(const PhiSpec& spec, double x) {
  switch (spec.kind) {
    case PhiKind::kl:
      return std::exp(-x);
    case PhiKind::js: {
      const double x0 = js_junction(spec.js_guard);
      if (x >= x0) return js_smooth_prime(x);
      return js_smooth_prime(x0) - spec.js_guard.curvature * (x - x0);
    }
    case PhiKind::chi2:
      return 1.0 - 0.5 * x;
    case PhiKind::chi2_mixture:
      return 1.0;
  }
  throw std::logic_error("phi_prime: bad kind");
}

double phi_scaled(const PhiSpec& spec, double x) {
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("phi_scaled: alpha must be positive");
  return (phi(spec, spec.alpha * x) - phi(spec, 0.0)) / spec.alpha;
}

double phi_scaled_prime(const PhiSpec& spec, double x) {
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("phi_scaled_prime: alpha must be positive");
  return phi_prime(spec, spec.alpha * x);
}

double mixture_regularizer(const PhiSpec& spec, std::span<const double> r_data,
                           std::span<const double> r_model) {
  if (spec.kind != PhiKind::chi2_mixture) {
    throw std::invalid_argument("mixture_regularizer: requires chi2-mixture kind");
  }
  auto mean_sq = [](std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += x * x;
    return acc / static_cast<double>(xs.size());
  };
  return spec.mixture_beta * spec.mixture_c * mean_sq(r_data) +
         (1.0 - spec.mixture_beta) * spec.mixture_c * mean_sq(r_model);
}

}  // namespace seqmatch
