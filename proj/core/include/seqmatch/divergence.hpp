#pragma once

#include <span>
#include <string>
#include <string_view>

#include "seqmatch/common.hpp"

namespace seqmatch {

enum class PhiKind { kl, js, chi2, chi2_mixture };

/// Stable config/CLI names: "kl", "js", "chi2", "chi2-mixture".
PhiKind phi_kind_from_string(std::string_view name);
std::string_view to_string(PhiKind kind);

/// The Jensen-Shannon phi equals -inf below -log 2, so it is continued there
/// by a sharply descending quadratic attached with matching value and slope.
struct JsGuard {
  double margin = 0.05;      // junction at -log 2 + margin
  double curvature = 100.0;  // magnitude of the quadratic's second derivative
};

/// A concave phi together with its entropy scale alpha and, for the mixture
/// chi^2, the two-sided squared-reward penalty weights.
struct PhiSpec {
  PhiKind kind = PhiKind::chi2_mixture;
  double alpha = 1.0;
  double mixture_c = 0.5;
  double mixture_beta = 0.5;
  JsGuard js_guard{};
};

/// phi(x):
///   kl            -exp(-x)
///   js            log(2 - exp(-x)), quadratic continuation below the guard
///   chi2          x - x^2/4
///   chi2_mixture  x  (the quadratic lives in mixture_regularizer instead)
/// All kinds are concave with phi'(0) = 1.
double phi(const PhiSpec& spec, double x);

/// Exact derivative of phi, including the guard region.
double phi_prime(const PhiSpec& spec, double x);

/// (phi(alpha x) - phi(0)) / alpha. This is the composite the objective
/// consumes; dropping the parameter-independent phi(0)/alpha offset makes it
/// converge pointwise to x as alpha -> 0.
double phi_scaled(const PhiSpec& spec, double x);

/// d/dx phi_scaled = phi'(alpha x).
double phi_scaled_prime(const PhiSpec& spec, double x);

/// beta * c * mean(r_data^2) + (1 - beta) * c * mean(r_model^2): the
/// two-sided penalty whose optimum realizes 2 chi^2(rho_data || mixture).
/// Only meaningful for chi2_mixture; throws std::invalid_argument otherwise.
/// An empty list contributes 0.
double mixture_regularizer(const PhiSpec& spec, std::span<const double> r_data,
                           std::span<const double> r_model);

}  // namespace seqmatch
