#pragma once

#include <functional>
#include <span>

#include "seqmatch/divergence.hpp"
#include "seqmatch/occupancy.hpp"
#include "seqmatch/policy.hpp"

namespace seqmatch {

/// Configuration of the occupancy-matching loss estimator.
///
/// Discount weights start at gamma^0 for the first action of every
/// trajectory. When include_model_term is false the data value-difference sum
/// carries full weight instead of 1/2 (the exact telescoping replacement for
/// the dropped model expectation), which is what makes the alpha -> 0 KL
/// limit land exactly on the gamma-weighted MLE loss.
struct ObjectiveConfig {
  PhiSpec phi{};
  double gamma = 0.9;
  bool include_model_term = true;
  bool eos_handling = true;  // closed-form terminal tails; disabling biases the estimator
};

/// Additive pieces of the minimized loss (the negation of the maximized
/// estimator), so total == data_phi_term + data_value_diff + model_value_diff
/// + eos_term + regularizer.
struct LossBreakdown {
  double total = 0.0;
  double data_phi_term = 0.0;     // -(gamma-weighted phi sum over data steps)
  double data_value_diff = 0.0;   // +w_d * sum gamma^i [V(s_i) - gamma V(s_{i+1})]
  double model_value_diff = 0.0;  // +1/2 * same under model trajectories
  double eos_term = 0.0;          // terminal tails of the two sums above
  double regularizer = 0.0;       // two-sided squared-reward penalty (chi2-mixture)
};

/// Numerically stable log sum exp over an action logit vector.
double value(std::span<const double> logits);

/// Flat gradient with the same layout as TabularPolicy::raw_logits().
struct GradTable {
  std::vector<double> d;

  explicit GradTable(const TabularPolicy& p) : d(p.raw_logits().size(), 0.0) {}
  double& at(int row, ActionId a, int action_count) {
    return d[static_cast<std::size_t>(row) * static_cast<std::size_t>(action_count) +
             static_cast<std::size_t>(a)];
  }
  double norm() const;
  double max_abs() const;
  void axpy(double scale, const GradTable& other);
};

/// Per-sequence loss estimator, averaged over each batch. States are re-scored
/// under the current table; stochastic steps use the realized next state.
/// Passing `grad` accumulates exact partial derivatives of `total` with
/// respect to every logit.
LossBreakdown sm_loss(const TabularPolicy& policy, std::span<const Trajectory> data_traj,
                      std::span<const Trajectory> model_traj, const ObjectiveConfig& cfg,
                      GradTable* grad = nullptr);

/// Mean per-sequence negative log-likelihood, in nats.
double mle_loss(const TabularPolicy& policy,
                std::span<const std::vector<TokenId>> sequences, GradTable* grad = nullptr,
                double grad_scale = 1.0);

/// MLE over trajectory action labels (including backspace labels injected by
/// noise augmentation).
double bc_loss(const TabularPolicy& policy, std::span<const Trajectory> trajectories,
               GradTable* grad = nullptr, double grad_scale = 1.0);

/// sum_i gamma^i [V(s_i) - logit(a_i | s_i)], averaged over trajectories: the
/// alpha -> 0 limit of the KL-kind loss with the model term off.
double gamma_weighted_mle(const TabularPolicy& policy, std::span<const Trajectory> data_traj,
                          double gamma);

/// Central finite differences (f(p + h) - f(p - h)) / 2h for every logit.
GradTable fd_gradient_oracle(const std::function<double()>& loss_fn, TabularPolicy& policy,
                             double h);

/// The loss evaluated from exact occupancies instead of sampled trajectories,
/// on the same per-sequence scale as sm_loss (expectations divided by
/// 1 - gamma). rho_model may be null when the model term is off.
double exact_sm_objective_loss(const TabularPolicy& policy, const ExactOccupancy& rho_data,
                               const ExactOccupancy* rho_model, const ObjectiveConfig& cfg);

/// Worst relative disagreement between the analytic gradient and central
/// finite differences (h = 1e-5) over randomly generated small tabular
/// instances of the given divergence kind.
double gradcheck_max_rel_error(PhiKind kind, int trials, std::uint64_t seed);

}  // namespace seqmatch
