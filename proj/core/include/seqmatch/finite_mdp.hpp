#pragma once

#include <array>
#include <vector>

#include "seqmatch/common.hpp"

namespace seqmatch::mdp {

/// Index-based finite MDP with a deterministic initial state. Absorbing
/// states self-transition under every action; their discounted visitation is
/// summed in closed form (geometric tail) instead of iterated.
struct Transition {
  int next = 0;
  double prob = 0.0;
};

struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  int initial_state = 0;
  std::vector<std::vector<std::vector<Transition>>> next;  // [state][action]
  std::vector<std::uint8_t> absorbing;                     // per state

  void validate() const;  // throws std::invalid_argument on malformed rows
};

/// Row-stochastic policy over the same state/action index space.
struct MdpPolicy {
  std::vector<std::vector<double>> probs;
};

using Table = std::vector<std::vector<double>>;  // [state][action]

enum class DivergenceKind { kl, reverse_kl, js, chi2, chi2_mixture, tv };

/// d(s) = sum_t gamma^t P(s_t = s), solved by fixed-point iteration over the
/// transient states with the absorbing tail in closed form.
std::vector<double> state_visitation(const FiniteMdp& m, const MdpPolicy& pi, double gamma,
                                     double tol = 1e-13, int max_iter = 1000000);

/// rho(s, a) = (1 - gamma) * pi(a|s) * d(s). Sums to 1.
Table occupancy(const FiniteMdp& m, const MdpPolicy& pi, double gamma);

double occupancy_total(const Table& rho);

/// H[rho] = -E_rho[log rho(s,a)], in nats; 0 log 0 := 0.
double occupancy_entropy(const Table& rho);

/// f-divergences between occupancy tables over a shared index space.
///   kl            KL(p || q)
///   reverse_kl    KL(q || p)
///   js            KL(p || m) + KL(q || m), m = (p + q)/2
///   chi2          E_p[(q/p - 1)^2]  (expectation under the first argument;
///                 mass of q outside p's support is not seen — the mixture
///                 variant below covers that direction)
///   chi2_mixture  2 chi^2(p || (p+q)/2), always finite
///   tv            (1/2) sum |p - q|
double table_divergence(const Table& p, const Table& q, DivergenceKind kind);

/// Soft state values V(s) = E_{a~pi}[Q(s,a) - log pi(a|s)]; zero-probability
/// actions are omitted (0 log 0 := 0).
std::vector<double> soft_state_values(const Table& q, const MdpPolicy& pi);

/// Inverse soft Bellman operator: r(s,a) = Q(s,a) - gamma E_{s'}[V(s')].
Table inverse_bellman(const FiniteMdp& m, const Table& q, const MdpPolicy& pi, double gamma);

/// Unique fixed point of the soft Bellman operator
/// Q(s,a) = r(s,a) + gamma E_{s'}[V(s')], found by iteration (a
/// gamma-contraction). Throws NumericalError if max_iter is exhausted.
Table soft_bellman_fixed_point(const FiniteMdp& m, const Table& r, const MdpPolicy& pi,
                               double gamma, double tol = 1e-12, int max_iter = 100000);

/// The three telescoping quantities that agree for any valid occupancy
/// rho_any of the same MDP:
///   [0] E_{rho_theta}[(inverse_bellman Q)(s,a)] - E_{rho_theta}[log pi(a|s)]
///   [1] (1 - gamma) V(s0)
///   [2] E_{rho_any}[V(s) - gamma E_{s'}[V(s')]]
/// rho_theta is computed internally from pi_theta.
std::array<double, 3> telescoping_quantities(const FiniteMdp& m, const Table& q,
                                             const MdpPolicy& pi_theta, const Table& rho_any,
                                             double gamma);

/// Row-wise max-shifted softmax of Q.
MdpPolicy policy_from_q(const Table& q);

}  // namespace seqmatch::mdp
