#pragma once

#include <array>
#include <map>
#include <vector>

#include "seqmatch/finite_mdp.hpp"
#include "seqmatch/seq_mdp.hpp"

namespace seqmatch {

/// A sequence ending in eos together with its dataset weight.
struct WeightedSequence {
  std::vector<TokenId> payload;  // payload token ids, last entry is eos
  double weight = 1.0;
};

/// Explicit action distribution per state; rows indexed by action id and
/// summing to 1. Terminal-state rows use the shared convention of a point
/// mass on the eos action, so that every f-divergence between occupancies is
/// insensitive to the (dynamically irrelevant) action choice after eos.
struct FinitePolicy {
  std::map<SeqState, std::vector<double>> probs;

  const std::vector<double>& row(const SeqState& s) const;
};

/// The conditional next-token distribution of a weighted dataset at every
/// reachable prefix. Editing actions get probability exactly zero.
FinitePolicy data_policy(const Vocab& v, std::span<const WeightedSequence> dataset);

/// Discounted state-action visitation rho(s,a) = (1-gamma) p(a|s) sum_t
/// gamma^t P(s_t = s): a normalized probability distribution. Only states
/// reachable under the policy carry entries; absent pairs have mass zero.
struct ExactOccupancy {
  Vocab vocab;
  double gamma = 0.0;
  std::map<SeqState, std::vector<double>> mass;

  double total_mass() const;
  double state_mass(const SeqState& s) const;
  double at(const SeqState& s, ActionId a) const;
};

/// Solves for the exact occupancy of `policy` on the reachable state space,
/// with terminal absorption summed in closed form. Throws BudgetExceededError
/// if reachability exceeds state_budget and std::invalid_argument for gamma
/// outside (0,1).
ExactOccupancy exact_occupancy(const Vocab& v, const FinitePolicy& policy, double gamma,
                               std::size_t state_budget = 1000000);

/// See mdp::table_divergence for the per-kind conventions; iterates the union
/// of both supports with absent entries read as zero. Throws
/// std::invalid_argument when gamma or vocabulary differ.
double occupancy_divergence(const ExactOccupancy& p, const ExactOccupancy& q,
                            mdp::DivergenceKind kind);

double occupancy_entropy(const ExactOccupancy& rho);

/// State-action tables keyed by sequence states (Q-values, rewards).
using StateActionTable = std::map<SeqState, std::vector<double>>;

/// r = Q - gamma V(next); the table's key set must be closed under step() for
/// positive-probability actions.
StateActionTable inverse_bellman(const Vocab& v, const StateActionTable& q,
                                 const FinitePolicy& policy, double gamma);

/// Fixed point of Q = r + gamma V(next) for the given policy.
StateActionTable bellman(const Vocab& v, const StateActionTable& r, const FinitePolicy& policy,
                         double gamma, double tol = 1e-12, int max_iter = 100000);

/// The three quantities of the telescoping identity, evaluated exactly; the
/// caller asserts pairwise equality. rho_any may be any valid occupancy of
/// the same MDP (e.g. the data occupancy or the policy's own).
std::array<double, 3> telescoping_check(const Vocab& v, const StateActionTable& q,
                                        const FinitePolicy& policy_theta,
                                        const ExactOccupancy& rho_any, double gamma);

/// p(a|s) = softmax(Q(s, .)) row-wise, max-shifted.
FinitePolicy policy_from_q(const StateActionTable& q);

}  // namespace seqmatch
