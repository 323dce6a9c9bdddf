#pragma once

#include <random>
#include <unordered_map>

#include "seqmatch/occupancy.hpp"
#include "seqmatch/seq_mdp.hpp"

namespace seqmatch {

struct SampleConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_steps = 256;
  std::uint64_t seed = 0;
};

/// Logit table over the enumerated state space. A state's logits are
/// simultaneously its Q-values and, after log-softmax over the legal actions,
/// its log-policy.
///
/// Legality encodes the context cap of the enumeration: states at the payload
/// cap may only take backspace (an insert would leave the table). Terminal
/// states keep a row so every enumerated state has one, but those rows are
/// not trainable; frozen at zero they pin the terminal value to
/// log(action_count).
class TabularPolicy {
 public:
  TabularPolicy() = default;

  static TabularPolicy make_uniform(const Vocab& v, int max_len,
                                    std::size_t state_budget = 1000000);

  const Vocab& vocab() const { return vocab_; }
  int max_len() const { return max_len_; }
  int rows() const { return static_cast<int>(states_.size()); }
  int action_count() const { return vocab_.action_count(); }
  const std::vector<SeqState>& states() const { return states_; }

  int row_of(const SeqState& s) const;  // throws UnknownStateError
  bool contains(const SeqState& s) const { return index_.contains(s); }

  std::span<const double> logits(const SeqState& s) const { return row(row_of(s)); }
  std::span<const double> row(int r) const;
  std::span<double> row_mut(int r);
  void set_logits(const SeqState& s, std::span<const double> values);

  bool trainable_row(int r) const { return trainable_[static_cast<std::size_t>(r)] != 0; }

  /// 1 for actions the policy may take from s, 0 otherwise.
  void legal_mask(const SeqState& s, std::vector<std::uint8_t>& out) const;

  /// log sum exp of the state's logits over its legal actions.
  double state_value(const SeqState& s) const;

  /// Softmax over legal actions into `out` (size action_count); returns the
  /// state value.
  double action_probs(const SeqState& s, std::vector<double>& out) const;

  /// Hash of (vocabulary, max_len, enumeration order); checkpoint loads must
  /// match it exactly.
  std::uint64_t enumeration_hash() const;

  std::vector<double>& raw_logits() { return logits_; }
  const std::vector<double>& raw_logits() const { return logits_; }

 private:
  Vocab vocab_;
  int max_len_ = 0;
  std::vector<SeqState> states_;
  std::unordered_map<SeqState, int, SeqStateHash> index_;
  std::vector<double> logits_;           // rows() x action_count(), row-major
  std::vector<std::uint8_t> trainable_;  // per row
};

/// Autoregressive rollout: temperature scaling, nucleus truncation (smallest
/// probability-sorted prefix reaching top_p, boundary ties included), then a
/// categorical draw. Backspace transitions roll the state back via step().
/// Stops at a terminal state or after max_steps. Deterministic given seed.
Trajectory sample_trajectory(const TabularPolicy& policy, const SeqState& prompt,
                             const SampleConfig& cfg);

/// Same, but with probability inject_prob an insert action is hijacked by the
/// environment: a uniformly random payload token is inserted instead of the
/// chosen one (the chosen action is still what the trajectory records).
Trajectory sample_trajectory_injected(const TabularPolicy& policy, const SeqState& prompt,
                                      const SampleConfig& cfg, double inject_prob,
                                      std::mt19937_64& rng);

/// Exact softmax rows (with optional temperature / top-p applied) for every
/// enumerated state, consumable by exact_occupancy.
FinitePolicy to_finite_policy(const TabularPolicy& policy, double temperature = 1.0,
                              double top_p = 1.0);

/// Occupancy estimate from n sampled rollouts started at the initial state,
/// weighting step t by gamma^t and terminal tails in closed form.
ExactOccupancy monte_carlo_occupancy(const TabularPolicy& policy, double gamma,
                                     const SampleConfig& cfg, int n_trajectories);

}  // namespace seqmatch
