#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>

#include "seqmatch/dataio.hpp"
#include "seqmatch/policy.hpp"

namespace seqmatch {

struct RepN {
  double percent = 0.0;       // 100 * (1 - unique n-grams / total n-grams)
  bool short_sequence = false;  // fewer tokens than n; percent defined as 0
};

/// n-gram repetition over payload tokens; eos/bos/padding are excluded.
RepN rep_n(const Vocab& v, std::span<const TokenId> continuation, int n);

/// prod_{n=2..4} (1 - rep_n/100).
double diversity(const Vocab& v, std::span<const TokenId> continuation);

/// Aggregate statistics over sampled rollouts. backspace_rate counts chosen
/// actions; valid_rate is the fraction of samples that terminate on a
/// sequence with positive data probability; injection (inject_prob > 0)
/// hijacks insert actions with a random payload token.
struct GenerationStats {
  int samples = 0;
  double backspace_rate = 0.0;
  double valid_rate = 0.0;
  double completion_rate = 0.0;
  double mean_length = 0.0;
  double mean_diversity = 0.0;
  std::map<int, double> mean_rep_n;  // n = 2..4
};

GenerationStats generation_stats(const TabularPolicy& policy,
                                 const std::set<std::vector<TokenId>>& data_support,
                                 const SampleConfig& cfg, int samples, double inject_prob,
                                 int threads = 1,
                                 const std::vector<SeqState>* prompts = nullptr);

double valid_rate(const TabularPolicy& policy, const std::set<std::vector<TokenId>>& data_support,
                  int samples, std::uint64_t seed, double inject_prob = 0.0);

struct EvalOptions {
  int samples = 1000;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  double top_p = 1.0;
  double prompt_frac = 0.5;  // prompt length as a fraction of the context
  double inject_prob = 0.0;
  int threads = 1;
  double gamma = 0.0;  // > 0 adds exact occupancy divergences
};

struct EvalReport {
  double diversity = 0.0;
  std::map<int, double> rep_n;
  double backspace_rate = 0.0;
  double valid_rate = 0.0;
  double completion_rate = 0.0;
  double mean_length = 0.0;
  double perplexity = 0.0;  // exp(mle_loss per token) on the dataset
  std::optional<double> kl_exact;
  std::optional<double> reverse_kl_exact;
  std::optional<double> chi2_mixture_exact;

  std::string to_json() const;
  std::string to_table() const;  // fixed-order human-readable rendering
};

EvalReport evaluate_policy(const TabularPolicy& policy, const Dataset& data,
                           const EvalOptions& opts);

/// The n-node chain with a per-step error branch: the data distribution is
/// the single path of n correct conditionals, the model errs to a dead-end
/// token with probability eps at each of them. Joint-distribution divergences
/// are enumerated by walking the policy tree and compared against closed
/// forms; discounted occupancy divergences are solved exactly.
struct ChainReport {
  int n = 0;
  double eps = 0.0;
  double gamma = 0.0;

  double kl_joint = 0.0, kl_closed = 0.0;
  double reverse_kl_joint = 0.0, reverse_kl_closed = 0.0;
  double chi2_joint = 0.0, chi2_closed = 0.0;
  double chi2_mixture_joint = 0.0, chi2_mixture_closed = 0.0;
  double completion_prob = 0.0, completion_closed = 0.0;

  double kl_occupancy = 0.0;
  double reverse_kl_occupancy = 0.0;
  double chi2_occupancy = 0.0;
  double chi2_mixture_occupancy = 0.0;

  /// Largest |enumerated - closed| over the joint quantities (infinite pairs
  /// compare equal).
  double max_closed_form_error() const;
};

ChainReport chain_experiment(int n, double eps, double gamma);

}  // namespace seqmatch
