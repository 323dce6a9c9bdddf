#pragma once

#include <random>
#include <vector>

#include "seqmatch/dataio.hpp"
#include "seqmatch/objective.hpp"
#include "seqmatch/policy.hpp"

namespace seqmatch::testing {

inline Vocab toy_vocab() { return Vocab::from_tokens({"a", "b", "c"}); }

inline std::vector<std::vector<TokenId>> toy_records() {
  // a=0 b=1 c=2
  return {{0, 1}, {0, 1, 2}, {1, 0}, {1, 2, 0}, {2}};
}

inline Dataset toy_dataset(int context_len = 7) {
  return dataset_from_records(toy_vocab(), toy_records(), context_len);
}

inline void randomize_logits(TabularPolicy& p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& x : p.raw_logits()) x = normal(rng);
}

inline std::vector<Trajectory> random_data_batch(const Vocab& v, int count, int max_payload,
                                                 std::mt19937_64& rng, double eta = 0.0) {
  std::vector<Trajectory> out;
  for (int b = 0; b < count; ++b) {
    std::vector<TokenId> seq;
    const int len = static_cast<int>(rng() % static_cast<std::uint64_t>(max_payload + 1));
    for (int i = 0; i < len; ++i) {
      seq.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(v.payload_count())));
    }
    seq.push_back(v.eos());
    out.push_back(augment_noise(v, seq, NoiseConfig{eta, rng(), {}}));
  }
  return out;
}

inline std::vector<Trajectory> random_model_batch(const TabularPolicy& p, int count,
                                                  std::mt19937_64& rng) {
  std::vector<Trajectory> out;
  for (int b = 0; b < count; ++b) {
    SampleConfig cfg{1.0, 1.0, 3 * (p.max_len() + 1), rng()};
    out.push_back(sample_trajectory(p, SeqState::initial(p.vocab()), cfg));
  }
  return out;
}

/// Independent oracle for the loss estimator: absorbing tails summed
/// explicitly to a finite horizon instead of in closed form. Model
/// trajectories must end in a terminal state.
inline double explicit_horizon_loss(const TabularPolicy& policy,
                                    std::span<const Trajectory> data,
                                    std::span<const Trajectory> model,
                                    const ObjectiveConfig& cfg, long horizon) {
  const Vocab& v = policy.vocab();
  const double gamma = cfg.gamma;
  const double w_d = cfg.include_model_term ? 0.5 : 1.0;
  const bool mixture = cfg.phi.kind == PhiKind::chi2_mixture;
  const double a = cfg.phi.alpha;
  const double cd = cfg.phi.mixture_beta * cfg.phi.mixture_c;
  const double cm = (1.0 - cfg.phi.mixture_beta) * cfg.phi.mixture_c;

  double total = 0.0;
  for (const auto& t : data) {
    double acc = 0.0;
    double w = 1.0;
    for (const auto& s : t.steps) {
      const double r = policy.logits(s.state)[static_cast<std::size_t>(s.action.id)] -
                       gamma * policy.state_value(s.next);
      acc -= w * phi_scaled(cfg.phi, r);
      acc += w_d * w * (policy.state_value(s.state) - gamma * policy.state_value(s.next));
      if (mixture) acc += a * cd * w * r * r;
      w *= gamma;
    }
    const double vt = policy.state_value(t.final_state(v));
    const double folded = (1.0 - gamma) * vt;
    for (long k = 0; k < horizon; ++k) {
      acc -= w * phi_scaled(cfg.phi, folded);
      acc += w_d * w * folded;
      if (mixture) acc += a * cd * w * folded * folded;
      w *= gamma;
    }
    total += acc / static_cast<double>(data.size());
  }
  for (const auto& t : model) {
    if (!t.ends_terminal(v)) {
      throw std::logic_error("explicit_horizon_loss: model trajectory must terminate");
    }
    double acc = 0.0;
    double w = 1.0;
    for (const auto& s : t.steps) {
      if (cfg.include_model_term) {
        acc += 0.5 * w * (policy.state_value(s.state) - gamma * policy.state_value(s.next));
      }
      if (mixture) {
        const double r = policy.logits(s.state)[static_cast<std::size_t>(s.action.id)] -
                         gamma * policy.state_value(s.next);
        acc += a * cm * w * r * r;
      }
      w *= gamma;
    }
    const double vt = policy.state_value(t.final_state(v));
    const double folded = (1.0 - gamma) * vt;
    for (long k = 0; k < horizon; ++k) {
      if (cfg.include_model_term) acc += 0.5 * w * folded;
      if (mixture) acc += a * cm * w * folded * folded;
      w *= gamma;
    }
    total += acc / static_cast<double>(model.size());
  }
  return total;
}

inline std::vector<Trajectory> terminal_model_batch(const TabularPolicy& p, int count,
                                                    std::mt19937_64& rng) {
  std::vector<Trajectory> out;
  while (static_cast<int>(out.size()) < count) {
    SampleConfig cfg{1.0, 1.0, 6 * (p.max_len() + 1), rng()};
    Trajectory t = sample_trajectory(p, SeqState::initial(p.vocab()), cfg);
    if (t.ends_terminal(p.vocab())) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace seqmatch::testing
