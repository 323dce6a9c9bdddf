#include "seqmatch/objective.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include "seqmatch/preprocess.hpp"

namespace seqmatch {

double value(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("value: empty action set");
  return log_sum_exp(logits);
}

double GradTable::norm() const {
  double acc = 0.0;
  for (double x : d) acc += x * x;
  return std::sqrt(acc);
}

double GradTable::max_abs() const {
  double m = 0.0;
  for (double x : d) m = std::max(m, std::abs(x));
  return m;
}

void GradTable::axpy(double scale, const GradTable& other) {
  if (d.size() != other.d.size()) throw std::invalid_argument("GradTable::axpy: size mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * other.d[i];
}

namespace {

/// Shared accumulation context: direct logit contributions go straight into
/// the gradient, state-value contributions are collected per row and
/// scattered once through the legal-masked softmax at the end.
struct GradSink {
  const TabularPolicy& policy;
  GradTable* grad;
  std::unordered_map<int, double> dv;

  GradSink(const TabularPolicy& p, GradTable* g) : policy(p), grad(g) {}

  void add_logit(const SeqState& s, ActionId a, double coef) {
    if (!grad) return;
    grad->at(policy.row_of(s), a, policy.action_count()) += coef;
  }

  void add_value(const SeqState& s, double coef) {
    if (!grad) return;
    dv[policy.row_of(s)] += coef;
  }

  void scatter() {
    if (!grad) return;
    const int n = policy.action_count();
    std::vector<std::uint8_t> mask;
    std::vector<double> probs(static_cast<std::size_t>(n));
    for (const auto& [row, coef] : dv) {
      const SeqState& s = policy.states()[static_cast<std::size_t>(row)];
      policy.legal_mask(s, mask);
      softmax_masked(policy.row(row), mask, probs);
      for (int a = 0; a < n; ++a) {
        if (probs[static_cast<std::size_t>(a)] != 0.0) {
          grad->at(row, a, n) += coef * probs[static_cast<std::size_t>(a)];
        }
      }
    }
    dv.clear();
  }
};

void check_sources(std::span<const Trajectory> ts, TrajectorySource want, const char* what) {
  for (const auto& t : ts) {
    if (t.source != want) {
      throw std::invalid_argument(std::string("sm_loss: ") + what +
                                  " batch contains a trajectory of the other source");
    }
  }
}

}  // namespace

LossBreakdown sm_loss(const TabularPolicy& policy, std::span<const Trajectory> data_traj,
                      std::span<const Trajectory> model_traj, const ObjectiveConfig& cfg,
                      GradTable* grad) {
  const Vocab& v = policy.vocab();
  const double gamma = cfg.gamma;
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("sm_loss: gamma outside (0,1)");
  if (data_traj.empty()) throw std::invalid_argument("sm_loss: empty data batch");
  check_sources(data_traj, TrajectorySource::data, "data");
  check_sources(model_traj, TrajectorySource::model, "model");
  const bool model_on = cfg.include_model_term;
  if (model_on && model_traj.empty()) {
    throw std::invalid_argument("sm_loss: model term enabled but model batch is empty");
  }
  const double w_data = model_on ? 0.5 : 1.0;
  const bool mixture = cfg.phi.kind == PhiKind::chi2_mixture;
  const double alpha = cfg.phi.alpha;
  const double c_data = cfg.phi.mixture_beta * cfg.phi.mixture_c;
  const double c_model = (1.0 - cfg.phi.mixture_beta) * cfg.phi.mixture_c;

  GradSink sink(policy, grad);
  LossBreakdown out;

  const double inv_data = 1.0 / static_cast<double>(data_traj.size());
  for (const Trajectory& t : data_traj) {
    if (t.empty()) throw std::invalid_argument("sm_loss: empty data trajectory");
    if (!t.ends_terminal(v)) {
      throw std::invalid_argument("sm_loss: data trajectory does not end in a terminal state");
    }
    double w = 1.0;  // gamma^i
    for (const auto& s : t.steps) {
      const double v_cur = policy.state_value(s.state);
      const double v_next = policy.state_value(s.next);
      const double logit = policy.logits(s.state)[static_cast<std::size_t>(s.action.id)];
      const double reward = logit - gamma * v_next;

      out.data_phi_term -= w * phi_scaled(cfg.phi, reward) * inv_data;
      const double dphi = -w * phi_scaled_prime(cfg.phi, reward) * inv_data;
      sink.add_logit(s.state, s.action.id, dphi);
      sink.add_value(s.next, -gamma * dphi);

      out.data_value_diff += w_data * w * (v_cur - gamma * v_next) * inv_data;
      sink.add_value(s.state, w_data * w * inv_data);
      sink.add_value(s.next, -w_data * w * gamma * inv_data);

      if (mixture) {
        const double scaled = alpha * reward;
        out.regularizer += alpha * c_data * w * reward * reward * inv_data;
        const double dr = 2.0 * alpha * c_data * w * reward * inv_data;
        sink.add_logit(s.state, s.action.id, dr);
        sink.add_value(s.next, -gamma * dr);
        (void)scaled;
      }
      w *= gamma;
    }
    if (cfg.eos_handling) {
      // Closed-form tail at the absorbing terminal state; w is now gamma^K.
      const SeqState& term = t.final_state(v);
      const double v_term = policy.state_value(term);
      const double folded = (1.0 - gamma) * v_term;

      out.eos_term -= w / (1.0 - gamma) * phi_scaled(cfg.phi, folded) * inv_data;
      sink.add_value(term, -w * phi_scaled_prime(cfg.phi, folded) * inv_data);

      out.eos_term += w_data * w * v_term * inv_data;
      sink.add_value(term, w_data * w * inv_data);

      if (mixture) {
        out.regularizer += alpha * c_data * w / (1.0 - gamma) * folded * folded * inv_data;
        sink.add_value(term, 2.0 * alpha * c_data * w * (1.0 - gamma) * v_term * inv_data);
      }
    }
  }

  std::size_t model_count = 0;
  for (const Trajectory& t : model_traj) {
    if (!t.empty()) ++model_count;
  }
  if ((model_on || mixture) && model_count > 0) {
    const double inv_model = 1.0 / static_cast<double>(model_count);
    for (const Trajectory& t : model_traj) {
      if (t.empty()) continue;
      double w = 1.0;
      for (const auto& s : t.steps) {
        const double v_cur = policy.state_value(s.state);
        const double v_next = policy.state_value(s.next);
        if (model_on) {
          out.model_value_diff += 0.5 * w * (v_cur - gamma * v_next) * inv_model;
          sink.add_value(s.state, 0.5 * w * inv_model);
          sink.add_value(s.next, -0.5 * w * gamma * inv_model);
        }
        if (mixture) {
          const double logit = policy.logits(s.state)[static_cast<std::size_t>(s.action.id)];
          const double reward = logit - gamma * v_next;
          out.regularizer += alpha * c_model * w * reward * reward * inv_model;
          const double dr = 2.0 * alpha * c_model * w * reward * inv_model;
          sink.add_logit(s.state, s.action.id, dr);
          sink.add_value(s.next, -gamma * dr);
        }
        w *= gamma;
      }
      if (cfg.eos_handling) {
        const SeqState& last = t.final_state(v);
        const double v_last = policy.state_value(last);
        if (model_on) {
          // Exact telescoping closure, valid for terminated and cut rollouts.
          out.eos_term += 0.5 * w * v_last * inv_model;
          sink.add_value(last, 0.5 * w * inv_model);
        }
        if (mixture && last.terminal(v)) {
          const double folded = (1.0 - gamma) * v_last;
          out.regularizer += alpha * c_model * w / (1.0 - gamma) * folded * folded * inv_model;
          sink.add_value(last, 2.0 * alpha * c_model * w * (1.0 - gamma) * v_last * inv_model);
        }
      }
    }
  }

  sink.scatter();
  out.total = out.data_phi_term + out.data_value_diff + out.model_value_diff + out.eos_term +
              out.regularizer;
  if (!std::isfinite(out.total)) throw NumericalError("sm_loss: non-finite loss");
  return out;
}

double mle_loss(const TabularPolicy& policy, std::span<const std::vector<TokenId>> sequences,
                GradTable* grad, double grad_scale) {
  if (sequences.empty()) throw std::invalid_argument("mle_loss: empty batch");
  const Vocab& v = policy.vocab();
  GradSink sink(policy, grad);
  const double inv = 1.0 / static_cast<double>(sequences.size());
  double loss = 0.0;
  for (const auto& seq : sequences) {
    SeqState s = SeqState::initial(v);
    for (TokenId t : seq) {
      loss += (policy.state_value(s) - policy.logits(s)[static_cast<std::size_t>(t)]) * inv;
      sink.add_value(s, grad_scale * inv);
      sink.add_logit(s, t, -grad_scale * inv);
      s = s.appended(t);
    }
  }
  sink.scatter();
  return loss;
}

double bc_loss(const TabularPolicy& policy, std::span<const Trajectory> trajectories,
               GradTable* grad, double grad_scale) {
  if (trajectories.empty()) throw std::invalid_argument("bc_loss: empty batch");
  GradSink sink(policy, grad);
  const double inv = 1.0 / static_cast<double>(trajectories.size());
  double loss = 0.0;
  for (const auto& t : trajectories) {
    for (const auto& s : t.steps) {
      loss +=
          (policy.state_value(s.state) -
           policy.logits(s.state)[static_cast<std::size_t>(s.action.id)]) *
          inv;
      sink.add_value(s.state, grad_scale * inv);
      sink.add_logit(s.state, s.action.id, -grad_scale * inv);
    }
  }
  sink.scatter();
  return loss;
}

double gamma_weighted_mle(const TabularPolicy& policy, std::span<const Trajectory> data_traj,
                          double gamma) {
  if (data_traj.empty()) throw std::invalid_argument("gamma_weighted_mle: empty batch");
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(data_traj.size());
  for (const auto& t : data_traj) {
    double w = 1.0;
    for (const auto& s : t.steps) {
      loss += w *
              (policy.state_value(s.state) -
               policy.logits(s.state)[static_cast<std::size_t>(s.action.id)]) *
              inv;
      w *= gamma;
    }
  }
  return loss;
}

GradTable fd_gradient_oracle(const std::function<double()>& loss_fn, TabularPolicy& policy,
                             double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient_oracle: h must be positive");
  GradTable g(policy);
  std::vector<double>& params = policy.raw_logits();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss_fn();
    params[i] = saved - h;
    const double down = loss_fn();
    params[i] = saved;
    g.d[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double exact_sm_objective_loss(const TabularPolicy& policy, const ExactOccupancy& rho_data,
                               const ExactOccupancy* rho_model, const ObjectiveConfig& cfg) {
  const Vocab& v = policy.vocab();
  const double gamma = cfg.gamma;
  const bool model_on = cfg.include_model_term;
  if (model_on && rho_model == nullptr) {
    throw std::invalid_argument("exact_sm_objective_loss: model occupancy required");
  }
  const double w_data = model_on ? 0.5 : 1.0;
  const bool mixture = cfg.phi.kind == PhiKind::chi2_mixture;
  const double alpha = cfg.phi.alpha;
  const double c_data = cfg.phi.mixture_beta * cfg.phi.mixture_c;
  const double c_model = (1.0 - cfg.phi.mixture_beta) * cfg.phi.mixture_c;

  double phi_sum = 0.0, data_vdiff = 0.0, model_vdiff = 0.0, reg = 0.0;

  for (const auto& [s, row] : rho_data.mass) {
    const double v_cur = policy.state_value(s);
    if (s.terminal(v)) {
      double mass = 0.0;
      for (double x : row) mass += x;
      const double folded = (1.0 - gamma) * v_cur;
      // Terminal tails: per unit time the absorbing state contributes
      // phi_scaled(folded) and folded to the two sums; the occupancy mass
      // already carries the discounted time measure.
      phi_sum += mass * phi_scaled(cfg.phi, folded);
      data_vdiff += mass * folded;
      if (mixture) reg += alpha * c_data * mass * folded * folded;
      continue;
    }
    for (ActionId a = 0; a < v.action_count(); ++a) {
      const double mass = row[static_cast<std::size_t>(a)];
      if (mass == 0.0) continue;
      const double v_next = policy.state_value(step(v, s, EditAction{a}));
      const double reward = policy.logits(s)[static_cast<std::size_t>(a)] - gamma * v_next;
      phi_sum += mass * phi_scaled(cfg.phi, reward);
      data_vdiff += mass * (v_cur - gamma * v_next);
      if (mixture) reg += alpha * c_data * mass * reward * reward;
    }
  }

  if (rho_model != nullptr && (model_on || mixture)) {
    for (const auto& [s, row] : rho_model->mass) {
      const double v_cur = policy.state_value(s);
      if (s.terminal(v)) {
        double mass = 0.0;
        for (double x : row) mass += x;
        const double folded = (1.0 - gamma) * v_cur;
        model_vdiff += mass * folded;
        if (mixture) reg += alpha * c_model * mass * folded * folded;
        continue;
      }
      for (ActionId a = 0; a < v.action_count(); ++a) {
        const double mass = row[static_cast<std::size_t>(a)];
        if (mass == 0.0) continue;
        const double v_next = policy.state_value(step(v, s, EditAction{a}));
        model_vdiff += mass * (v_cur - gamma * v_next);
        if (mixture) {
          const double reward = policy.logits(s)[static_cast<std::size_t>(a)] - gamma * v_next;
          reg += alpha * c_model * mass * reward * reward;
        }
      }
    }
  }

  const double objective = phi_sum - w_data * data_vdiff - (model_on ? 0.5 * model_vdiff : 0.0);
  return (-objective + reg) / (1.0 - gamma);
}

double gradcheck_max_rel_error(PhiKind kind, int trials, std::uint64_t seed) {
  if (trials <= 0) throw std::invalid_argument("gradcheck: trials must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const int payload = 2 + static_cast<int>(rng() % 2);
    const int max_len = 2 + static_cast<int>(rng() % 2);
    const Vocab v = Vocab::with_payload_count(payload);
    TabularPolicy policy = TabularPolicy::make_uniform(v, max_len);
    for (double& x : policy.raw_logits()) x = normal(rng);

    ObjectiveConfig cfg;
    cfg.phi = PhiSpec{kind, 0.05 + 0.5 * unif(rng)};
    cfg.gamma = 0.5 + 0.45 * unif(rng);
    cfg.include_model_term = true;

    // Data batch: random eos-terminated payload sequences.
    std::vector<Trajectory> data_batch;
    for (int b = 0; b < 3; ++b) {
      std::vector<TokenId> seq;
      const int len = static_cast<int>(rng() % static_cast<std::uint64_t>(max_len));
      for (int i = 0; i < len; ++i) seq.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(payload)));
      seq.push_back(v.eos());
      NoiseConfig noise{0.3, rng(), {}};
      data_batch.push_back(augment_noise(v, seq, noise));
    }
    // Model batch: rollouts of the random policy (may contain backspaces).
    std::vector<Trajectory> model_batch;
    for (int b = 0; b < 3; ++b) {
      SampleConfig sc{1.0, 1.0, 3 * max_len, rng()};
      model_batch.push_back(sample_trajectory(policy, SeqState::initial(v), sc));
    }

    GradTable analytic(policy);
    sm_loss(policy, data_batch, model_batch, cfg, &analytic);
    const GradTable fd = fd_gradient_oracle(
        [&]() { return sm_loss(policy, data_batch, model_batch, cfg).total; }, policy, 1e-5);
    for (std::size_t i = 0; i < analytic.d.size(); ++i) {
      const double denom = std::max(1.0, std::abs(fd.d[i]));
      worst = std::max(worst, std::abs(analytic.d[i] - fd.d[i]) / denom);
    }
  }
  return worst;
}

}  // namespace seqmatch
