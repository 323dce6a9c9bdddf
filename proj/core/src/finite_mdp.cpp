#include "seqmatch/finite_mdp.hpp"

#include <cmath>
#include <cstdlib>

namespace seqmatch::mdp {

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
}

// The Bellman operators also admit gamma = 0 (no lookahead).
void check_gamma_contraction(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1)");
  }
}

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

}  // namespace

void FiniteMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("FiniteMdp: empty spaces");
  if (initial_state < 0 || initial_state >= n_states) {
    throw std::invalid_argument("FiniteMdp: bad initial state");
  }
  if (static_cast<int>(next.size()) != n_states) {
    throw std::invalid_argument("FiniteMdp: transition row count mismatch");
  }
  for (int s = 0; s < n_states; ++s) {
    if (static_cast<int>(next[s].size()) != n_actions) {
      throw std::invalid_argument("FiniteMdp: transition column count mismatch");
    }
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (const auto& tr : next[s][a]) {
        if (tr.next < 0 || tr.next >= n_states) {
          throw std::invalid_argument("FiniteMdp: transition target out of range");
        }
        if (tr.prob < 0.0) throw std::invalid_argument("FiniteMdp: negative probability");
        total += tr.prob;
      }
      if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("FiniteMdp: transition row does not sum to 1");
      }
    }
  }
}

std::vector<double> state_visitation(const FiniteMdp& m, const MdpPolicy& pi, double gamma,
                                     double tol, int max_iter) {
  check_gamma(gamma);
  const int n = m.n_states;
  // State-to-state flow under pi, restricted to transient sources.
  std::vector<std::vector<Transition>> flow(n);
  for (int s = 0; s < n; ++s) {
    if (!m.absorbing.empty() && m.absorbing[s]) continue;
    std::vector<double> into(n, 0.0);
    for (int a = 0; a < m.n_actions; ++a) {
      const double pa = pi.probs[s][a];
      if (pa == 0.0) continue;
      for (const auto& tr : m.next[s][a]) into[tr.next] += pa * tr.prob;
    }
    for (int t = 0; t < n; ++t) {
      if (into[t] != 0.0) flow[s].push_back(Transition{t, into[t]});
    }
  }

  std::vector<double> d(n, 0.0), fresh(n, 0.0);
  d[m.initial_state] = 1.0;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    std::fill(fresh.begin(), fresh.end(), 0.0);
    fresh[m.initial_state] = 1.0;
    for (int s = 0; s < n; ++s) {
      if (d[s] == 0.0) continue;
      if (!m.absorbing.empty() && m.absorbing[s]) continue;
      const double w = gamma * d[s];
      for (const auto& tr : flow[s]) fresh[tr.next] += w * tr.prob;
    }
    double delta = 0.0;
    for (int s = 0; s < n; ++s) {
      if (m.absorbing.empty() || !m.absorbing[s]) delta = std::max(delta, std::abs(fresh[s] - d[s]));
    }
    d.swap(fresh);
    if (delta < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NumericalError("state_visitation: fixed point did not converge");

  // Absorbing states: discounted first-entry mass divided by (1 - gamma).
  if (!m.absorbing.empty()) {
    std::vector<double> inflow(n, 0.0);
    for (int s = 0; s < n; ++s) {
      if (m.absorbing[s] || d[s] == 0.0) continue;
      for (int a = 0; a < m.n_actions; ++a) {
        const double pa = pi.probs[s][a];
        if (pa == 0.0) continue;
        for (const auto& tr : m.next[s][a]) {
          if (m.absorbing[tr.next]) inflow[tr.next] += pa * tr.prob * d[s];
        }
      }
    }
    for (int s = 0; s < n; ++s) {
      if (!m.absorbing[s]) continue;
      double entry = gamma * inflow[s];
      if (s == m.initial_state) entry += 1.0;
      d[s] = entry / (1.0 - gamma);
    }
  }
  return d;
}

Table occupancy(const FiniteMdp& m, const MdpPolicy& pi, double gamma) {
  const std::vector<double> d = state_visitation(m, pi, gamma);
  Table rho(m.n_states, std::vector<double>(m.n_actions, 0.0));
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      rho[s][a] = (1.0 - gamma) * d[s] * pi.probs[s][a];
    }
  }
  return rho;
}

double occupancy_total(const Table& rho) {
  double total = 0.0;
  for (const auto& row : rho)
    for (double x : row) total += x;
  return total;
}

double occupancy_entropy(const Table& rho) {
  double h = 0.0;
  for (const auto& row : rho)
    for (double x : row) h -= xlogy(x, x);
  return h;
}

double table_divergence(const Table& p, const Table& q, DivergenceKind kind) {
  if (p.size() != q.size()) throw std::invalid_argument("table_divergence: shape mismatch");
  double acc = 0.0;
  for (std::size_t s = 0; s < p.size(); ++s) {
    if (p[s].size() != q[s].size()) {
      throw std::invalid_argument("table_divergence: shape mismatch");
    }
    for (std::size_t a = 0; a < p[s].size(); ++a) {
      const double ps = p[s][a], qs = q[s][a];
      switch (kind) {
        case DivergenceKind::kl:
          if (ps > 0.0) {
            if (qs == 0.0) return kInfinity;
            acc += ps * std::log(ps / qs);
          }
          break;
        case DivergenceKind::reverse_kl:
          if (qs > 0.0) {
            if (ps == 0.0) return kInfinity;
            acc += qs * std::log(qs / ps);
          }
          break;
        case DivergenceKind::js: {
          const double ms = 0.5 * (ps + qs);
          if (ps > 0.0) acc += ps * std::log(ps / ms);
          if (qs > 0.0) acc += qs * std::log(qs / ms);
          break;
        }
        case DivergenceKind::chi2:
          if (ps > 0.0) {
            const double r = qs / ps - 1.0;
            acc += ps * r * r;
          }
          break;
        case DivergenceKind::chi2_mixture: {
          const double ms = 0.5 * (ps + qs);
          if (ms > 0.0) {
            const double diff = ps - ms;
            acc += 2.0 * diff * diff / ms;
          }
          break;
        }
        case DivergenceKind::tv:
          acc += 0.5 * std::abs(ps - qs);
          break;
      }
    }
  }
  return acc;
}

std::vector<double> soft_state_values(const Table& q, const MdpPolicy& pi) {
  std::vector<double> v(q.size(), 0.0);
  for (std::size_t s = 0; s < q.size(); ++s) {
    double acc = 0.0;
    for (std::size_t a = 0; a < q[s].size(); ++a) {
      const double pa = pi.probs[s][a];
      if (pa == 0.0) continue;
      acc += pa * (q[s][a] - std::log(pa));
    }
    v[s] = acc;
  }
  return v;
}

namespace {

double expected_next_value(const FiniteMdp& m, const std::vector<double>& v, int s, int a) {
  double acc = 0.0;
  for (const auto& tr : m.next[s][a]) acc += tr.prob * v[tr.next];
  return acc;
}

}  // namespace

Table inverse_bellman(const FiniteMdp& m, const Table& q, const MdpPolicy& pi, double gamma) {
  check_gamma_contraction(gamma);
  const std::vector<double> v = soft_state_values(q, pi);
  Table r(m.n_states, std::vector<double>(m.n_actions, 0.0));
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      r[s][a] = q[s][a] - gamma * expected_next_value(m, v, s, a);
    }
  }
  return r;
}

Table soft_bellman_fixed_point(const FiniteMdp& m, const Table& r, const MdpPolicy& pi,
                               double gamma, double tol, int max_iter) {
  check_gamma_contraction(gamma);
  Table q(m.n_states, std::vector<double>(m.n_actions, 0.0));
  for (int it = 0; it < max_iter; ++it) {
    const std::vector<double> v = soft_state_values(q, pi);
    double residual = 0.0;
    for (int s = 0; s < m.n_states; ++s) {
      for (int a = 0; a < m.n_actions; ++a) {
        const double updated = r[s][a] + gamma * expected_next_value(m, v, s, a);
        residual = std::max(residual, std::abs(updated - q[s][a]));
        q[s][a] = updated;
      }
    }
    if (residual < tol) return q;
  }
  throw NumericalError("soft_bellman_fixed_point: no convergence (operator should contract)");
}

std::array<double, 3> telescoping_quantities(const FiniteMdp& m, const Table& q,
                                             const MdpPolicy& pi_theta, const Table& rho_any,
                                             double gamma) {
  check_gamma(gamma);
  const Table rho_theta = occupancy(m, pi_theta, gamma);
  const Table r = inverse_bellman(m, q, pi_theta, gamma);
  const std::vector<double> v = soft_state_values(q, pi_theta);

  double first = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      const double mass = rho_theta[s][a];
      if (mass == 0.0) continue;
      first += mass * r[s][a];
      first -= mass * std::log(pi_theta.probs[s][a]);
    }
  }

  const double second = (1.0 - gamma) * v[m.initial_state];

  double third = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      const double mass = rho_any[s][a];
      if (mass == 0.0) continue;
      third += mass * (v[s] - gamma * expected_next_value(m, v, s, a));
    }
  }
  return {first, second, third};
}

MdpPolicy policy_from_q(const Table& q) {
  MdpPolicy pi;
  pi.probs.resize(q.size());
  for (std::size_t s = 0; s < q.size(); ++s) {
    pi.probs[s].resize(q[s].size());
    softmax(q[s], pi.probs[s]);
  }
  return pi;
}

}  // namespace seqmatch::mdp
