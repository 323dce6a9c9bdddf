#include "seqmatch/occupancy.hpp"

#include <cmath>
#include <deque>
#include <unordered_map>

namespace seqmatch {

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
}

struct IndexedSpace {
  std::vector<SeqState> states;
  std::unordered_map<SeqState, int, SeqStateHash> index;

  int of(const SeqState& s) const {
    auto it = index.find(s);
    if (it == index.end()) throw UnknownStateError("state not present in table");
    return it->second;
  }
};

IndexedSpace index_keys(const StateActionTable& table) {
  IndexedSpace space;
  space.states.reserve(table.size());
  for (const auto& [s, row] : table) {
    space.index.emplace(s, static_cast<int>(space.states.size()));
    space.states.push_back(s);
  }
  return space;
}

/// Capped sequence MDP over a fixed state set: terminal states absorb, and
/// any edit that would leave the set (an insert at the payload cap) is a
/// self-transition. Legality-respecting policies never take those edits.
mdp::FiniteMdp build_mdp(const Vocab& v, const IndexedSpace& space) {
  mdp::FiniteMdp m;
  m.n_states = static_cast<int>(space.states.size());
  m.n_actions = v.action_count();
  m.initial_state = space.of(SeqState::initial(v));
  m.next.resize(m.n_states);
  m.absorbing.assign(m.n_states, 0);
  for (int i = 0; i < m.n_states; ++i) {
    const SeqState& s = space.states[static_cast<std::size_t>(i)];
    m.next[i].resize(m.n_actions);
    if (s.terminal(v)) m.absorbing[i] = 1;
    for (ActionId a = 0; a < m.n_actions; ++a) {
      const SeqState nxt = step(v, s, EditAction{a});
      auto it = space.index.find(nxt);
      const int j = (it == space.index.end()) ? i : it->second;
      m.next[i][a] = {mdp::Transition{j, 1.0}};
    }
  }
  return m;
}

mdp::MdpPolicy policy_rows(const FinitePolicy& policy, const IndexedSpace& space, int n_actions) {
  mdp::MdpPolicy pi;
  pi.probs.resize(space.states.size());
  for (std::size_t i = 0; i < space.states.size(); ++i) {
    auto it = policy.probs.find(space.states[i]);
    if (it == policy.probs.end()) {
      throw UnknownStateError("policy has no row for a state in the table");
    }
    if (static_cast<int>(it->second.size()) != n_actions) {
      throw std::invalid_argument("policy row has wrong action count");
    }
    pi.probs[i] = it->second;
  }
  return pi;
}

StateActionTable to_table(const IndexedSpace& space, const mdp::Table& rows) {
  StateActionTable out;
  for (std::size_t i = 0; i < space.states.size(); ++i) out[space.states[i]] = rows[i];
  return out;
}

mdp::Table from_table(const IndexedSpace& space, const StateActionTable& table) {
  mdp::Table rows(space.states.size());
  for (std::size_t i = 0; i < space.states.size(); ++i) {
    rows[i] = table.at(space.states[i]);
  }
  return rows;
}

}  // namespace

const std::vector<double>& FinitePolicy::row(const SeqState& s) const {
  auto it = probs.find(s);
  if (it == probs.end()) throw UnknownStateError("FinitePolicy: no row for state");
  return it->second;
}

FinitePolicy data_policy(const Vocab& v, std::span<const WeightedSequence> dataset) {
  if (dataset.empty()) throw std::invalid_argument("data_policy: empty dataset");
  const int n_actions = v.action_count();
  std::map<SeqState, std::vector<double>> counts;
  for (const auto& ws : dataset) {
    if (ws.payload.empty() || ws.payload.back() != v.eos()) {
      throw std::invalid_argument("data_policy: sequence does not end in eos");
    }
    if (!(ws.weight > 0.0)) throw std::invalid_argument("data_policy: non-positive weight");
    SeqState s = SeqState::initial(v);
    for (TokenId t : ws.payload) {
      auto& row = counts.try_emplace(s, n_actions, 0.0).first->second;
      row[static_cast<std::size_t>(t)] += ws.weight;
      s = s.appended(t);
    }
    // Terminal convention: all conditional mass on the eos action.
    auto& last = counts.try_emplace(s, n_actions, 0.0).first->second;
    last[static_cast<std::size_t>(v.eos())] += ws.weight;
  }
  FinitePolicy policy;
  for (auto& [s, row] : counts) {
    double total = 0.0;
    for (double x : row) total += x;
    for (double& x : row) x /= total;
    policy.probs.emplace(s, std::move(row));
  }
  return policy;
}

double ExactOccupancy::total_mass() const {
  double total = 0.0;
  for (const auto& [s, row] : mass)
    for (double x : row) total += x;
  return total;
}

double ExactOccupancy::state_mass(const SeqState& s) const {
  auto it = mass.find(s);
  if (it == mass.end()) return 0.0;
  double total = 0.0;
  for (double x : it->second) total += x;
  return total;
}

double ExactOccupancy::at(const SeqState& s, ActionId a) const {
  auto it = mass.find(s);
  if (it == mass.end()) return 0.0;
  return it->second[static_cast<std::size_t>(a)];
}

ExactOccupancy exact_occupancy(const Vocab& v, const FinitePolicy& policy, double gamma,
                               std::size_t state_budget) {
  check_gamma(gamma);
  // Reachable closure under positive-probability actions.
  IndexedSpace space;
  std::deque<SeqState> frontier;
  auto add = [&](const SeqState& s) {
    if (space.index.contains(s)) return;
    if (space.states.size() >= state_budget) {
      throw BudgetExceededError("exact_occupancy: reachable states exceed budget");
    }
    space.index.emplace(s, static_cast<int>(space.states.size()));
    space.states.push_back(s);
    frontier.push_back(s);
  };
  add(SeqState::initial(v));
  while (!frontier.empty()) {
    SeqState s = std::move(frontier.front());
    frontier.pop_front();
    if (s.terminal(v)) continue;
    const std::vector<double>& row = policy.row(s);
    for (ActionId a = 0; a < v.action_count(); ++a) {
      if (row[static_cast<std::size_t>(a)] > 0.0) add(step(v, s, EditAction{a}));
    }
  }

  const mdp::FiniteMdp m = build_mdp(v, space);
  const mdp::MdpPolicy pi = policy_rows(policy, space, v.action_count());
  const mdp::Table rho = mdp::occupancy(m, pi, gamma);

  ExactOccupancy out;
  out.vocab = v;
  out.gamma = gamma;
  out.mass = to_table(space, rho);
  return out;
}

double occupancy_divergence(const ExactOccupancy& p, const ExactOccupancy& q,
                            mdp::DivergenceKind kind) {
  if (p.gamma != q.gamma) throw std::invalid_argument("occupancy_divergence: gamma mismatch");
  if (!(p.vocab == q.vocab)) {
    throw std::invalid_argument("occupancy_divergence: vocabulary mismatch");
  }
  const int n_actions = p.vocab.action_count();
  // Align both occupancies on the union of their supports.
  mdp::Table pt, qt;
  auto ip = p.mass.begin();
  auto iq = q.mass.begin();
  const std::vector<double> zeros(static_cast<std::size_t>(n_actions), 0.0);
  while (ip != p.mass.end() || iq != q.mass.end()) {
    if (iq == q.mass.end() || (ip != p.mass.end() && ip->first < iq->first)) {
      pt.push_back(ip->second);
      qt.push_back(zeros);
      ++ip;
    } else if (ip == p.mass.end() || iq->first < ip->first) {
      pt.push_back(zeros);
      qt.push_back(iq->second);
      ++iq;
    } else {
      pt.push_back(ip->second);
      qt.push_back(iq->second);
      ++ip;
      ++iq;
    }
  }
  return mdp::table_divergence(pt, qt, kind);
}

double occupancy_entropy(const ExactOccupancy& rho) {
  double h = 0.0;
  for (const auto& [s, row] : rho.mass) {
    for (double x : row) {
      if (x > 0.0) h -= x * std::log(x);
    }
  }
  return h;
}

StateActionTable inverse_bellman(const Vocab& v, const StateActionTable& q,
                                 const FinitePolicy& policy, double gamma) {
  const IndexedSpace space = index_keys(q);
  const mdp::FiniteMdp m = build_mdp(v, space);
  const mdp::MdpPolicy pi = policy_rows(policy, space, v.action_count());
  return to_table(space, mdp::inverse_bellman(m, from_table(space, q), pi, gamma));
}

StateActionTable bellman(const Vocab& v, const StateActionTable& r, const FinitePolicy& policy,
                         double gamma, double tol, int max_iter) {
  const IndexedSpace space = index_keys(r);
  const mdp::FiniteMdp m = build_mdp(v, space);
  const mdp::MdpPolicy pi = policy_rows(policy, space, v.action_count());
  return to_table(space,
                  mdp::soft_bellman_fixed_point(m, from_table(space, r), pi, gamma, tol, max_iter));
}

std::array<double, 3> telescoping_check(const Vocab& v, const StateActionTable& q,
                                        const FinitePolicy& policy_theta,
                                        const ExactOccupancy& rho_any, double gamma) {
  const IndexedSpace space = index_keys(q);
  const mdp::FiniteMdp m = build_mdp(v, space);
  const mdp::MdpPolicy pi = policy_rows(policy_theta, space, v.action_count());
  mdp::Table rho(space.states.size(),
                 std::vector<double>(static_cast<std::size_t>(v.action_count()), 0.0));
  for (const auto& [s, row] : rho_any.mass) {
    rho[static_cast<std::size_t>(space.of(s))] = row;
  }
  return mdp::telescoping_quantities(m, from_table(space, q), pi, rho, gamma);
}

FinitePolicy policy_from_q(const StateActionTable& q) {
  FinitePolicy policy;
  for (const auto& [s, row] : q) {
    std::vector<double> probs(row.size());
    softmax(row, probs);
    policy.probs.emplace(s, std::move(probs));
  }
  return policy;
}

}  // namespace seqmatch
