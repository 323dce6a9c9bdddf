#include "seqmatch/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seqmatch {

TabularPolicy TabularPolicy::make_uniform(const Vocab& v, int max_len,
                                          std::size_t state_budget) {
  TabularPolicy p;
  p.vocab_ = v;
  p.max_len_ = max_len;
  p.states_ = enumerate_states(v, max_len, state_budget);
  p.index_.reserve(p.states_.size());
  for (std::size_t i = 0; i < p.states_.size(); ++i) {
    p.index_.emplace(p.states_[i], static_cast<int>(i));
  }
  p.logits_.assign(p.states_.size() * static_cast<std::size_t>(v.action_count()), 0.0);
  p.trainable_.resize(p.states_.size());
  for (std::size_t i = 0; i < p.states_.size(); ++i) {
    p.trainable_[i] = p.states_[i].terminal(v) ? 0 : 1;
  }
  return p;
}

int TabularPolicy::row_of(const SeqState& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) {
    throw UnknownStateError("TabularPolicy: state outside the enumerated table");
  }
  return it->second;
}

std::span<const double> TabularPolicy::row(int r) const {
  const auto n = static_cast<std::size_t>(action_count());
  return std::span<const double>(logits_).subspan(static_cast<std::size_t>(r) * n, n);
}

std::span<double> TabularPolicy::row_mut(int r) {
  const auto n = static_cast<std::size_t>(action_count());
  return std::span<double>(logits_).subspan(static_cast<std::size_t>(r) * n, n);
}

void TabularPolicy::set_logits(const SeqState& s, std::span<const double> values) {
  if (static_cast<int>(values.size()) != action_count()) {
    throw std::invalid_argument("set_logits: wrong action count");
  }
  auto dst = row_mut(row_of(s));
  std::copy(values.begin(), values.end(), dst.begin());
}

void TabularPolicy::legal_mask(const SeqState& s, std::vector<std::uint8_t>& out) const {
  out.assign(static_cast<std::size_t>(action_count()), 1);
  if (s.terminal(vocab_)) return;  // absorbing; all actions self-loop
  if (s.payload_len() >= max_len_) {
    // At the payload cap only backspace keeps the state in the table.
    std::fill(out.begin(), out.end(), 0);
    out[static_cast<std::size_t>(vocab_.backspace())] = 1;
  }
}

double TabularPolicy::state_value(const SeqState& s) const {
  const int r = row_of(s);
  std::vector<std::uint8_t> mask;
  legal_mask(s, mask);
  return log_sum_exp_masked(row(r), mask);
}

double TabularPolicy::action_probs(const SeqState& s, std::vector<double>& out) const {
  const int r = row_of(s);
  std::vector<std::uint8_t> mask;
  legal_mask(s, mask);
  out.resize(static_cast<std::size_t>(action_count()));
  return softmax_masked(row(r), mask, out);
}

std::uint64_t TabularPolicy::enumeration_hash() const {
  std::uint64_t h = fnv1a(&max_len_, sizeof(max_len_));
  const int payload = vocab_.payload_count();
  h = fnv1a(&payload, sizeof(payload), h);
  for (int t = 0; t < vocab_.token_count(); ++t) {
    const std::string& name = vocab_.token_name(t);
    h = fnv1a(name.data(), name.size(), h);
  }
  for (const SeqState& s : states_) {
    const auto tokens = s.tokens();
    h = fnv1a(tokens.data(), tokens.size_bytes(), h);
  }
  return h;
}

namespace {

/// Temperature + nucleus truncation applied to a state's legal-masked
/// distribution. Deterministic: stable sort by probability, ties broken by
/// action id, boundary ties included in the kept prefix.
void nucleus_probs(const TabularPolicy& policy, const SeqState& s, double temperature,
                   double top_p, std::vector<double>& probs) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
  const int n = policy.action_count();
  std::vector<std::uint8_t> mask;
  policy.legal_mask(s, mask);
  std::vector<double> scaled(static_cast<std::size_t>(n));
  const auto row = policy.logits(s);
  for (int a = 0; a < n; ++a) scaled[static_cast<std::size_t>(a)] = row[static_cast<std::size_t>(a)] / temperature;
  probs.resize(static_cast<std::size_t>(n));
  softmax_masked(scaled, mask, probs);
  if (top_p >= 1.0) return;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)]) {
      return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  double cum = 0.0;
  std::size_t kept = 0;
  while (kept < order.size() && cum < top_p) {
    cum += probs[static_cast<std::size_t>(order[kept])];
    ++kept;
  }
  // Include any actions tied with the boundary probability.
  while (kept < order.size() &&
         probs[static_cast<std::size_t>(order[kept])] ==
             probs[static_cast<std::size_t>(order[kept - 1])]) {
    ++kept;
  }
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 0);
  double total = 0.0;
  for (std::size_t i = 0; i < kept; ++i) {
    keep[static_cast<std::size_t>(order[i])] = 1;
    total += probs[static_cast<std::size_t>(order[i])];
  }
  for (int a = 0; a < n; ++a) {
    probs[static_cast<std::size_t>(a)] = keep[static_cast<std::size_t>(a)]
                                             ? probs[static_cast<std::size_t>(a)] / total
                                             : 0.0;
  }
}

ActionId draw(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  ActionId last = 0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (probs[a] == 0.0) continue;
    last = static_cast<ActionId>(a);
    cum += probs[a];
    if (u < cum) return last;
  }
  return last;  // numerical slack: return the last positive-probability action
}

Trajectory rollout(const TabularPolicy& policy, const SeqState& prompt, const SampleConfig& cfg,
                   double inject_prob, std::mt19937_64& rng) {
  const Vocab& v = policy.vocab();
  Trajectory t;
  t.source = TrajectorySource::model;
  SeqState cur = prompt;
  std::vector<double> probs;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_payload(0, v.payload_count() - 1);
  for (int i = 0; i < cfg.max_steps && !cur.terminal(v); ++i) {
    nucleus_probs(policy, cur, cfg.temperature, cfg.top_p, probs);
    const EditAction chosen{draw(probs, rng)};
    SeqState nxt = step(v, cur, chosen);
    bool stochastic = false;
    if (inject_prob > 0.0 && is_insert(v, chosen) && unif(rng) < inject_prob) {
      const TokenId injected = random_payload(rng);
      if (injected != inserted_token(chosen)) {
        nxt = cur.appended(injected);
        stochastic = true;
      }
    }
    t.steps.push_back(TrajectoryStep{cur, chosen, nxt, stochastic});
    cur = std::move(nxt);
  }
  return t;
}

}  // namespace

Trajectory sample_trajectory(const TabularPolicy& policy, const SeqState& prompt,
                             const SampleConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return rollout(policy, prompt, cfg, 0.0, rng);
}

Trajectory sample_trajectory_injected(const TabularPolicy& policy, const SeqState& prompt,
                                      const SampleConfig& cfg, double inject_prob,
                                      std::mt19937_64& rng) {
  return rollout(policy, prompt, cfg, inject_prob, rng);
}

FinitePolicy to_finite_policy(const TabularPolicy& policy, double temperature, double top_p) {
  const Vocab& v = policy.vocab();
  FinitePolicy out;
  std::vector<double> probs;
  for (const SeqState& s : policy.states()) {
    if (s.terminal(v)) {
      // Shared terminal convention: point mass on the eos action.
      std::vector<double> row(static_cast<std::size_t>(v.action_count()), 0.0);
      row[static_cast<std::size_t>(v.eos())] = 1.0;
      out.probs.emplace(s, std::move(row));
      continue;
    }
    nucleus_probs(policy, s, temperature, top_p, probs);
    out.probs.emplace(s, probs);
  }
  return out;
}

ExactOccupancy monte_carlo_occupancy(const TabularPolicy& policy, double gamma,
                                     const SampleConfig& cfg, int n_trajectories) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (n_trajectories <= 0) throw std::invalid_argument("need at least one trajectory");
  const Vocab& v = policy.vocab();
  ExactOccupancy out;
  out.vocab = v;
  out.gamma = gamma;
  const double scale = 1.0 / static_cast<double>(n_trajectories);
  std::mt19937_64 rng(cfg.seed);
  for (int k = 0; k < n_trajectories; ++k) {
    SampleConfig per = cfg;
    per.seed = rng();
    const Trajectory t = sample_trajectory(policy, SeqState::initial(v), per);
    double w = (1.0 - gamma) * scale;
    for (const auto& s : t.steps) {
      auto& row = out.mass.try_emplace(s.state, static_cast<std::size_t>(v.action_count()), 0.0)
                      .first->second;
      row[static_cast<std::size_t>(s.action.id)] += w;
      w *= gamma;
    }
    if (t.ends_terminal(v)) {
      // Geometric tail at the terminal state, spread by the terminal-row
      // convention (point mass on eos).
      const SeqState& term = t.final_state(v);
      auto& row = out.mass.try_emplace(term, static_cast<std::size_t>(v.action_count()), 0.0)
                      .first->second;
      row[static_cast<std::size_t>(v.eos())] += w / (1.0 - gamma);
    }
  }
  return out;
}

}  // namespace seqmatch
