#include "seqmatch/evalx.hpp"

#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "seqmatch/objective.hpp"

namespace seqmatch {

RepN rep_n(const Vocab& v, std::span<const TokenId> continuation, int n) {
  if (n < 1) throw std::invalid_argument("rep_n: n must be positive");
  std::vector<TokenId> tokens;
  tokens.reserve(continuation.size());
  for (TokenId t : continuation) {
    if (v.is_payload(t)) tokens.push_back(t);
  }
  const int total = static_cast<int>(tokens.size()) - n + 1;
  if (total <= 0) return RepN{0.0, true};
  std::set<std::vector<TokenId>> unique;
  for (int i = 0; i < total; ++i) {
    unique.insert(std::vector<TokenId>(tokens.begin() + i, tokens.begin() + i + n));
  }
  const double frac = static_cast<double>(unique.size()) / static_cast<double>(total);
  return RepN{100.0 * (1.0 - frac), false};
}

double diversity(const Vocab& v, std::span<const TokenId> continuation) {
  double score = 1.0;
  for (int n = 2; n <= 4; ++n) {
    score *= 1.0 - rep_n(v, continuation, n).percent / 100.0;
  }
  return score;
}

namespace {

struct Accumulated {
  long actions = 0;
  long backspaces = 0;
  long valid = 0;
  long completed = 0;
  double length_sum = 0.0;
  double diversity_sum = 0.0;
  std::map<int, double> rep_sum = {{2, 0.0}, {3, 0.0}, {4, 0.0}};
};

void run_samples(const TabularPolicy& policy, const std::set<std::vector<TokenId>>& support,
                 const SampleConfig& cfg, int count, double inject_prob,
                 const std::vector<SeqState>* prompts, std::uint64_t seed, Accumulated& acc) {
  const Vocab& v = policy.vocab();
  std::mt19937_64 rng(seed);
  for (int k = 0; k < count; ++k) {
    const SeqState prompt = prompts == nullptr || prompts->empty()
                                ? SeqState::initial(v)
                                : (*prompts)[rng() % prompts->size()];
    SampleConfig per = cfg;
    per.seed = rng();
    std::mt19937_64 inject_rng(rng());
    const Trajectory t = inject_prob > 0.0
                             ? sample_trajectory_injected(policy, prompt, per, inject_prob, inject_rng)
                             : sample_trajectory(policy, prompt, per);
    for (const auto& s : t.steps) {
      ++acc.actions;
      if (is_backspace(v, s.action)) ++acc.backspaces;
    }
    const SeqState& final_state = t.empty() ? prompt : t.final_state(v);
    const bool completed = final_state.terminal(v);
    if (completed) {
      ++acc.completed;
      const auto payload = final_state.payload();
      if (support.contains(std::vector<TokenId>(payload.begin(), payload.end()))) ++acc.valid;
    }
    // Continuation: generated payload beyond the prompt.
    const auto payload = final_state.payload();
    const int skip = std::min<int>(prompt.payload_len(), static_cast<int>(payload.size()));
    const std::span<const TokenId> continuation = payload.subspan(static_cast<std::size_t>(skip));
    acc.length_sum += static_cast<double>(payload.size());
    acc.diversity_sum += diversity(v, continuation);
    for (int n = 2; n <= 4; ++n) acc.rep_sum[n] += rep_n(v, continuation, n).percent;
  }
}

}  // namespace

GenerationStats generation_stats(const TabularPolicy& policy,
                                 const std::set<std::vector<TokenId>>& data_support,
                                 const SampleConfig& cfg, int samples, double inject_prob,
                                 int threads, const std::vector<SeqState>* prompts) {
  if (samples <= 0) throw std::invalid_argument("generation_stats: samples must be positive");
  if (threads < 1) throw std::invalid_argument("generation_stats: threads must be >= 1");
  threads = std::min(threads, samples);
  std::vector<Accumulated> parts(static_cast<std::size_t>(threads));
  if (threads == 1) {
    run_samples(policy, data_support, cfg, samples, inject_prob, prompts, cfg.seed, parts[0]);
  } else {
    // Per-worker seeds keep the result deterministic for a fixed thread count.
    std::vector<std::thread> pool;
    const int base = samples / threads;
    const int extra = samples % threads;
    for (int w = 0; w < threads; ++w) {
      const int count = base + (w < extra ? 1 : 0);
      const std::uint64_t seed = fnv1a(&w, sizeof(w), cfg.seed ^ 0xd1b54a32d192ed03ull);
      pool.emplace_back([&, w, count, seed]() {
        run_samples(policy, data_support, cfg, count, inject_prob, prompts, seed,
                    parts[static_cast<std::size_t>(w)]);
      });
    }
    for (auto& th : pool) th.join();
  }
  Accumulated total;
  for (const auto& p : parts) {
    total.actions += p.actions;
    total.backspaces += p.backspaces;
    total.valid += p.valid;
    total.completed += p.completed;
    total.length_sum += p.length_sum;
    total.diversity_sum += p.diversity_sum;
    for (int n = 2; n <= 4; ++n) total.rep_sum[n] += p.rep_sum.at(n);
  }
  GenerationStats out;
  out.samples = samples;
  const double inv = 1.0 / static_cast<double>(samples);
  out.backspace_rate = total.actions == 0
                           ? 0.0
                           : static_cast<double>(total.backspaces) / static_cast<double>(total.actions);
  out.valid_rate = static_cast<double>(total.valid) * inv;
  out.completion_rate = static_cast<double>(total.completed) * inv;
  out.mean_length = total.length_sum * inv;
  out.mean_diversity = total.diversity_sum * inv;
  for (int n = 2; n <= 4; ++n) out.mean_rep_n[n] = total.rep_sum[n] * inv;
  return out;
}

double valid_rate(const TabularPolicy& policy, const std::set<std::vector<TokenId>>& data_support,
                  int samples, std::uint64_t seed, double inject_prob) {
  SampleConfig cfg;
  cfg.max_steps = 4 * (policy.max_len() + 1);
  cfg.seed = seed;
  return generation_stats(policy, data_support, cfg, samples, inject_prob).valid_rate;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["diversity"] = diversity;
  for (const auto& [n, r] : rep_n) j["rep_n"][std::to_string(n)] = r;
  j["backspace_rate"] = backspace_rate;
  j["valid_rate"] = valid_rate;
  j["completion_rate"] = completion_rate;
  j["mean_length"] = mean_length;
  j["perplexity"] = perplexity;
  if (kl_exact) j["kl_exact"] = *kl_exact;
  if (reverse_kl_exact) {
    j["reverse_kl_exact"] =
        std::isinf(*reverse_kl_exact) ? nlohmann::json("inf") : nlohmann::json(*reverse_kl_exact);
  }
  if (chi2_mixture_exact) j["chi2_mixture_exact"] = *chi2_mixture_exact;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  auto line = [&](const char* name, double x) {
    std::snprintf(buf, sizeof(buf), "%-22s %.6f\n", name, x);
    os << buf;
  };
  line("diversity", diversity);
  for (const auto& [n, r] : rep_n) {
    std::snprintf(buf, sizeof(buf), "rep-%d", n);
    std::string name(buf);
    std::snprintf(buf, sizeof(buf), "%-22s %.6f\n", name.c_str(), r);
    os << buf;
  }
  line("backspace_rate", backspace_rate);
  line("valid_rate", valid_rate);
  line("completion_rate", completion_rate);
  line("mean_length", mean_length);
  line("perplexity", perplexity);
  if (kl_exact) line("kl_exact", *kl_exact);
  if (reverse_kl_exact) line("reverse_kl_exact", *reverse_kl_exact);
  if (chi2_mixture_exact) line("chi2_mixture_exact", *chi2_mixture_exact);
  return os.str();
}

EvalReport evaluate_policy(const TabularPolicy& policy, const Dataset& data,
                           const EvalOptions& opts) {
  const Vocab& v = policy.vocab();
  std::set<std::vector<TokenId>> support;
  for (const auto& ws : data.weighted_sequences()) support.insert(ws.payload);

  std::vector<SeqState> prompts;
  const int prompt_len =
      std::max(0, static_cast<int>(opts.prompt_frac * static_cast<double>(data.context_len)));
  for (const auto& rec : data.records) {
    const int len = std::min<int>(prompt_len, static_cast<int>(rec.size()));
    prompts.push_back(
        SeqState::from_payload(v, std::span<const TokenId>(rec.data(), static_cast<std::size_t>(len))));
  }

  SampleConfig cfg{opts.temperature, opts.top_p, 4 * data.context_len, opts.seed};
  const GenerationStats stats = generation_stats(policy, support, cfg, opts.samples,
                                                 opts.inject_prob, opts.threads, &prompts);
  EvalReport report;
  report.diversity = stats.mean_diversity;
  report.rep_n = stats.mean_rep_n;
  report.backspace_rate = stats.backspace_rate;
  report.valid_rate = stats.valid_rate;
  report.completion_rate = stats.completion_rate;
  report.mean_length = stats.mean_length;

  double token_count = 0.0;
  for (const auto& t : data.trajectories) token_count += static_cast<double>(t.steps.size());
  std::vector<std::vector<TokenId>> sequences;
  for (const auto& ws : data.weighted_sequences()) sequences.push_back(ws.payload);
  const double nll = mle_loss(policy, sequences) * static_cast<double>(sequences.size());
  report.perplexity = std::exp(nll / token_count);

  if (opts.gamma > 0.0) {
    const FinitePolicy pi_data = data_policy(v, data.weighted_sequences());
    const ExactOccupancy rho_data = exact_occupancy(v, pi_data, opts.gamma);
    const ExactOccupancy rho_theta = exact_occupancy(v, to_finite_policy(policy), opts.gamma);
    report.kl_exact = occupancy_divergence(rho_data, rho_theta, mdp::DivergenceKind::kl);
    report.reverse_kl_exact =
        occupancy_divergence(rho_data, rho_theta, mdp::DivergenceKind::reverse_kl);
    report.chi2_mixture_exact =
        occupancy_divergence(rho_data, rho_theta, mdp::DivergenceKind::chi2_mixture);
  }
  return report;
}

namespace {

using JointDist = std::map<std::vector<TokenId>, double>;

/// Exhaustive policy-tree walk; requires an editing-free policy (no cycles).
void expand(const Vocab& v, const FinitePolicy& pi, const SeqState& s, double prob, int depth,
            JointDist& out) {
  if (s.terminal(v)) {
    const auto payload = s.payload();
    out[std::vector<TokenId>(payload.begin(), payload.end())] += prob;
    return;
  }
  if (depth <= 0) throw std::logic_error("joint_distribution: depth exhausted");
  const std::vector<double>& row = pi.row(s);
  for (ActionId a = 0; a < v.action_count(); ++a) {
    const double pa = row[static_cast<std::size_t>(a)];
    if (pa == 0.0) continue;
    if (a == v.backspace()) {
      throw std::logic_error("joint_distribution: editing actions not supported");
    }
    expand(v, pi, s.appended(a), prob * pa, depth - 1, out);
  }
}

JointDist joint_distribution(const Vocab& v, const FinitePolicy& pi, int max_depth) {
  JointDist out;
  expand(v, pi, SeqState::initial(v), 1.0, max_depth, out);
  return out;
}

double joint_divergence(const JointDist& p, const JointDist& q, mdp::DivergenceKind kind) {
  // Align on the union of supports and reuse the table divergence.
  mdp::Table pt, qt;
  auto ip = p.begin();
  auto iq = q.begin();
  while (ip != p.end() || iq != q.end()) {
    if (iq == q.end() || (ip != p.end() && ip->first < iq->first)) {
      pt.push_back({ip->second});
      qt.push_back({0.0});
      ++ip;
    } else if (ip == p.end() || iq->first < ip->first) {
      pt.push_back({0.0});
      qt.push_back({iq->second});
      ++iq;
    } else {
      pt.push_back({ip->second});
      qt.push_back({iq->second});
      ++ip;
      ++iq;
    }
  }
  return mdp::table_divergence(pt, qt, kind);
}

}  // namespace

ChainReport chain_experiment(int n, double eps, double gamma) {
  if (n < 1) throw std::invalid_argument("chain_experiment: n must be >= 1");
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("chain_experiment: eps outside [0,1)");
  const Vocab v = Vocab::from_tokens({"c", "w"});
  const TokenId c = 0, w = 1;

  // Data: the single path of n conditionals (n-1 links then eos). The model
  // takes the correct branch with probability 1-eps and the dead-end token w
  // otherwise, then terminates.
  FinitePolicy pi_data, pi_model;
  auto point_mass = [&](TokenId t) {
    std::vector<double> row(static_cast<std::size_t>(v.action_count()), 0.0);
    row[static_cast<std::size_t>(t)] = 1.0;
    return row;
  };
  std::vector<TokenId> prefix;
  for (int k = 0; k < n; ++k) {
    const SeqState s = SeqState::from_payload(v, prefix);
    const TokenId correct = (k == n - 1) ? v.eos() : c;
    pi_data.probs[s] = point_mass(correct);
    std::vector<double> row(static_cast<std::size_t>(v.action_count()), 0.0);
    row[static_cast<std::size_t>(correct)] = 1.0 - eps;
    row[static_cast<std::size_t>(w)] = eps;
    pi_model.probs[s] = row;
    // Dead end: the model terminates after an error.
    std::vector<TokenId> wrong = prefix;
    wrong.push_back(w);
    pi_model.probs[SeqState::from_payload(v, wrong)] = point_mass(v.eos());
    wrong.push_back(v.eos());
    pi_model.probs[SeqState::from_payload(v, wrong)] = point_mass(v.eos());
    prefix.push_back(c);
  }
  // Terminal rows (eos point mass, the shared convention).
  prefix.pop_back();
  prefix.push_back(v.eos());
  pi_data.probs[SeqState::from_payload(v, prefix)] = point_mass(v.eos());
  pi_model.probs[SeqState::from_payload(v, prefix)] = point_mass(v.eos());

  const JointDist joint_data = joint_distribution(v, pi_data, n + 2);
  const JointDist joint_model = joint_distribution(v, pi_model, n + 2);

  ChainReport r;
  r.n = n;
  r.eps = eps;
  r.gamma = gamma;
  const double q = std::pow(1.0 - eps, n);

  r.kl_joint = joint_divergence(joint_data, joint_model, mdp::DivergenceKind::kl);
  r.kl_closed = -static_cast<double>(n) * std::log(1.0 - eps);
  r.reverse_kl_joint = joint_divergence(joint_data, joint_model, mdp::DivergenceKind::reverse_kl);
  r.reverse_kl_closed = eps > 0.0 ? kInfinity : 0.0;
  r.chi2_joint = joint_divergence(joint_data, joint_model, mdp::DivergenceKind::chi2);
  r.chi2_closed = (q - 1.0) * (q - 1.0);
  r.chi2_mixture_joint =
      joint_divergence(joint_data, joint_model, mdp::DivergenceKind::chi2_mixture);
  r.chi2_mixture_closed = 2.0 * (1.0 - q) / (1.0 + q);

  auto it = joint_model.find([&] {
    std::vector<TokenId> path(static_cast<std::size_t>(n - 1), c);
    path.push_back(v.eos());
    return path;
  }());
  r.completion_prob = it == joint_model.end() ? 0.0 : it->second;
  r.completion_closed = q;

  const ExactOccupancy rho_data = exact_occupancy(v, pi_data, gamma);
  const ExactOccupancy rho_model = exact_occupancy(v, pi_model, gamma);
  r.kl_occupancy = occupancy_divergence(rho_data, rho_model, mdp::DivergenceKind::kl);
  r.reverse_kl_occupancy =
      occupancy_divergence(rho_data, rho_model, mdp::DivergenceKind::reverse_kl);
  r.chi2_occupancy = occupancy_divergence(rho_data, rho_model, mdp::DivergenceKind::chi2);
  r.chi2_mixture_occupancy =
      occupancy_divergence(rho_data, rho_model, mdp::DivergenceKind::chi2_mixture);
  return r;
}

double ChainReport::max_closed_form_error() const {
  auto gap = [](double a, double b) {
    if (std::isinf(a) || std::isinf(b)) return (std::isinf(a) && std::isinf(b)) ? 0.0 : kInfinity;
    return std::abs(a - b);
  };
  double e = gap(kl_joint, kl_closed);
  e = std::max(e, gap(reverse_kl_joint, reverse_kl_closed));
  e = std::max(e, gap(chi2_joint, chi2_closed));
  e = std::max(e, gap(chi2_mixture_joint, chi2_mixture_closed));
  e = std::max(e, gap(completion_prob, completion_closed));
  return e;
}

}  // namespace seqmatch
