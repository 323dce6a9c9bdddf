// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "seqmatch/evalx.hpp"
#include "seqmatch/finite_mdp.hpp"
#include "seqmatch/preprocess.hpp"
#include "seqmatch/trainer.hpp"
#include "test_support.hpp"

using namespace seqmatch;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
  std::string name;
  std::function<void(std::ostream&)> body;  // throws on failure
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

// ---------------------------------------------------------------------------
// 1. Mask-encoding oracle equivalence on randomized action sequences.
void criterion_mask_oracle(std::ostream& note) {
  const auto t0 = Clock::now();
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(0xA11CE);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<EditAction> actions;
    const int len = 1 + static_cast<int>(rng() % 64);
    for (int i = 0; i < len; ++i) {
      if (rng() % 100 < 30) {
        actions.push_back(backspace_action(v));  // includes runs and root hits
      } else {
        actions.push_back(
            insert_action(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(v.eos() + 1))));
      }
    }
    const PreprocessedBatch b = encode_actions(v, actions, 64);
    const auto states = state_views(v, actions);
    for (int i = 0; i < b.length(); ++i) {
      const auto view = row_view(b, i);
      const auto payload = states[static_cast<std::size_t>(i) + 1].payload();
      require(view.size() == payload.size(), "row size mismatch");
      for (std::size_t j = 0; j < view.size(); ++j) {
        require(view[j].first == payload[j] && view[j].second == static_cast<int>(j),
                "row reconstruction mismatch");
      }
      require(b.inputs[static_cast<std::size_t>(i)] != v.backspace(), "backspace leaked into inputs");
      for (int col = i + 1; col < b.length(); ++col) {
        require(b.mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)] == 0,
                "mask not causal");
      }
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  require(secs < 30.0, "runtime budget exceeded");
  note << "10^4 sequences, " << secs << " s";
}

// ---------------------------------------------------------------------------
// 2. Analytic gradients vs central finite differences for all four kinds.
void criterion_gradients(std::ostream& note) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (PhiKind kind : {PhiKind::kl, PhiKind::js, PhiKind::chi2, PhiKind::chi2_mixture}) {
    const double err = gradcheck_max_rel_error(kind, 100, 0xBEEF);
    worst = std::max(worst, err);
    require(err < 1e-5, std::string("gradient mismatch for ") + std::string(to_string(kind)));
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  require(secs < 60.0, "runtime budget exceeded");
  note << "max rel err " << worst << ", " << secs << " s";
}

// ---------------------------------------------------------------------------
// 3. Bellman round trip and telescoping identities on random finite MDPs.
mdp::FiniteMdp random_mdp(std::mt19937_64& rng, int n_states, int n_actions) {
  mdp::FiniteMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.initial_state = 0;
  m.next.resize(n_states);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  for (int s = 0; s < n_states; ++s) {
    m.next[s].resize(n_actions);
    for (int a = 0; a < n_actions; ++a) {
      const int support = 1 + static_cast<int>(rng() % 3);
      double total = 0.0;
      std::vector<mdp::Transition> outs;
      for (int k = 0; k < support; ++k) {
        outs.push_back(
            {static_cast<int>(rng() % static_cast<std::uint64_t>(n_states)), unif(rng)});
        total += outs.back().prob;
      }
      for (auto& t : outs) t.prob /= total;
      m.next[s][a] = std::move(outs);
    }
  }
  return m;
}

mdp::MdpPolicy random_policy(std::mt19937_64& rng, int n_states, int n_actions) {
  mdp::MdpPolicy pi;
  pi.probs.resize(n_states);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  for (int s = 0; s < n_states; ++s) {
    pi.probs[s].resize(n_actions);
    double total = 0.0;
    for (int a = 0; a < n_actions; ++a) total += pi.probs[s][a] = unif(rng);
    for (auto& p : pi.probs[s]) p /= total;
  }
  return pi;
}

void criterion_bellman_identities(std::ostream& note) {
  std::mt19937_64 rng(0xC0FFEE);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_rt = 0.0, worst_tel = 0.0;
  const double gammas[] = {0.5, 0.9, 0.99};
  for (int trial = 0; trial < 50; ++trial) {
    const double gamma = gammas[trial % 3];
    const int n = 4 + static_cast<int>(rng() % 12);
    const int k = 2 + static_cast<int>(rng() % 3);
    const mdp::FiniteMdp m = random_mdp(rng, n, k);
    const mdp::MdpPolicy theta = random_policy(rng, n, k);
    mdp::Table q(n, std::vector<double>(k));
    for (auto& row : q)
      for (auto& x : row) x = normal(rng);

    const mdp::Table r = mdp::inverse_bellman(m, q, theta, gamma);
    const mdp::Table q2 = mdp::soft_bellman_fixed_point(m, r, theta, gamma, 1e-13);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < k; ++a) worst_rt = std::max(worst_rt, std::abs(q2[s][a] - q[s][a]));

    const mdp::MdpPolicy other = random_policy(rng, n, k);
    const mdp::Table rho_any = mdp::occupancy(m, other, gamma);
    const auto tq = mdp::telescoping_quantities(m, q, theta, rho_any, gamma);
    worst_tel = std::max({worst_tel, std::abs(tq[0] - tq[1]), std::abs(tq[1] - tq[2]),
                          std::abs(tq[0] - tq[2])});
  }
  require(worst_rt < 1e-9, "bellman round trip off: " + std::to_string(worst_rt));
  require(worst_tel < 1e-9, "telescoping identity off: " + std::to_string(worst_tel));
  note << "50 MDPs, round-trip " << worst_rt << ", telescoping " << worst_tel;
}

// ---------------------------------------------------------------------------
// 4. Chain closed forms for all n <= 20 and eps in {0.01, 0.1, 0.3}.
void criterion_chain_closed_forms(std::ostream& note) {
  double worst_kl = 0.0, worst_comp = 0.0;
  for (int n = 1; n <= 20; ++n) {
    for (double eps : {0.01, 0.1, 0.3}) {
      const ChainReport r = chain_experiment(n, eps, 0.9);
      worst_kl = std::max(worst_kl, std::abs(r.kl_joint + n * std::log(1.0 - eps)));
      require(std::isinf(r.reverse_kl_joint), "reverse KL should be infinite");
      worst_comp = std::max(worst_comp, std::abs(r.completion_prob - std::pow(1.0 - eps, n)));
      require(r.max_closed_form_error() < 1e-9, "closed-form mismatch");
    }
  }
  require(worst_kl < 1e-9, "KL closed form off: " + std::to_string(worst_kl));
  require(worst_comp < 1e-12, "completion probability off");
  note << "kl err " << worst_kl << ", completion err " << worst_comp;
}

// ---------------------------------------------------------------------------
// 5. alpha -> 0 reduction to the gamma-weighted MLE loss.
void criterion_alpha_reduction(std::ostream& note) {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(0x5EED);
  TabularPolicy p = TabularPolicy::make_uniform(v, 4);
  testing::randomize_logits(p, rng);
  std::vector<Trajectory> data = testing::random_data_batch(v, 8, 3, rng);  // no backspaces

  ObjectiveConfig cfg;
  cfg.gamma = 0.9;
  cfg.include_model_term = false;
  const double reference = gamma_weighted_mle(p, data, cfg.gamma);
  double prev_gap = -1.0;
  for (double alpha : {1e-2, 5e-3, 2.5e-3}) {
    cfg.phi = PhiSpec{PhiKind::kl, alpha};
    const double gap = std::abs(sm_loss(p, data, {}, cfg).total - reference);
    if (prev_gap > 0.0) {
      const double ratio = prev_gap / gap;
      require(ratio > 1.6 && ratio < 2.4, "halving alpha did not halve the gap");
    }
    prev_gap = gap;
  }

  cfg.gamma = 0.999;
  cfg.phi = PhiSpec{PhiKind::kl, 1e-4};
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& t : data) {
    const auto payload = t.final_state(v).payload();
    seqs.emplace_back(payload.begin(), payload.end());
  }
  const double mle = mle_loss(p, seqs);
  const double sm = sm_loss(p, data, {}, cfg).total;
  const double rel = std::abs(sm - mle) / std::abs(mle);
  require(rel < 0.01, "gamma->1 alpha->0 relative gap " + std::to_string(rel));
  note << "reduction gap halves; near-MLE rel err " << rel;
}

// ---------------------------------------------------------------------------
// 6. End-to-end occupancy matching on the toy grammar.
//
// Three payload tokens, five expert strings of length 4 (sequences of length
// 5 with eos). Long enough that a random walk rarely completes a valid
// sequence by accident, which is what makes criterion 7 discriminating.
Dataset acceptance_grammar() {
  return dataset_from_records(
      testing::toy_vocab(),
      {{0, 1, 0, 2}, {1, 0, 2, 0}, {2, 1, 0, 1}, {0, 2, 1, 2}, {1, 2, 0, 0}}, 7);
}

TrainConfig toy_train_config(PhiKind divergence, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.divergence = divergence;
  cfg.context_len = 7;
  cfg.steps = 2000;
  cfg.batch_size = 32;
  cfg.buffer_capacity = 128;
  cfg.reuse_factor = 8;
  cfg.bc_warmup_steps = 300;
  cfg.anneal_start = 300;
  cfg.anneal_end = 600;
  cfg.beta_final = 0.2;
  cfg.aug_copies = 4;
  cfg.eval_every = 100;
  cfg.learning_rate = 4e-2;
  cfg.lr_warmup_steps = 50;
  // Rollouts start at the root state: the model value-difference term
  // telescopes to V(prompt), so prompted rollouts would bias it at toy gamma.
  cfg.prompt_len_max_frac = 0.0;
  cfg.seed = seed;
  return cfg;
}

double csv_column_at_step(const std::string& csv, long step, int column) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (std::stol(cells[0]) == step) return std::stod(cells[static_cast<std::size_t>(column)]);
  }
  throw Failure("csv row for step " + std::to_string(step) + " not found");
}

void criterion_occupancy_matching(std::ostream& note) {
  const auto t0 = Clock::now();
  const Dataset data = acceptance_grammar();
  const TrainConfig cfg = toy_train_config(PhiKind::chi2_mixture, 7);
  std::ostringstream csv;
  const TrainResult result = train(data, cfg, &csv);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

  require(result.final_metrics.kl_exact < 0.01,
          "final exact KL " + std::to_string(result.final_metrics.kl_exact));
  require(secs < 120.0, "runtime budget exceeded");
  const double chi2_at_anneal_end = csv_column_at_step(csv.str(), cfg.anneal_end, 8);
  const double chi2_final = result.final_metrics.chi2_mixture_exact;
  require(chi2_final < chi2_at_anneal_end, "chi2-mixture did not decrease after anneal_end");
  note << "kl " << result.final_metrics.kl_exact << " nats, chi2-mix " << chi2_at_anneal_end
       << " -> " << chi2_final << ", " << secs << " s";
}

// ---------------------------------------------------------------------------
// 7. Backspace recovery ordering under random-token injection.
void criterion_backspace_recovery(std::ostream& note) {
  const Dataset data = acceptance_grammar();
  std::set<std::vector<TokenId>> support;
  for (const auto& ws : data.weighted_sequences()) support.insert(ws.payload);

  auto eval_valid = [&](const TabularPolicy& p, double inject, std::uint64_t seed) {
    SampleConfig cfg{1.0, 1.0, 28, seed};
    return generation_stats(p, support, cfg, 8000, inject);
  };

  double sm_valid = 0.0, bc_valid = 0.0, mle_valid = 0.0;
  double sm_bsp_injected = 0.0, sm_bsp_plain = 0.0;
  const std::uint64_t seeds[] = {11, 22, 33};
  for (std::uint64_t seed : seeds) {
    TrainConfig sm_cfg = toy_train_config(PhiKind::chi2_mixture, seed);
    sm_cfg.steps = 1500;
    sm_cfg.eta = 0.1;  // both sm and bc see the same backspace demonstrations
    const TrainResult sm = train(data, sm_cfg);

    TrainConfig bc_cfg = sm_cfg;
    bc_cfg.beta_final = 1.0;  // pure behavioral cloning on the augmented data
    bc_cfg.buffer_enabled = false;
    const TrainResult bc = train(data, bc_cfg);

    TrainConfig mle_cfg = bc_cfg;
    mle_cfg.eta = 0.0;  // plain maximum likelihood
    const TrainResult mle = train(data, mle_cfg);

    sm_valid += eval_valid(sm.policy, 0.1, seed * 7 + 1).valid_rate;
    bc_valid += eval_valid(bc.policy, 0.1, seed * 7 + 1).valid_rate;
    mle_valid += eval_valid(mle.policy, 0.1, seed * 7 + 1).valid_rate;
    sm_bsp_injected += eval_valid(sm.policy, 0.1, seed * 7 + 2).backspace_rate;
    sm_bsp_plain += eval_valid(sm.policy, 0.0, seed * 7 + 2).backspace_rate;
  }
  sm_valid /= 3.0;
  bc_valid /= 3.0;
  mle_valid /= 3.0;
  sm_bsp_injected /= 3.0;
  sm_bsp_plain /= 3.0;

  require(sm_valid >= bc_valid,
          "valid rate ordering: sm " + std::to_string(sm_valid) + " < bc " + std::to_string(bc_valid));
  require(bc_valid >= mle_valid,
          "valid rate ordering: bc " + std::to_string(bc_valid) + " < mle " + std::to_string(mle_valid));
  require(sm_bsp_injected > sm_bsp_plain, "injection did not raise backspace use");
  note << "valid rate sm " << sm_valid << " >= bc " << bc_valid << " >= mle " << mle_valid
       << "; sm backspace " << sm_bsp_plain << " -> " << sm_bsp_injected << " under injection";
}

// ---------------------------------------------------------------------------
// 8. Estimator consistency against exact occupancies, and closed-form tails.
void criterion_estimator_consistency(std::ostream& note) {
  const Vocab v = testing::toy_vocab();
  const Dataset d = testing::toy_dataset(5);
  std::mt19937_64 rng(0xFACADE);
  TabularPolicy p = TabularPolicy::make_uniform(v, 4);
  testing::randomize_logits(p, rng, 0.5);
  const double gamma = 0.8;

  double worst_gap = 0.0;
  for (PhiKind kind : {PhiKind::kl, PhiKind::chi2_mixture}) {
    ObjectiveConfig cfg;
    cfg.phi = PhiSpec{kind, 0.01};
    cfg.gamma = gamma;
    const ExactOccupancy rho_data =
        exact_occupancy(v, data_policy(v, d.weighted_sequences()), gamma);
    const ExactOccupancy rho_model = exact_occupancy(v, to_finite_policy(p), gamma);
    const double exact = exact_sm_objective_loss(p, rho_data, &rho_model, cfg);

    std::vector<Trajectory> data(d.trajectories.begin(), d.trajectories.end());
    std::vector<Trajectory> model;
    std::mt19937_64 seeder(0xABBA);
    for (int i = 0; i < 10000; ++i) {
      SampleConfig sc{1.0, 1.0, 400, seeder()};
      model.push_back(sample_trajectory(p, SeqState::initial(v), sc));
    }
    const double mc = sm_loss(p, data, model, cfg).total;
    worst_gap = std::max(worst_gap, std::abs(mc - exact));
    require(std::abs(mc - exact) < 1e-2,
            std::string(to_string(kind)) + " estimator gap " + std::to_string(std::abs(mc - exact)));
  }

  // Closed-form terminal tails vs horizon-10^4 truncation.
  std::vector<Trajectory> data = testing::random_data_batch(v, 3, 2, rng, 0.2);
  std::vector<Trajectory> model = testing::terminal_model_batch(p, 3, rng);
  double worst_tail = 0.0;
  for (double g : {0.5, 0.875, 0.99}) {
    ObjectiveConfig cfg;
    cfg.phi = PhiSpec{PhiKind::chi2_mixture, 0.01};
    cfg.gamma = g;
    const double gap = std::abs(sm_loss(p, data, model, cfg).total -
                                testing::explicit_horizon_loss(p, data, model, cfg, 10000));
    worst_tail = std::max(worst_tail, gap);
  }
  require(worst_tail < 1e-8, "terminal tail mismatch " + std::to_string(worst_tail));
  note << "estimator gap " << worst_gap << ", tail gap " << worst_tail;
}

// ---------------------------------------------------------------------------
// 9. rep-n / diversity against brute force, plus the worked values.
void criterion_metric_oracle(std::ostream& note) {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(0xD1CE);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> seq;
    const int len = static_cast<int>(rng() % 32);
    for (int i = 0; i < len; ++i) {
      seq.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(v.payload_count())));
    }
    double prod = 1.0;
    for (int n = 2; n <= 4; ++n) {
      const int total = static_cast<int>(seq.size()) - n + 1;
      double want = 0.0;
      if (total > 0) {
        std::set<std::vector<TokenId>> grams;
        for (int i = 0; i < total; ++i) {
          grams.insert(std::vector<TokenId>(seq.begin() + i, seq.begin() + i + n));
        }
        want = 100.0 * (1.0 - static_cast<double>(grams.size()) / static_cast<double>(total));
      }
      const double got = rep_n(v, seq, n).percent;
      require(got == want, "rep_n oracle mismatch");
      prod *= 1.0 - want / 100.0;
    }
    require(std::abs(diversity(v, seq) - prod) < 1e-12, "diversity oracle mismatch");
  }
  const std::vector<TokenId> same = {0, 0, 0, 0, 0};
  require(rep_n(v, same, 2).percent == 75.0, "worked rep-2 value");
  require(std::abs(diversity(v, same) - 0.25 * (1.0 / 3.0) * 0.5) < 1e-9,
          "worked diversity value");
  note << "10^3 sequences exact, rep-2(aaaaa) = 75, diversity = 0.0416667";
}

// ---------------------------------------------------------------------------
// 10. Byte-identical metrics from two identically seeded CLI training runs.
void criterion_cli_determinism(std::ostream& note) {
  const char* cli = std::getenv("SEQMATCH_CLI");
  require(cli != nullptr, "SEQMATCH_CLI not set");
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() /
                       ("seqmatch-acc-" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() { fs::remove_all(p); }
  } cleanup{dir};

  {
    std::ofstream toy(dir / "toy.txt");
    toy << "ab\nabc\nba\nbca\nc\n";
    std::ofstream cfg(dir / "train.cfg");
    cfg << "dataset = " << (dir / "toy.txt").string() << "\n"
        << "format = text\ncontext_len = 7\ndivergence = chi2-mixture\n"
        << "steps = 300\nbatch_size = 16\nbuffer_capacity = 64\nreuse_factor = 4\n"
        << "bc_warmup_steps = 50\nanneal_start = 50\nanneal_end = 120\n"
        << "eval_every = 60\neta = 0.1\nseed = 321\n";
  }
  auto run = [&](const std::string& out_dir) {
    const std::string cmd = std::string(cli) + " train --config " + (dir / "train.cfg").string() +
                            " --out-dir " + (dir / out_dir).string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "cli train failed");
  };
  run("a");
  run("b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string a = slurp(dir / "a" / "metrics.csv");
  const std::string b = slurp(dir / "b" / "metrics.csv");
  require(!a.empty() && a == b, "metrics CSVs differ between identically seeded runs");
  note << "metrics.csv byte-identical (" << a.size() << " bytes)";
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"1. mask-encoding oracle equivalence", criterion_mask_oracle},
      {"2. gradient correctness (all divergences)", criterion_gradients},
      {"3. Bellman round trip and telescoping identities", criterion_bellman_identities},
      {"4. chain closed forms (kl, reverse kl, completion)", criterion_chain_closed_forms},
      {"5. alpha -> 0 reduction to gamma-weighted MLE", criterion_alpha_reduction},
      {"6. end-to-end occupancy matching (chi2-mixture)", criterion_occupancy_matching},
      {"7. backspace recovery ordering under injection", criterion_backspace_recovery},
      {"8. estimator consistency and terminal tails", criterion_estimator_consistency},
      {"9. rep-n / diversity metric oracle", criterion_metric_oracle},
      {"10. deterministic CLI training metrics", criterion_cli_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    std::ostringstream note;
    bool ok = true;
    std::string why;
    try {
      c.body(note);
    } catch (const std::exception& e) {
      ok = false;
      why = e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", secs);
    if (ok) {
      std::cout << "[PASS] " << c.name << " (" << note.str() << ") [" << buf << "s]\n";
    } else {
      ++failures;
      std::cout << "[FAIL] " << c.name << ": " << why << " [" << buf << "s]\n";
    }
    std::cout.flush();
  }
  if (failures > 0) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
