#include "seqmatch/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqmatch/evalx.hpp"

namespace seqmatch {

double TrainConfig::effective_gamma() const {
  if (gamma > 0.0) return gamma;
  return static_cast<double>(context_len) / static_cast<double>(context_len + 1);
}

int TrainConfig::effective_gen_batch() const {
  return gen_batch_size > 0 ? gen_batch_size : 4 * batch_size;
}

int TrainConfig::effective_max_sample_steps() const {
  return max_sample_steps > 0 ? max_sample_steps : 4 * context_len;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void assign_key(TrainFileConfig& c, const std::string& key, const std::string& value,
                std::size_t line_no) {
  auto bad = [&](const char* why) {
    throw FormatError("config line " + std::to_string(line_no) + ": " + why + " for key '" +
                      key + "'");
  };
  auto as_double = [&]() {
    try {
      std::size_t used = 0;
      const double x = std::stod(value, &used);
      if (used != value.size()) bad("bad number");
      return x;
    } catch (const FormatError&) {
      throw;
    } catch (...) {
      bad("bad number");
      return 0.0;
    }
  };
  auto as_int = [&]() {
    const double x = as_double();
    if (x != std::floor(x)) bad("expected an integer");
    return static_cast<long>(x);
  };
  auto as_bool = [&]() {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad("expected true/false");
    return false;
  };

  TrainConfig& t = c.train;
  if (key == "dataset") c.dataset = value;
  else if (key == "format") c.format = dataset_format_from_string(value);
  else if (key == "alpha") t.alpha = as_double();
  else if (key == "eta") t.eta = as_double();
  else if (key == "gamma") t.gamma = as_double();
  else if (key == "divergence") t.divergence = phi_kind_from_string(value);
  else if (key == "mixture_c") t.mixture_c = as_double();
  else if (key == "mixture_beta") t.mixture_beta = as_double();
  else if (key == "include_model_term") t.include_model_term = as_bool();
  else if (key == "buffer_capacity") t.buffer_capacity = static_cast<int>(as_int());
  else if (key == "reuse_factor") t.reuse_factor = as_double();
  else if (key == "buffer_enabled") t.buffer_enabled = as_bool();
  else if (key == "gen_batch_size") t.gen_batch_size = static_cast<int>(as_int());
  else if (key == "prompt_len_max_frac") t.prompt_len_max_frac = as_double();
  else if (key == "temperature") t.temperature = as_double();
  else if (key == "top_p") t.top_p = as_double();
  else if (key == "max_sample_steps") t.max_sample_steps = static_cast<int>(as_int());
  else if (key == "steps") t.steps = static_cast<int>(as_int());
  else if (key == "batch_size") t.batch_size = static_cast<int>(as_int());
  else if (key == "bc_warmup_steps") t.bc_warmup_steps = static_cast<int>(as_int());
  else if (key == "anneal_start") t.anneal_start = static_cast<int>(as_int());
  else if (key == "anneal_end") t.anneal_end = static_cast<int>(as_int());
  else if (key == "beta_final") t.beta_final = as_double();
  else if (key == "learning_rate") t.learning_rate = as_double();
  else if (key == "lr_warmup_steps") t.lr_warmup_steps = static_cast<int>(as_int());
  else if (key == "weight_decay") t.weight_decay = as_double();
  else if (key == "adam_beta1") t.adam_beta1 = as_double();
  else if (key == "adam_beta2") t.adam_beta2 = as_double();
  else if (key == "adam_eps") t.adam_eps = as_double();
  else if (key == "context_len") t.context_len = static_cast<int>(as_int());
  else if (key == "aug_copies") t.aug_copies = static_cast<int>(as_int());
  else if (key == "length_match_batches") t.length_match_batches = as_bool();
  else if (key == "state_budget") t.state_budget = static_cast<std::size_t>(as_int());
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(as_int());
  else if (key == "eval_every") t.eval_every = static_cast<int>(as_int());
  else if (key == "checkpoint_every") t.checkpoint_every = static_cast<int>(as_int());
  else throw FormatError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
}

void validate(const TrainConfig& t) {
  if (t.anneal_start > t.anneal_end) throw FormatError("config: anneal_start > anneal_end");
  if (t.beta_final < 0.0 || t.beta_final > 1.0) throw FormatError("config: beta_final outside [0,1]");
  if (t.reuse_factor < 1.0) throw FormatError("config: reuse_factor must be >= 1");
  if (t.eta < 0.0 || t.eta > 1.0) throw FormatError("config: eta outside [0,1]");
  if (t.steps <= 0 || t.batch_size <= 0) throw FormatError("config: steps/batch_size must be positive");
  if (t.context_len < 2) throw FormatError("config: context_len must be >= 2");
  if (t.buffer_capacity <= 0) throw FormatError("config: buffer_capacity must be positive");
  if (!(t.alpha > 0.0)) throw FormatError("config: alpha must be positive");
  const double g = t.effective_gamma();
  if (!(g > 0.0 && g < 1.0)) throw FormatError("config: gamma outside (0,1)");
  if (t.aug_copies <= 0) throw FormatError("config: aug_copies must be positive");
  if (t.eval_every <= 0) throw FormatError("config: eval_every must be positive");
}

}  // namespace

TrainFileConfig parse_train_config(std::istream& in) {
  TrainFileConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw FormatError("config line " + std::to_string(line_no) + ": empty key or value");
    }
    assign_key(c, key, value, line_no);
  }
  if (c.dataset.empty()) throw FormatError("config: missing 'dataset'");
  validate(c.train);
  return c;
}

TrainFileConfig parse_train_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open '" + path + "'");
  return parse_train_config(in);
}

double mixing_beta(long step, const TrainConfig& cfg) {
  if (step < cfg.anneal_start) return 1.0;
  if (step >= cfg.anneal_end) return cfg.beta_final;
  const double progress = static_cast<double>(step - cfg.anneal_start) /
                          static_cast<double>(cfg.anneal_end - cfg.anneal_start);
  return 1.0 + progress * (cfg.beta_final - 1.0);
}

int sampling_cadence(const TrainConfig& cfg, bool* clamped) {
  // Each refill inserts `capacity` trajectories and the training step consumes
  // batch_size draws, so a buffered trajectory is seen
  // batch_size * cadence / capacity times over its lifetime.
  const double cadence = cfg.reuse_factor * static_cast<double>(cfg.buffer_capacity) /
                         static_cast<double>(cfg.batch_size);
  if (clamped != nullptr) *clamped = cadence < 1.0;
  return std::max(1, static_cast<int>(std::llround(cadence)));
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(BufferEntry entry) {
  entries_.push_back(std::move(entry));
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

long ReplayBuffer::oldest_insertion() const {
  if (entries_.empty()) throw std::logic_error("ReplayBuffer: empty");
  return entries_.front().inserted_at;
}

std::string metrics_csv_header() {
  return "step,beta,loss_total,loss_bc,loss_sm,data_phi_term,eos_term,kl_exact,"
         "chi2_mixture_exact,backspace_rate,valid_rate,diversity";
}

std::string metrics_csv_row(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                m.step, m.beta, m.loss_total, m.loss_bc, m.loss_sm, m.data_phi_term, m.eos_term,
                m.kl_exact, m.chi2_mixture_exact, m.backspace_rate, m.valid_rate, m.diversity);
  return std::string(buf);
}

namespace {

struct AdamW {
  std::vector<double> m, v;
  long t = 0;

  explicit AdamW(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void apply(std::vector<double>& params, const std::vector<double>& grad, const TabularPolicy& p,
             double lr, const TrainConfig& cfg) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    const std::size_t n_actions = static_cast<std::size_t>(p.action_count());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!p.trainable_row(static_cast<int>(i / n_actions))) continue;
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      params[i] -= lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + cfg.weight_decay * params[i]);
    }
  }
};

double lr_at(long step, const TrainConfig& cfg) {
  const double max_lr = cfg.learning_rate;
  const double min_lr = 0.1 * max_lr;
  if (cfg.lr_warmup_steps > 0 && step < cfg.lr_warmup_steps) {
    return max_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.lr_warmup_steps);
  }
  const long total = std::max<long>(1, cfg.steps - cfg.lr_warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(step - cfg.lr_warmup_steps) / static_cast<double>(total));
  return min_lr + 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)) * (max_lr - min_lr);
}

std::string describe_batch(const Vocab& v, std::span<const Trajectory> batch) {
  std::ostringstream os;
  for (const auto& t : batch) {
    os << "  [";
    for (const auto& s : t.steps) os << ' ' << v.token_name(s.action.id);
    os << " ]\n";
  }
  return os.str();
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg, std::ostream* metrics_csv,
                  std::ostream* log, const CheckpointSink& checkpoint_sink) {
  validate(cfg);
  if (data.trajectories.empty()) throw std::invalid_argument("train: empty dataset");
  const auto t_start = Clock::now();
  const Vocab& vocab = data.vocab;
  const double gamma = cfg.effective_gamma();
  const int max_len = cfg.context_len - 1;

  TrainResult result;
  result.policy = TabularPolicy::make_uniform(vocab, max_len, cfg.state_budget);
  TabularPolicy& policy = result.policy;

  std::mt19937_64 rng(cfg.seed);

  // Noise augmentation happens once up front; aug_copies independent passes
  // widen coverage of corrupted states at desk scale.
  std::vector<Trajectory> data_traj;
  const int copies = cfg.eta > 0.0 ? cfg.aug_copies : 1;
  for (int c = 0; c < copies; ++c) {
    for (const auto& rec : data.records) {
      std::vector<TokenId> with_eos = rec;
      with_eos.push_back(vocab.eos());
      NoiseConfig noise{cfg.eta, rng(), {}};
      data_traj.push_back(make_data_trajectory(vocab, with_eos, cfg.context_len, noise));
    }
  }

  // Clean-data references for the exact metrics.
  const auto weighted = data.weighted_sequences();
  const FinitePolicy pi_data = data_policy(vocab, weighted);
  const ExactOccupancy rho_data = exact_occupancy(vocab, pi_data, gamma, cfg.state_budget);
  std::set<std::vector<TokenId>> support;
  for (const auto& ws : weighted) support.insert(ws.payload);

  ObjectiveConfig ocfg;
  ocfg.phi = PhiSpec{cfg.divergence, cfg.alpha, cfg.mixture_c, cfg.mixture_beta, JsGuard{}};
  ocfg.gamma = gamma;
  ocfg.include_model_term = cfg.include_model_term && cfg.buffer_enabled;
  ocfg.eos_handling = true;

  ReplayBuffer buffer(cfg.buffer_capacity);
  bool cadence_clamped = false;
  const int cadence = sampling_cadence(cfg, &cadence_clamped);
  if (cadence_clamped && log != nullptr) {
    *log << "warning: sampling cadence clamped to 1 (buffer too small for reuse factor)\n";
  }

  const int max_prompt =
      std::max(0, static_cast<int>(cfg.prompt_len_max_frac * static_cast<double>(cfg.context_len)));
  auto refill_buffer = [&](long step) {
    for (int k = 0; k < cfg.buffer_capacity; ++k) {
      const auto& rec = data.records[rng() % data.records.size()];
      const int want = static_cast<int>(rng() % static_cast<std::uint64_t>(max_prompt + 1));
      const int len = std::min<int>(want, static_cast<int>(rec.size()));
      const std::span<const TokenId> prefix(rec.data(), static_cast<std::size_t>(len));
      SampleConfig sc{cfg.temperature, cfg.top_p, cfg.effective_max_sample_steps(), rng()};
      const Trajectory t = sample_trajectory(policy, SeqState::from_payload(vocab, prefix), sc);
      std::vector<EditAction> actions;
      actions.reserve(t.steps.size());
      for (const auto& s : t.steps) actions.push_back(s.action);
      buffer.push(BufferEntry{SeqState::from_payload(vocab, prefix), std::move(actions), step});
    }
    ++result.sampling_rounds;
  };

  StepMetrics metrics;
  const int eval_samples = 256;
  auto run_eval = [&](long step) {
    const auto t0 = Clock::now();
    const FinitePolicy pi_theta = to_finite_policy(policy);
    const ExactOccupancy rho_theta = exact_occupancy(vocab, pi_theta, gamma, cfg.state_budget);
    metrics.kl_exact = occupancy_divergence(rho_data, rho_theta, mdp::DivergenceKind::kl);
    metrics.chi2_mixture_exact =
        occupancy_divergence(rho_data, rho_theta, mdp::DivergenceKind::chi2_mixture);
    const GenerationStats stats =
        generation_stats(policy, support,
                         SampleConfig{cfg.temperature, cfg.top_p,
                                      cfg.effective_max_sample_steps(),
                                      fnv1a(&step, sizeof(step), cfg.seed ^ 0x9e3779b97f4a7c15ull)},
                         eval_samples, 0.0);
    metrics.backspace_rate = stats.backspace_rate;
    metrics.valid_rate = stats.valid_rate;
    metrics.diversity = stats.mean_diversity;
    result.eval_seconds += seconds_since(t0);
  };

  if (metrics_csv != nullptr) *metrics_csv << metrics_csv_header() << '\n';

  AdamW opt(policy.raw_logits().size());
  GradTable g_total(policy);
  for (long step = 0; step < cfg.steps; ++step) {
    if (cfg.buffer_enabled && step % cadence == 0) {
      const auto t0 = Clock::now();
      refill_buffer(step);
      result.sample_seconds += seconds_since(t0);
    }

    std::vector<Trajectory> data_batch;
    data_batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      data_batch.push_back(data_traj[rng() % data_traj.size()]);
    }
    std::vector<Trajectory> model_batch;
    if (cfg.buffer_enabled && buffer.size() > 0) {
      model_batch.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) {
        const BufferEntry& e = buffer.at(static_cast<int>(rng() % static_cast<std::uint64_t>(buffer.size())));
        Trajectory t = trajectory_from_actions(vocab, e.prompt, e.actions, TrajectorySource::model);
        if (cfg.length_match_batches) {
          const std::size_t want = data_batch[static_cast<std::size_t>(b)].steps.size();
          if (t.steps.size() > want) t.steps.resize(std::max<std::size_t>(1, want));
        }
        model_batch.push_back(std::move(t));
      }
    }

    const double beta = mixing_beta(step, cfg);
    const auto t0 = Clock::now();
    GradTable g_bc(policy);
    GradTable g_sm(policy);
    double bc = 0.0;
    LossBreakdown sm;
    try {
      bc = bc_loss(policy, data_batch, &g_bc);
      sm = sm_loss(policy, data_batch, model_batch, ocfg, &g_sm);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + "\nstep " + std::to_string(step) +
                           ", offending data batch:\n" + describe_batch(vocab, data_batch) +
                           "offending model batch:\n" + describe_batch(vocab, model_batch));
    }
    const double total = beta * bc + (1.0 - beta) * sm.total;
    if (!std::isfinite(total)) {
      throw NumericalError("train: non-finite loss at step " + std::to_string(step) +
                           "\noffending data batch:\n" + describe_batch(vocab, data_batch) +
                           "offending model batch:\n" + describe_batch(vocab, model_batch));
    }

    std::fill(g_total.d.begin(), g_total.d.end(), 0.0);
    g_total.axpy(beta, g_bc);
    g_total.axpy(1.0 - beta, g_sm);

    opt.apply(policy.raw_logits(), g_total.d, policy, lr_at(step, cfg), cfg);
    result.grad_seconds += seconds_since(t0);

    metrics.step = step;
    metrics.beta = beta;
    metrics.loss_total = total;
    metrics.loss_bc = bc;
    metrics.loss_sm = sm.total;
    metrics.data_phi_term = sm.data_phi_term;
    metrics.eos_term = sm.eos_term;
    if (step % cfg.eval_every == 0 || step == cfg.anneal_end || step + 1 == cfg.steps) {
      run_eval(step);
    }
    if (metrics_csv != nullptr) *metrics_csv << metrics_csv_row(metrics) << '\n';
    if (checkpoint_sink && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      checkpoint_sink(step, policy);
    }
    if (log != nullptr && (step % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      *log << "step " << step << " beta " << beta << " loss " << total << " kl_exact "
           << metrics.kl_exact << '\n';
    }
  }

  result.final_metrics = metrics;
  result.wall_seconds = seconds_since(t_start);

  nlohmann::json summary;
  summary["steps"] = cfg.steps;
  summary["divergence"] = std::string(to_string(cfg.divergence));
  summary["gamma"] = gamma;
  summary["alpha"] = cfg.alpha;
  summary["final_loss_total"] = metrics.loss_total;
  summary["final_kl_exact"] = metrics.kl_exact;
  summary["final_chi2_mixture_exact"] = metrics.chi2_mixture_exact;
  summary["final_backspace_rate"] = metrics.backspace_rate;
  summary["final_valid_rate"] = metrics.valid_rate;
  summary["final_diversity"] = metrics.diversity;
  summary["wall_seconds"] = result.wall_seconds;
  summary["sample_seconds"] = result.sample_seconds;
  summary["grad_seconds"] = result.grad_seconds;
  summary["eval_seconds"] = result.eval_seconds;
  summary["sampling_rounds"] = result.sampling_rounds;
  result.summary_json = summary.dump(2);
  return result;
}

}  // namespace seqmatch
