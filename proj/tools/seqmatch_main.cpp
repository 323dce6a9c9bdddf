#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "seqmatch/dataio.hpp"
#include "seqmatch/evalx.hpp"
#include "seqmatch/objective.hpp"
#include "seqmatch/preprocess.hpp"
#include "seqmatch/trainer.hpp"

namespace {

using namespace seqmatch;

// Exit codes: 0 success, 1 internal error, 2 usage or malformed input,
// 3 numerical failure.
constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kUsage = 2;
constexpr int kNumerical = 3;

int log_level() {
  const char* env = std::getenv("SEQMATCH_LOG");
  if (env == nullptr) return 0;
  const std::string s(env);
  if (s == "debug") return 2;
  if (s == "info") return 1;
  if (s == "quiet" || s.empty()) return 0;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "seqmatch: " << msg << '\n';
}

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

struct PreprocessArgs {
  std::string input;
  std::string format = "text";
  std::string out;
  int context_len = 16;
  double eta = 0.0;
  std::uint64_t seed = 0;
  int inspect = 0;
};

int cmd_preprocess(const PreprocessArgs& a) {
  const Dataset data = load_dataset(a.input, dataset_format_from_string(a.format), a.context_len);
  info("loaded " + std::to_string(data.records.size()) + " records, vocab payload " +
       std::to_string(data.vocab.payload_count()));
  std::mt19937_64 rng(a.seed);
  std::vector<PreprocessedBatch> batches;
  std::vector<std::vector<ActionId>> action_lists;
  for (const auto& rec : data.records) {
    std::vector<TokenId> with_eos = rec;
    with_eos.push_back(data.vocab.eos());
    const Trajectory t =
        make_data_trajectory(data.vocab, with_eos, a.context_len, NoiseConfig{a.eta, rng(), {}});
    batches.push_back(encode_trajectory(data.vocab, t, 2 * a.context_len));
    std::vector<ActionId> actions;
    for (const auto& s : t.steps) actions.push_back(s.action.id);
    action_lists.push_back(std::move(actions));
  }
  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + a.out + "' for writing");
  write_batch_jsonl(out, batches, action_lists);
  for (int i = 0; i < a.inspect && i < static_cast<int>(batches.size()); ++i) {
    std::cout << "record " << i << "\n"
              << render_batch(data.vocab, batches[static_cast<std::size_t>(i)]);
  }
  info("wrote " + std::to_string(batches.size()) + " records to " + a.out);
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string out_dir;
};

int cmd_train(const TrainArgs& a) {
  const TrainFileConfig file_cfg = parse_train_config_file(a.config);
  const Dataset data = load_dataset(file_cfg.dataset, file_cfg.format, file_cfg.train.context_len);
  std::filesystem::create_directories(a.out_dir);
  std::ofstream metrics(a.out_dir + "/metrics.csv", std::ios::trunc);
  if (!metrics) throw FormatError("cannot open metrics.csv under '" + a.out_dir + "'");
  const auto sink = [&](long step, const TabularPolicy& p) {
    save_checkpoint(p, a.out_dir + "/step-" + std::to_string(step + 1) + ".ckpt");
  };
  std::ostream* log_stream = log_level() >= 1 ? &std::cerr : nullptr;
  TrainResult result = train(data, file_cfg.train, &metrics, log_stream, sink);
  save_checkpoint(result.policy, a.out_dir + "/final.ckpt");
  std::ofstream summary(a.out_dir + "/summary.json", std::ios::trunc);
  summary << result.summary_json << '\n';
  std::cout << "final kl_exact " << fmt(result.final_metrics.kl_exact) << ", chi2_mixture_exact "
            << fmt(result.final_metrics.chi2_mixture_exact) << ", loss "
            << fmt(result.final_metrics.loss_total) << '\n';
  info("wall " + fmt(result.wall_seconds) + "s (sample " + fmt(result.sample_seconds) +
       "s, grad " + fmt(result.grad_seconds) + "s, eval " + fmt(result.eval_seconds) + "s)");
  return kOk;
}

struct SampleArgs {
  std::string checkpoint;
  std::string input;
  std::string format = "text";
  int samples = 10;
  double temperature = 1.0;
  double top_p = 1.0;
  double prompt_frac = 0.0;
  int max_steps = 0;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  const TabularPolicy policy = load_checkpoint(a.checkpoint);
  const Vocab& v = policy.vocab();
  std::vector<SeqState> prompts;
  if (!a.input.empty()) {
    const Dataset data =
        load_dataset(a.input, dataset_format_from_string(a.format), policy.max_len() + 1);
    const int prompt_len =
        std::max(0, static_cast<int>(a.prompt_frac * static_cast<double>(policy.max_len() + 1)));
    for (const auto& rec : data.records) {
      const int len = std::min<int>(prompt_len, static_cast<int>(rec.size()));
      prompts.push_back(SeqState::from_payload(
          v, std::span<const TokenId>(rec.data(), static_cast<std::size_t>(len))));
    }
  }
  std::mt19937_64 rng(a.seed);
  const int max_steps = a.max_steps > 0 ? a.max_steps : 4 * (policy.max_len() + 1);
  for (int i = 0; i < a.samples; ++i) {
    const SeqState prompt = prompts.empty() ? SeqState::initial(v) : prompts[rng() % prompts.size()];
    SampleConfig cfg{a.temperature, a.top_p, max_steps, rng()};
    const Trajectory t = sample_trajectory(policy, prompt, cfg);
    std::cout << i << " actions:";
    for (const auto& s : t.steps) std::cout << ' ' << v.token_name(s.action.id);
    const SeqState& final_state = t.empty() ? prompt : t.final_state(v);
    std::cout << " | sequence:";
    for (TokenId tok : final_state.payload()) std::cout << ' ' << v.token_name(tok);
    std::cout << '\n';
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string input;
  std::string format = "text";
  std::string json_out;
  int samples = 1000;
  double temperature = 1.0;
  double top_p = 1.0;
  double prompt_frac = 0.5;
  double inject = 0.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a) {
  const TabularPolicy policy = load_checkpoint(a.checkpoint);
  const Dataset data =
      load_dataset(a.input, dataset_format_from_string(a.format), policy.max_len() + 1);
  EvalOptions opts;
  opts.samples = a.samples;
  opts.seed = a.seed;
  opts.temperature = a.temperature;
  opts.top_p = a.top_p;
  opts.prompt_frac = a.prompt_frac;
  opts.inject_prob = a.inject;
  opts.threads = a.threads;
  opts.gamma = a.gamma;
  const EvalReport report = evaluate_policy(policy, data, opts);
  std::cout << report.to_table();
  if (!a.json_out.empty()) {
    std::ofstream js(a.json_out, std::ios::trunc);
    if (!js) throw FormatError("cannot open '" + a.json_out + "' for writing");
    js << report.to_json() << '\n';
  }
  return kOk;
}

struct ChainArgs {
  int n = 10;
  double eps = 0.1;
  double gamma = 0.9;
};

int cmd_toy_chain(const ChainArgs& a) {
  const ChainReport r = chain_experiment(a.n, a.eps, a.gamma);
  char buf[160];
  std::printf("chain experiment: n=%d eps=%g gamma=%g\n", a.n, a.eps, a.gamma);
  std::printf("%-28s %16s %16s\n", "quantity", "enumerated", "closed-form");
  auto row = [&](const char* name, double e, double c) {
    std::snprintf(buf, sizeof(buf), "%-28s %16s %16s", name, fmt(e).c_str(), fmt(c).c_str());
    std::printf("%s\n", buf);
  };
  row("kl(data||model)", r.kl_joint, r.kl_closed);
  row("reverse_kl(model||data)", r.reverse_kl_joint, r.reverse_kl_closed);
  row("chi2(model vs data)", r.chi2_joint, r.chi2_closed);
  row("chi2_mixture", r.chi2_mixture_joint, r.chi2_mixture_closed);
  row("completion_prob", r.completion_prob, r.completion_closed);
  std::printf("%-28s %16s\n", "occupancy kl", fmt(r.kl_occupancy).c_str());
  std::printf("%-28s %16s\n", "occupancy reverse_kl", fmt(r.reverse_kl_occupancy).c_str());
  std::printf("%-28s %16s\n", "occupancy chi2", fmt(r.chi2_occupancy).c_str());
  std::printf("%-28s %16s\n", "occupancy chi2_mixture", fmt(r.chi2_mixture_occupancy).c_str());
  const double err = r.max_closed_form_error();
  std::printf("max closed-form error: %s\n", fmt(err).c_str());
  if (!(err <= 1e-9)) {
    std::cerr << "seqmatch: enumerated values disagree with closed forms\n";
    return kNumerical;
  }
  return kOk;
}

struct GradcheckArgs {
  std::string divergence = "chi2-mixture";
  int trials = 100;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.trials <= 0) throw std::invalid_argument("gradcheck: --trials must be positive");
  const double err =
      gradcheck_max_rel_error(phi_kind_from_string(a.divergence), a.trials, a.seed);
  std::printf("gradcheck %s: %d trials, max relative error %s (tol %s)\n", a.divergence.c_str(),
              a.trials, fmt(err).c_str(), fmt(a.tol).c_str());
  if (!(err <= a.tol)) {
    std::cerr << "seqmatch: gradient check failed\n";
    return kNumerical;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occupancy-divergence training for autoregressive sequence models with a backspace action"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "encode a dataset into masked single-pass batches");
  c_pre->add_option("--input", pre.input, "dataset path")->required();
  c_pre->add_option("--format", pre.format, "text | tokens");
  c_pre->add_option("--context-len", pre.context_len, "context length");
  c_pre->add_option("--eta", pre.eta, "noise augmentation probability");
  c_pre->add_option("--seed", pre.seed, "rng seed");
  c_pre->add_option("--out", pre.out, "output jsonl path")->required();
  c_pre->add_option("--inspect", pre.inspect, "print the first N encoded records");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "run the training loop from a config file");
  c_train->add_option("--config", tr.config, "key = value config file")->required();
  c_train->add_option("--out-dir", tr.out_dir, "output directory")->required();

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample", "sample trajectories from a checkpoint");
  c_sample->add_option("--checkpoint", sa.checkpoint)->required();
  c_sample->add_option("--input", sa.input, "dataset for prompts (optional)");
  c_sample->add_option("--format", sa.format);
  c_sample->add_option("--samples", sa.samples);
  c_sample->add_option("--temperature", sa.temperature);
  c_sample->add_option("--top-p", sa.top_p);
  c_sample->add_option("--prompt-frac", sa.prompt_frac);
  c_sample->add_option("--max-steps", sa.max_steps);
  c_sample->add_option("--seed", sa.seed);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "generation-quality metrics for a checkpoint");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--input", ev.input, "dataset path")->required();
  c_eval->add_option("--format", ev.format);
  c_eval->add_option("--json", ev.json_out, "also write the report as JSON");
  c_eval->add_option("--samples", ev.samples);
  c_eval->add_option("--temperature", ev.temperature);
  c_eval->add_option("--top-p", ev.top_p);
  c_eval->add_option("--prompt-frac", ev.prompt_frac);
  c_eval->add_option("--inject", ev.inject, "random-token injection probability");
  c_eval->add_option("--gamma", ev.gamma, "discount for exact divergences (0 disables)");
  c_eval->add_option("--seed", ev.seed);
  c_eval->add_option("--threads", ev.threads, "sampling workers (deterministic per thread count)");

  ChainArgs ch;
  auto* c_chain = app.add_subcommand("toy-chain", "closed-form chain sanity experiment");
  c_chain->add_option("--n", ch.n, "chain length");
  c_chain->add_option("--eps", ch.eps, "per-step error probability");
  c_chain->add_option("--gamma", ch.gamma, "discount for occupancy divergences");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "analytic gradients vs finite differences");
  c_grad->add_option("--divergence", gc.divergence, "kl | js | chi2 | chi2-mixture");
  c_grad->add_option("--trials", gc.trials);
  c_grad->add_option("--tol", gc.tol);
  c_grad->add_option("--seed", gc.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_pre->parsed()) return cmd_preprocess(pre);
    if (c_train->parsed()) return cmd_train(tr);
    if (c_sample->parsed()) return cmd_sample(sa);
    if (c_eval->parsed()) return cmd_eval(ev);
    if (c_chain->parsed()) return cmd_toy_chain(ch);
    if (c_grad->parsed()) return cmd_gradcheck(gc);
  } catch (const FormatError& e) {
    std::cerr << "seqmatch: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "seqmatch: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "seqmatch: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "seqmatch: internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
