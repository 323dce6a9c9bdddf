#include <benchmark/benchmark.h>

#include <random>

#include "seqmatch/objective.hpp"
#include "seqmatch/preprocess.hpp"
#include "seqmatch/trainer.hpp"

namespace {

using namespace seqmatch;

Vocab bench_vocab() { return Vocab::from_tokens({"a", "b", "c"}); }

std::vector<EditAction> random_actions(const Vocab& v, int len, int backspace_pct,
                                       std::mt19937_64& rng) {
  std::vector<EditAction> actions;
  actions.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    if (rng() % 100 < static_cast<std::uint64_t>(backspace_pct)) {
      actions.push_back(backspace_action(v));
    } else {
      actions.push_back(
          insert_action(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(v.eos() + 1))));
    }
  }
  return actions;
}

void BM_EncodeActions(benchmark::State& state) {
  const Vocab v = bench_vocab();
  std::mt19937_64 rng(1);
  const auto actions = random_actions(v, static_cast<int>(state.range(0)), 30, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_actions(v, actions, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_EncodeActions)->Arg(64)->Arg(256);

void BM_EnumerateStates(benchmark::State& state) {
  const Vocab v = bench_vocab();
  for (auto _ : state) {
    benchmark::DoNotOptimize(enumerate_states(v, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_EnumerateStates)->Arg(6)->Arg(8);

void BM_ExactOccupancy(benchmark::State& state) {
  const Vocab v = bench_vocab();
  std::mt19937_64 rng(2);
  TabularPolicy p = TabularPolicy::make_uniform(v, static_cast<int>(state.range(0)));
  std::normal_distribution<double> normal(0.0, 0.5);
  for (double& x : p.raw_logits()) x = normal(rng);
  const FinitePolicy pi = to_finite_policy(p);
  for (auto _ : state) {
    benchmark::DoNotOptimize(exact_occupancy(v, pi, 0.875));
  }
}
BENCHMARK(BM_ExactOccupancy)->Arg(4)->Arg(6);

void BM_SampleTrajectory(benchmark::State& state) {
  const Vocab v = bench_vocab();
  std::mt19937_64 rng(3);
  TabularPolicy p = TabularPolicy::make_uniform(v, 6);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (double& x : p.raw_logits()) x = normal(rng);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    SampleConfig cfg{1.0, 0.95, 28, seed++};
    benchmark::DoNotOptimize(sample_trajectory(p, SeqState::initial(v), cfg));
  }
}
BENCHMARK(BM_SampleTrajectory);

void BM_SmLossGrad(benchmark::State& state) {
  const Vocab v = bench_vocab();
  std::mt19937_64 rng(4);
  TabularPolicy p = TabularPolicy::make_uniform(v, 6);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (double& x : p.raw_logits()) x = normal(rng);

  std::vector<Trajectory> data;
  for (int b = 0; b < static_cast<int>(state.range(0)); ++b) {
    std::vector<TokenId> seq;
    for (int i = 0; i < 4; ++i) {
      seq.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(v.payload_count())));
    }
    seq.push_back(v.eos());
    data.push_back(augment_noise(v, seq, NoiseConfig{0.1, rng(), {}}));
  }
  std::vector<Trajectory> model;
  for (int b = 0; b < static_cast<int>(state.range(0)); ++b) {
    SampleConfig cfg{1.0, 1.0, 28, rng()};
    model.push_back(sample_trajectory(p, SeqState::initial(v), cfg));
  }
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2_mixture, 0.01};
  cfg.gamma = 0.875;
  for (auto _ : state) {
    GradTable grad(p);
    benchmark::DoNotOptimize(sm_loss(p, data, model, cfg, &grad));
  }
}
BENCHMARK(BM_SmLossGrad)->Arg(8)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
  const Vocab v = bench_vocab();
  const Dataset d = dataset_from_records(
      v, {{0, 1, 0, 2}, {1, 0, 2, 0}, {2, 1, 0, 1}, {0, 2, 1, 2}, {1, 2, 0, 0}}, 7);
  TrainConfig cfg;
  cfg.context_len = 7;
  cfg.batch_size = 32;
  cfg.buffer_capacity = 64;
  cfg.eval_every = 1000000;  // keep the loop itself the measured quantity
  cfg.bc_warmup_steps = 0;
  cfg.anneal_start = 0;
  cfg.anneal_end = 1;
  for (auto _ : state) {
    cfg.steps = static_cast<int>(state.range(0));
    benchmark::DoNotOptimize(train(d, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
