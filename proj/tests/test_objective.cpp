#include <doctest.h>

#include <cmath>
#include <random>

#include "seqmatch/objective.hpp"
#include "test_support.hpp"

using namespace seqmatch;

using testing::explicit_horizon_loss;
using testing::terminal_model_batch;

TEST_CASE("value: stable log sum exp") {
  CHECK(value(std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0)));
  CHECK(value(std::vector<double>{3.25}) == doctest::Approx(3.25));
  CHECK(value(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK_THROWS_AS(value(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("sm_loss: zero reward zeroes the data phi term for chi2") {
  const Vocab v = Vocab::from_tokens({"x"});
  TabularPolicy p = TabularPolicy::make_uniform(v, 2);
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2, 0.5};
  cfg.gamma = 0.8;
  cfg.include_model_term = false;
  // One data triple: [bos] --eos--> terminal. Arrange logit(eos|root) =
  // gamma * V(terminal) so the reward is exactly zero.
  const SeqState root = SeqState::initial(v);
  const double v_term = std::log(static_cast<double>(v.action_count()));
  std::vector<double> row(static_cast<std::size_t>(v.action_count()), -1.3);
  row[static_cast<std::size_t>(v.eos())] = cfg.gamma * v_term;
  p.set_logits(root, row);

  std::vector<TokenId> seq = {v.eos()};
  std::vector<Trajectory> data = {augment_noise(v, seq, NoiseConfig{})};
  const LossBreakdown out = sm_loss(p, data, {}, cfg);
  CHECK(out.data_phi_term == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.total == doctest::Approx(out.data_phi_term + out.data_value_diff +
                                     out.model_value_diff + out.eos_term + out.regularizer));
}

TEST_CASE("mle_loss: uniform, point mass, mean invariance") {
  const Vocab v = Vocab::from_tokens({"a", "b"});  // 4 actions
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  std::vector<std::vector<TokenId>> one = {{v.eos()}};
  CHECK(mle_loss(p, one) == doctest::Approx(std::log(4.0)));

  std::vector<double> row(static_cast<std::size_t>(v.action_count()), -30.0);
  row[static_cast<std::size_t>(v.eos())] = 30.0;
  p.set_logits(SeqState::initial(v), row);
  CHECK(mle_loss(p, one) < 1e-9);

  std::mt19937_64 rng(5);
  testing::randomize_logits(p, rng);
  std::vector<std::vector<TokenId>> twice = {{0, v.eos()}, {0, v.eos()}};
  std::vector<std::vector<TokenId>> once = {{0, v.eos()}};
  CHECK(mle_loss(p, twice) == doctest::Approx(mle_loss(p, once)));
  CHECK_THROWS_AS(mle_loss(p, std::vector<std::vector<TokenId>>{}), std::invalid_argument);
}

TEST_CASE("mle gradient is softmax minus one-hot") {
  const Vocab v = testing::toy_vocab();
  TabularPolicy p = TabularPolicy::make_uniform(v, 2);
  std::mt19937_64 rng(8);
  testing::randomize_logits(p, rng);
  std::vector<std::vector<TokenId>> batch = {{1, v.eos()}};
  GradTable g(p);
  mle_loss(p, batch, &g);
  const SeqState root = SeqState::initial(v);
  std::vector<double> probs;
  p.action_probs(root, probs);
  const int row = p.row_of(root);
  for (ActionId a = 0; a < v.action_count(); ++a) {
    const double want = probs[static_cast<std::size_t>(a)] - (a == 1 ? 1.0 : 0.0);
    CHECK(g.at(row, a, v.action_count()) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("bc_loss: eta 0 equals mle_loss; uniform policy costs log K per action") {
  const Vocab v = testing::toy_vocab();
  TabularPolicy p = TabularPolicy::make_uniform(v, 4);
  std::mt19937_64 rng(13);
  testing::randomize_logits(p, rng);
  const std::vector<TokenId> seq = {0, 1, v.eos()};
  std::vector<Trajectory> plain = {augment_noise(v, seq, NoiseConfig{})};
  std::vector<std::vector<TokenId>> seqs = {seq};
  CHECK(bc_loss(p, plain) == doctest::Approx(mle_loss(p, seqs)).epsilon(1e-12));

  TabularPolicy uniform = TabularPolicy::make_uniform(v, 4);
  std::vector<Trajectory> noisy = {augment_noise(v, seq, NoiseConfig{0.0, 3, {1}})};
  const double per_action = std::log(static_cast<double>(v.action_count()));
  CHECK(bc_loss(uniform, noisy) ==
        doctest::Approx(per_action * static_cast<double>(noisy[0].steps.size())));
}

TEST_CASE("fd_gradient_oracle: quadratic and linear probes") {
  const Vocab v = Vocab::from_tokens({"x"});
  TabularPolicy p = TabularPolicy::make_uniform(v, 1);
  p.raw_logits()[0] = 3.0;
  const auto square = [&]() { return p.raw_logits()[0] * p.raw_logits()[0]; };
  GradTable g = fd_gradient_oracle(square, p, 1e-5);
  CHECK(g.d[0] == doctest::Approx(6.0).epsilon(1e-8));

  const auto linear = [&]() { return 2.5 * p.raw_logits()[1] - 7.0; };
  GradTable g2 = fd_gradient_oracle(linear, p, 0.5);  // exact for any h
  CHECK(g2.d[1] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences for every divergence kind") {
  for (PhiKind kind : {PhiKind::kl, PhiKind::js, PhiKind::chi2, PhiKind::chi2_mixture}) {
    CAPTURE(to_string(kind));
    CHECK(gradcheck_max_rel_error(kind, 10, 42) < 1e-5);
  }
}

TEST_CASE("alpha -> 0 with the model term off reduces the kl loss to gamma-weighted mle") {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(2020);
  TabularPolicy p = TabularPolicy::make_uniform(v, 4);
  testing::randomize_logits(p, rng);
  std::vector<Trajectory> data = testing::random_data_batch(v, 6, 3, rng);

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
      CHECK(ratio > 1.6);
      CHECK(ratio < 2.4);
    }
    prev_gap = gap;
  }

  // near-MLE regime: gamma close to 1, alpha tiny
  cfg.gamma = 0.999;
  cfg.phi = PhiSpec{PhiKind::kl, 1e-4};
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& t : data) {
    const auto payload = t.final_state(v).payload();
    seqs.emplace_back(payload.begin(), payload.end());
  }
  const double mle = mle_loss(p, seqs);
  const double sm = sm_loss(p, data, {}, cfg).total;
  CHECK(std::abs(sm - mle) / std::abs(mle) < 0.01);
}

TEST_CASE("normalization uses the next state: sm_loss differs from mle on generic batches") {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(3030);
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  testing::randomize_logits(p, rng);
  std::vector<Trajectory> data = testing::random_data_batch(v, 4, 2, rng);
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& t : data) {
    const auto payload = t.final_state(v).payload();
    seqs.emplace_back(payload.begin(), payload.end());
  }
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::kl, 1.0};
  cfg.gamma = 0.9;
  cfg.include_model_term = false;
  CHECK(std::abs(sm_loss(p, data, {}, cfg).total - mle_loss(p, seqs)) > 1e-3);
}

TEST_CASE("closed-form absorbing tails equal explicit horizon sums") {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(515);
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  testing::randomize_logits(p, rng, 0.5);
  std::vector<Trajectory> data = testing::random_data_batch(v, 3, 2, rng, 0.2);
  std::vector<Trajectory> model = terminal_model_batch(p, 3, rng);

  for (PhiKind kind : {PhiKind::kl, PhiKind::chi2, PhiKind::chi2_mixture}) {
    for (double gamma : {0.5, 0.9, 0.99}) {
      ObjectiveConfig cfg;
      cfg.phi = PhiSpec{kind, 0.05};
      cfg.gamma = gamma;
      const double closed = sm_loss(p, data, model, cfg).total;
      const double explicit_sum = explicit_horizon_loss(p, data, model, cfg, 10000);
      CHECK(std::abs(closed - explicit_sum) < 1e-8);
    }
    // gamma = 0.999 needs a longer horizon for the same agreement
    ObjectiveConfig cfg;
    cfg.phi = PhiSpec{kind, 0.05};
    cfg.gamma = 0.999;
    const double closed = sm_loss(p, data, model, cfg).total;
    CHECK(std::abs(closed - explicit_horizon_loss(p, data, model, cfg, 60000)) < 1e-8);
  }
}

TEST_CASE("disabling eos handling drops the terminal tails") {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(9090);
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  testing::randomize_logits(p, rng);
  std::vector<Trajectory> data = testing::random_data_batch(v, 3, 2, rng);
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2, 0.5};
  cfg.gamma = 0.9;
  cfg.include_model_term = false;
  const LossBreakdown with = sm_loss(p, data, {}, cfg);
  cfg.eos_handling = false;
  const LossBreakdown without = sm_loss(p, data, {}, cfg);
  CHECK(without.eos_term == 0.0);
  CHECK(with.eos_term != 0.0);
  CHECK(with.data_phi_term == doctest::Approx(without.data_phi_term));
}

TEST_CASE("sm_loss rejects malformed batches") {
  const Vocab v = testing::toy_vocab();
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2, 1.0};
  cfg.gamma = 0.9;

  CHECK_THROWS_AS(sm_loss(p, {}, {}, cfg), std::invalid_argument);

  std::vector<Trajectory> data = {augment_noise(v, std::vector<TokenId>{0, v.eos()}, NoiseConfig{})};
  std::vector<Trajectory> wrong_source = data;  // still source=data
  CHECK_THROWS_AS(sm_loss(p, data, wrong_source, cfg), std::invalid_argument);

  Trajectory unterminated;
  unterminated.source = TrajectorySource::data;
  unterminated.steps.push_back(
      TrajectoryStep{SeqState::initial(v), insert_action(0), SeqState::initial(v).appended(0)});
  std::vector<Trajectory> bad = {unterminated};
  CHECK_THROWS_AS(sm_loss(p, bad, {}, cfg), std::invalid_argument);
}

TEST_CASE("loss breakdown parts sum to the total on random mixture instances") {
  const Vocab v = testing::toy_vocab();
  std::mt19937_64 rng(616);
  TabularPolicy p = TabularPolicy::make_uniform(v, 3);
  testing::randomize_logits(p, rng);
  std::vector<Trajectory> data = testing::random_data_batch(v, 4, 2, rng, 0.3);
  std::vector<Trajectory> model = testing::random_model_batch(p, 4, rng);
  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2_mixture, 0.01};
  cfg.gamma = 0.875;
  const LossBreakdown out = sm_loss(p, data, model, cfg);
  CHECK(out.total == doctest::Approx(out.data_phi_term + out.data_value_diff +
                                     out.model_value_diff + out.eos_term + out.regularizer));
  CHECK(out.regularizer > 0.0);
}

TEST_CASE("monte carlo loss matches the exact objective from occupancies") {
  const Vocab v = testing::toy_vocab();
  const Dataset d = testing::toy_dataset(5);
  std::mt19937_64 rng(747);
  TabularPolicy p = TabularPolicy::make_uniform(v, 4);
  testing::randomize_logits(p, rng, 0.5);
  const double gamma = 0.8;

  ObjectiveConfig cfg;
  cfg.phi = PhiSpec{PhiKind::chi2_mixture, 0.01};
  cfg.gamma = gamma;

  // Exact expected loss from occupancies.
  const ExactOccupancy rho_data = exact_occupancy(v, data_policy(v, d.weighted_sequences()), gamma);
  const ExactOccupancy rho_model = exact_occupancy(v, to_finite_policy(p), gamma);
  const double exact = exact_sm_objective_loss(p, rho_data, &rho_model, cfg);

  // Monte Carlo: the data expectation is exact (uniform weights, whole set);
  // the model side is sampled.
  std::vector<Trajectory> data;
  for (const auto& t : d.trajectories) data.push_back(t);
  std::vector<Trajectory> model;
  std::mt19937_64 seeder(31337);
  for (int i = 0; i < 4000; ++i) {
    SampleConfig sc{1.0, 1.0, 400, seeder()};
    model.push_back(sample_trajectory(p, SeqState::initial(v), sc));
  }
  const double mc = sm_loss(p, data, model, cfg).total;
  CHECK(std::abs(mc - exact) < 1e-2);
}
