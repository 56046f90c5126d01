// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {
namespace {

TripletformerConfig tiny_config() {
  TripletformerConfig c;
  c.channels = 2;
  c.depth = 1;
  c.input_width = c.encoder_width = c.target_width = c.decoder_width = 8;
  c.ff_hidden = 8;
  c.induced_points = 2;
  c.num_heads = 1;
  return c;
}

InterpolationInstance random_instance(std::size_t s, std::size_t r, std::size_t channels, Rng& rng) {
  InterpolationInstance inst;
  for (std::size_t i = 0; i < s; ++i) inst.context.push_back({rng.uniform(), 1 + rng.uniform_index(channels), rng.normal()});
  for (std::size_t i = 0; i < r; ++i) {
    inst.queries.push_back({rng.uniform(), 1 + rng.uniform_index(channels)});
    inst.targets.push_back(rng.normal());
  }
  return inst;
}

GaussianPrediction column_prediction(std::vector<double> mu, std::vector<double> sd) {
  return {Tensor::column(std::move(mu)), Tensor::column(std::move(sd))};
}

// Small standardized sine set shared by the loop tests.
struct SineSplits {
  std::vector<AsTSRecord> train, val;
};

SineSplits sine_splits(std::size_t n_series, std::size_t length) {
  const auto ds = generate_sine_dataset({.n_series = n_series, .length = length, .channels = 2, .noise_sd = 0.1, .seed = 4});
  const std::size_t n_train = n_series * 3 / 4;
  const std::span all(ds.records);
  const auto res = preprocess(all.first(n_train), all, 2);
  return {{res.records.begin(), res.records.begin() + static_cast<std::ptrdiff_t>(n_train)},
          {res.records.begin() + static_cast<std::ptrdiff_t>(n_train), res.records.end()}};
}

// ---- gaussian NLL ------------------------------------------------------------------

TEST(GaussianNll, ReferenceValues) {
  EXPECT_NEAR(gaussian_nll(0, 0, 1), 0.918939, 1e-6);
  EXPECT_NEAR(gaussian_nll(1, 0, 1), 1.418939, 1e-6);
  EXPECT_NEAR(gaussian_nll(2, 1, 0.5), 2.225792, 1e-6);
  EXPECT_DOUBLE_EQ(gaussian_nll(0, 0, 1), 0.5 * std::log(2 * std::numbers::pi));
  EXPECT_THROW(gaussian_nll(0, 0, 0), std::invalid_argument);
  EXPECT_THROW(gaussian_nll(0, 0, -1), std::invalid_argument);
}

// ---- loss ----------------------------------------------------------------------------

TEST(Loss, LambdaZeroIsExactlyTheMeanNll) {
  const auto pred = column_prediction({0.1, -0.3, 2.0}, {0.5, 1.2, 0.8});
  const std::vector<double> u{0.0, 0.4, 1.1};
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) total += gaussian_nll(u[i], pred.mean[i], pred.stddev[i]);
  EXPECT_EQ(interpolation_loss(pred, Tensor::column(u), 0.0).item(), total / 3.0);
}

TEST(Loss, PerfectMeanLeavesOnlyTheLogScale) {
  const auto pred = column_prediction({0.5, -1.0}, {0.3, 2.0});
  const double want = (0.5 * std::log(2 * std::numbers::pi) + std::log(0.3) + 0.5 * std::log(2 * std::numbers::pi) +
                       std::log(2.0)) / 2.0;
  EXPECT_NEAR(interpolation_loss(pred, Tensor::column({0.5, -1.0}), 5.0).item(), want, 1e-15);
}

TEST(Loss, MatchesScalarLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng.uniform_index(6);
    std::vector<double> mu(r), sd(r), u(r);
    for (std::size_t i = 0; i < r; ++i) {
      mu[i] = rng.normal();
      sd[i] = rng.uniform(0.1, 2.0);
      u[i] = rng.normal();
    }
    const double lambda = rng.uniform(0.0, 10.0);
    double nll = 0.0, se = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      nll += 0.5 * std::log(2 * std::numbers::pi) + std::log(sd[i]) + (u[i] - mu[i]) * (u[i] - mu[i]) / (2 * sd[i] * sd[i]);
      se += (u[i] - mu[i]) * (u[i] - mu[i]);
    }
    const double want = nll / static_cast<double>(r) + lambda * se / static_cast<double>(r);
    EXPECT_NEAR(interpolation_loss(column_prediction(mu, sd), Tensor::column(u), lambda).item(), want, 1e-12);
  }
}

TEST(Loss, NondecreasingInLambda) {
  const auto pred = column_prediction({0.0, 1.0}, {1.0, 1.0});
  const Tensor u = Tensor::column({1.0, 0.0});
  double prev = -INFINITY;
  for (double lambda : {0.0, 0.5, 1.0, 5.0, 10.0}) {
    const double l = interpolation_loss(pred, u, lambda).item();
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(Loss, RejectsEmptyOrMismatchedTargets) {
  EXPECT_THROW(interpolation_loss(column_prediction({}, {}), Tensor::column({}), 0.0), std::invalid_argument);
  EXPECT_THROW(interpolation_loss(column_prediction({1}, {1}), Tensor::column({1, 2}), 0.0), DimensionError);
}

TEST(Loss, NllTermsGradientMatchesFiniteDifferences) {
  auto f = [](std::span<const Tensor> p) {
    return sum(gaussian_nll_terms(p[0], softplus(p[1]), Tensor::column({0.3, -1.0, 2.0})));
  };
  const std::vector<Tensor> params{Tensor::column({0.1, 0.2, -0.5}), Tensor::column({-0.4, 0.3, 1.1})};
  EXPECT_LT(grad_check(f, params, 1e-5).max_relative_error, 1e-7);
}

TEST(BatchLoss, EqualsMeanOfUnbatchedLosses) {
  const auto p = init_params(tiny_config(), 3);
  Rng rng(2);
  std::vector<InterpolationInstance> inst{random_instance(3, 5, 2, rng), random_instance(7, 2, 2, rng),
                                          random_instance(5, 4, 2, rng)};
  const double lambda = 2.0;
  double total = 0.0;
  for (const auto& i : inst) total += interpolation_loss(predict_distribution(p, i), Tensor::column(i.targets), lambda).item();
  EXPECT_NEAR(batch_loss(p, batch_pad(inst, 2), lambda).item(), total / 3.0, 1e-10);
}

TEST(BatchLoss, PaddingContributesNoGradient) {
  const auto p = init_params(tiny_config(), 4);
  Rng rng(3);
  const std::vector<InterpolationInstance> inst{random_instance(3, 2, 2, rng), random_instance(8, 6, 2, rng)};

  auto grads_of = [&](std::span<const InterpolationInstance> batch) {
    Tape tape;
    const auto w = watch_params(tape, p);
    const Gradients g = tape.backward(batch_loss(w, batch_pad(batch, 2), 1.0));
    std::vector<std::vector<double>> out;
    for_each_param(w, [&](const std::string&, const Tensor& t) { out.push_back(g.of(t).values()); });
    return out;
  };
  const auto both = grads_of(inst);
  const auto first = grads_of(std::span(inst).first(1));
  const auto second = grads_of(std::span(inst).subspan(1, 1));
  for (std::size_t i = 0; i < both.size(); ++i)
    for (std::size_t j = 0; j < both[i].size(); ++j)
      EXPECT_NEAR(both[i][j], 0.5 * (first[i][j] + second[i][j]), 1e-12);
}

TEST(BatchLoss, FullModelGradientPassesFiniteDifferences) {
  const auto p = init_params(tiny_config(), 5);
  Rng rng(4);
  const auto inst = random_instance(6, 3, 2, rng);
  const Batch batch = batch_pad(std::span(&inst, 1), 2);
  auto f = [&](std::span<const Tensor> flat) {
    TripletformerParams q = p;
    assign_params(q, flat);
    return batch_loss(q, batch, 1.0);
  };
  const GradCheckResult r = grad_check(f, flatten_params(p), 1e-4);
  EXPECT_EQ(r.entries_checked, p.parameter_count());
  EXPECT_LT(r.max_relative_error, 1e-4) << "param " << r.worst_param << " index " << r.worst_index << " analytic "
                                         << r.analytic << " numeric " << r.numeric;
}

// ---- adam --------------------------------------------------------------------------------

TEST(Adam, FirstStepHasMagnitudeLr) {
  std::vector<Tensor> theta{Tensor({1}, {1.0})};
  const std::vector<Tensor> g{Tensor({1}, {0.37})};
  AdamState state;
  adam_step(theta, g, state, 0.01);
  EXPECT_NEAR(1.0 - theta[0][0], 0.01, 1e-8);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> theta{Tensor({2}, {1.0, -2.0})};
  const std::vector<Tensor> g{Tensor({2}, {0.0, 0.0})};
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(theta, g, state, 0.1);
  EXPECT_EQ(theta[0].values(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, ConvergesOnAQuadraticLikeTheScalarRecurrence) {
  std::vector<Tensor> theta{Tensor({1}, {0.0})};
  AdamState state;
  double x = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * (theta[0][0] - 3.0);
    adam_step(theta, std::vector<Tensor>{Tensor({1}, {g})}, state, 0.1);
    const double gx = 2.0 * (x - 3.0);
    m = 0.9 * m + 0.1 * gx;
    v = 0.999 * v + 0.001 * gx * gx;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(theta[0][0], x, 1e-12);
  EXPECT_LT(std::abs(theta[0][0] - 3.0), 0.1);
}

TEST(Adam, ChecksShapes) {
  std::vector<Tensor> theta{Tensor({2}, {0.0, 0.0})};
  AdamState state;
  EXPECT_THROW(adam_step(theta, std::vector<Tensor>{Tensor({3}, {0, 0, 0})}, state, 0.1), DimensionError);
  EXPECT_THROW(adam_step(theta, std::vector<Tensor>{}, state, 0.1), DimensionError);
}

// ---- config ------------------------------------------------------------------------------------

TEST(TrainConfigJson, RoundTripAndValidation) {
  TrainConfig c;
  c.lambda = 5;
  c.sampler = SamplerKind::burst;
  c.seed = 12345678901234ULL;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"lr", 1}}), std::invalid_argument);
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---- training loop --------------------------------------------------------------------------------

TEST(Train, LossDropsAndRunsAreReproducible) {
  const auto data = sine_splits(48, 16);
  TrainConfig tc;
  tc.max_epochs = 20;
  tc.patience = 100;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  const auto a = train(tiny_config(), tc, data.train, data.val);
  ASSERT_EQ(a.history.epochs.size(), 20u);
  EXPECT_LT(a.history.epochs[19].train_loss, a.history.epochs[0].train_loss);

  const auto b = train(tiny_config(), tc, data.train, data.val);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(checkpoint_to_json(a.params).dump(), checkpoint_to_json(b.params).dump());

  // Returned parameters are the best-validation ones.
  const auto val = sample_instances(data.val, tc.sampler, tc.observed_frac, derive_seed(tc.seed, "val"));
  EXPECT_EQ(mean_nll(a.params, val), a.history.best_val_nll);
}

TEST(Train, PatienceZeroStopsOneEpochAfterTheBest) {
  const auto data = sine_splits(24, 12);
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.patience = 0;
  tc.batch_size = 4;
  const auto r = train(tiny_config(), tc, data.train, data.val);
  const auto& h = r.history;
  ASSERT_LT(h.epochs.size(), 60u);
  EXPECT_EQ(h.epochs.size(), h.best_epoch + 2);
  for (std::size_t e = 0; e < h.epochs.size(); ++e) EXPECT_LE(h.best_val_nll, h.epochs[e].val_nll);
  EXPECT_GE(h.epochs.back().val_nll, h.best_val_nll);
}

TEST(Train, DivergenceIsReported) {
  std::vector<AsTSRecord> records;
  for (int i = 0; i < 4; ++i) {
    AsTSRecord r{"r" + std::to_string(i), {}};
    for (int k = 0; k < 6; ++k) r.observations.push_back({k / 6.0, 1 + static_cast<std::size_t>(k % 2), 1e200});
    records.push_back(r);
  }
  TrainConfig tc;
  tc.max_epochs = 2;
  try {
    train(tiny_config(), tc, records, records);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptySplits) {
  const auto data = sine_splits(8, 8);
  EXPECT_THROW(train(tiny_config(), TrainConfig{}, {}, data.val), std::invalid_argument);
  EXPECT_THROW(train(tiny_config(), TrainConfig{}, data.train, {}), std::invalid_argument);
}

// ---- random search ---------------------------------------------------------------------------------

ModelSpace tiny_space() {
  ModelSpace m;
  m.base = tiny_config();
  m.depth = {1, 2};
  m.ff_hidden = {4, 8};
  m.attention_width = {4, 8};
  m.induced_points = {1, 2};
  return m;
}

TrainSpace tiny_train_space() {
  TrainSpace t;
  t.base.max_epochs = 2;
  t.base.batch_size = 8;
  return t;
}

TEST(RandomSearch, PicksTheArgminAndIsReproducible) {
  const auto data = sine_splits(20, 10);
  const auto r = random_search(tiny_space(), tiny_train_space(), 5, 9, data.train, data.val);
  ASSERT_EQ(r.trials.size(), 5u);
  for (const auto& t : r.trials) {
    EXPECT_LE(r.winner().val_nll, t.val_nll);
    EXPECT_EQ(t.config.input_width, t.config.decoder_width);
    EXPECT_TRUE(t.tconfig.lambda == 0 || t.tconfig.lambda == 1 || t.tconfig.lambda == 5 || t.tconfig.lambda == 10);
  }
  const auto again = random_search(tiny_space(), tiny_train_space(), 5, 9, data.train, data.val);
  EXPECT_EQ(again.best, r.best);
  EXPECT_EQ(again.winner().config, r.winner().config);
  EXPECT_EQ(again.winner().val_nll, r.winner().val_nll);
}

TEST(RandomSearch, SingleTrial) {
  const auto data = sine_splits(12, 8);
  const auto r = random_search(tiny_space(), tiny_train_space(), 1, 2, data.train, data.val);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best, 0u);
  EXPECT_THROW(random_search(tiny_space(), tiny_train_space(), 0, 2, data.train, data.val), std::invalid_argument);
}

}  // namespace
}  // namespace tripletformer
