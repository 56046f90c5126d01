// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid train config: " + msg); };
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (!(observed_frac > 0.0 && observed_frac < 1.0)) fail("observed_frac must lie in (0, 1)");
}

json to_json(const TrainConfig& c) {
  return json{{"lambda", c.lambda},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"seed", c.seed},
              {"sampler", std::string(to_string(c.sampler))},
              {"observed_frac", c.observed_frac}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda") c.lambda = value.get<double>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
    else if (key == "patience") c.patience = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "sampler") c.sampler = parse_sampler(value.get<std::string>());
    else if (key == "observed_frac") c.observed_frac = value.get<double>();
    else throw std::invalid_argument("train config: unknown field '" + key + "'");
  }
  return c;
}

// ---- objective --------------------------------------------------------------

double gaussian_nll(double u, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_nll: sigma must be positive");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const double r = u - mu;
  return kHalfLog2Pi + std::log(sigma) + r * r / (2.0 * sigma * sigma);
}

Tensor gaussian_nll_terms(const Tensor& mean, const Tensor& stddev, const Tensor& targets) {
  if (mean.shape() != stddev.shape() || mean.size() != targets.size()) {
    throw DimensionError("gaussian_nll_terms: mean " + mean.shape_string() + ", stddev " + stddev.shape_string() +
                         ", targets " + targets.shape_string());
  }
  std::vector<double> out(mean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gaussian_nll(targets[i], mean[i], stddev[i]);
  auto mu = mean.storage(), sd = stddev.storage(), u = targets.storage();
  return make_result(Tensor(mean.shape(), std::move(out)), {mean, stddev, targets},
                     [mu, sd, u](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double s = (*sd)[i];
                         const double r = (*u)[i] - (*mu)[i];
                         const double inv_var = 1.0 / (s * s);
                         if (grads[0]) (*grads[0])[i] -= g[i] * r * inv_var;
                         if (grads[1]) (*grads[1])[i] += g[i] * (1.0 / s - r * r * inv_var / s);
                         if (grads[2]) (*grads[2])[i] += g[i] * r * inv_var;
                       }
                     });
}

Tensor interpolation_loss(const GaussianPrediction& prediction, const Tensor& targets, double lambda) {
  if (prediction.size() == 0) throw std::invalid_argument("interpolation_loss: no targets");
  if (targets.size() != prediction.size()) {
    throw DimensionError("interpolation_loss: " + std::to_string(prediction.size()) + " predictions for " +
                         std::to_string(targets.size()) + " targets");
  }
  const Tensor u = Tensor(prediction.mean.shape(), targets.values());
  Tensor nll = mean(gaussian_nll_terms(prediction.mean, prediction.stddev, u));
  if (lambda == 0.0) return nll;
  return add(nll, scale(mean(square(sub(u, prediction.mean))), lambda));
}

Tensor batch_loss(const TripletformerParams& params, const Batch& batch, double lambda) {
  if (batch.size() == 0) throw std::invalid_argument("batch_loss: empty batch");
  Tensor total;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Mask& cmask = batch.context_mask[b];
    const Mask& qmask = batch.query_mask[b];
    Tensor encoded = encoder_forward(batch.context_of(b), cmask, params);
    GaussianPrediction pred = decoder_forward(encoded, cmask, batch.queries_of(b), qmask, params);
    const Tensor padded = batch.targets_of(b);
    std::vector<double> targets;
    for (std::size_t i = 0; i < qmask.size(); ++i)
      if (qmask[i]) targets.push_back(padded[i]);
    Tensor loss = interpolation_loss(pred, Tensor::column(std::move(targets)), lambda);
    total = b == 0 ? loss : add(total, loss);
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// ---- optimizer --------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (grads.size() != params.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size()) {
      throw DimensionError("adam_step: gradient " + grads[i].shape_string() + " for parameter " +
                           params[i].shape_string());
    }
    std::vector<double> theta = params[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grads[i][j];
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
    }
    params[i] = Tensor(params[i].shape(), std::move(theta));
  }
}

// ---- training loop -------------------------------------------------------------

json to_json(const TrainHistory& history) {
  json epochs = json::array();
  for (const auto& e : history.epochs) {
    epochs.push_back(json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_nll", e.val_nll}});
  }
  return json{{"best_epoch", history.best_epoch}, {"best_val_nll", history.best_val_nll}, {"epochs", epochs}};
}

std::vector<InterpolationInstance> sample_instances(std::span<const AsTSRecord> records, SamplerKind sampler,
                                                    double observed_frac, std::uint64_t seed) {
  std::vector<InterpolationInstance> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.times().size() < 2) continue;
    if (conditioning_count(observed_frac, r.times().size()) >= r.times().size()) continue;
    out.push_back(sample_instance(r, sampler, observed_frac, derive_seed(seed, r.id)));
  }
  return out;
}

double mean_nll(const TripletformerParams& params, std::span<const InterpolationInstance> instances) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& inst : instances) {
    GaussianPrediction pred = predict_distribution(params, inst);
    for (std::size_t i = 0; i < inst.targets.size(); ++i) {
      total += gaussian_nll(inst.targets[i], pred.mean[i], pred.stddev[i]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_nll: no targets");
  return total / static_cast<double>(count);
}

TrainResult train(const TripletformerConfig& config, const TrainConfig& tconfig,
                  std::span<const AsTSRecord> train_set, std::span<const AsTSRecord> val_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  tconfig.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: empty train or validation split");

  TripletformerParams params = init_params(config, derive_seed(tconfig.seed, "init"));
  const auto val = sample_instances(val_set, tconfig.sampler, tconfig.observed_frac, derive_seed(tconfig.seed, "val"));
  if (val.empty()) throw std::invalid_argument("train: no validation record can be sampled");

  TrainResult result{params, {}};
  AdamState adam;
  std::vector<Tensor> flat = flatten_params(params);

  for (std::size_t epoch = 0; epoch < tconfig.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(derive_seed(tconfig.seed, "train"), epoch);
    auto instances = sample_instances(train_set, tconfig.sampler, tconfig.observed_frac, epoch_seed);
    if (instances.empty()) throw std::invalid_argument("train: no training record can be sampled");
    Rng order(derive_seed(epoch_seed, "order"));
    order.shuffle(instances);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < instances.size(); start += tconfig.batch_size) {
      const std::size_t stop = std::min(instances.size(), start + tconfig.batch_size);
      const Batch batch = batch_pad(std::span(instances).subspan(start, stop - start), config.channels);

      Tape tape;
      TripletformerParams watched = watch_params(tape, params);
      Tensor loss = batch_loss(watched, batch, tconfig.lambda);
      if (!std::isfinite(loss.item())) {
        std::ostringstream os;
        os << "training diverged: non-finite loss at epoch " << epoch << ", batch starting at instance " << start;
        throw NumericError(os.str());
      }
      Gradients grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(flat.size());
      for_each_param(watched, [&](const std::string&, const Tensor& t) { g.push_back(grads.of(t)); });
      adam_step(flat, g, adam, tconfig.learning_rate);
      assign_params(params, flat);
      loss_sum += loss.item() * static_cast<double>(stop - start);
    }

    EpochRecord record{epoch, loss_sum / static_cast<double>(instances.size()), mean_nll(params, val)};
    if (!std::isfinite(record.val_nll)) {
      throw NumericError("training diverged: non-finite validation NLL at epoch " + std::to_string(epoch));
    }
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.val_nll < result.history.best_val_nll) {
      result.history.best_val_nll = record.val_nll;
      result.history.best_epoch = epoch;
      result.params = params;
    }
    if (epoch - result.history.best_epoch > tconfig.patience) break;
  }
  return result;
}

// ---- hyperparameter search --------------------------------------------------------

namespace {

template <class T>
const T& pick(const std::vector<T>& grid, Rng& rng, const char* name) {
  if (grid.empty()) throw std::invalid_argument(std::string("random_search: empty grid for ") + name);
  return grid[rng.uniform_index(grid.size())];
}

}  // namespace

SearchResult random_search(const ModelSpace& model_space, const TrainSpace& train_space, std::size_t k,
                           std::uint64_t seed, std::span<const AsTSRecord> train_set,
                           std::span<const AsTSRecord> val_set) {
  if (k < 1) throw std::invalid_argument("random_search: k must be >= 1");
  Rng rng(seed);
  SearchResult result;
  for (std::size_t trial = 0; trial < k; ++trial) {
    SearchTrial t;
    t.config = model_space.base;
    t.config.depth = pick(model_space.depth, rng, "depth");
    t.config.ff_hidden = pick(model_space.ff_hidden, rng, "ff_hidden");
    const std::size_t width = pick(model_space.attention_width, rng, "attention_width");
    t.config.input_width = t.config.encoder_width = t.config.target_width = t.config.decoder_width = width;
    t.config.induced_points = pick(model_space.induced_points, rng, "induced_points");
    t.tconfig = train_space.base;
    t.tconfig.lambda = pick(train_space.lambda, rng, "lambda");
    t.tconfig.seed = derive_seed(seed, trial);

    t.val_nll = train(t.config, t.tconfig, train_set, val_set).history.best_val_nll;
    result.trials.push_back(t);
    if (t.val_nll < result.trials[result.best].val_nll) result.best = trial;
  }
  return result;
}

}  // namespace tripletformer
