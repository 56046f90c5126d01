// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "json.hpp"
#include "tripletformer/asts.hpp"
#include "tripletformer/model.hpp"
#include "tripletformer/tensor.hpp"

namespace tripletformer {

struct TrainConfig {
  double lambda = 0.0;  // weight of the MSE term
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::random;
  double observed_frac = 0.5;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// -log N(u; mu, sigma^2) = 0.5 ln(2 pi) + ln sigma + (u - mu)^2 / (2 sigma^2).
double gaussian_nll(double u, double mu, double sigma);

/// Elementwise gaussian_nll over column vectors, differentiable in mean and stddev.
Tensor gaussian_nll_terms(const Tensor& mean, const Tensor& stddev, const Tensor& targets);

/// mean(NLL) + lambda * mean((u - mu)^2) over one instance's targets [r x 1].
Tensor interpolation_loss(const GaussianPrediction& prediction, const Tensor& targets, double lambda);

/// Mean of interpolation_loss over the batch entries; padding is excluded.
Tensor batch_loss(const TripletformerParams& params, const Batch& batch, double lambda);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One Adam update (beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias corrected).
void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_nll = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();

  bool operator==(const TrainHistory&) const = default;
};

nlohmann::json to_json(const TrainHistory& history);

struct TrainResult {
  TripletformerParams params;  // best-validation parameters
  TrainHistory history;
};

/// Samples one instance per record with seed derive_seed(seed, record.id).
/// Records that cannot be sampled (fewer than two times) are skipped.
std::vector<InterpolationInstance> sample_instances(std::span<const AsTSRecord> records, SamplerKind sampler,
                                                    double observed_frac, std::uint64_t seed);

/// NLL averaged over every target of every instance.
double mean_nll(const TripletformerParams& params, std::span<const InterpolationInstance> instances);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on the interpolation loss. Training instances are re-drawn
/// from the records every epoch; validation instances are drawn once. Keeps
/// the parameters with the lowest validation NLL and stops once `patience`
/// epochs pass without improvement.
TrainResult train(const TripletformerConfig& config, const TrainConfig& tconfig,
                  std::span<const AsTSRecord> train_set, std::span<const AsTSRecord> val_set,
                  const EpochCallback& on_epoch = {});

struct ModelSpace {
  TripletformerConfig base;
  std::vector<std::size_t> depth{1, 2, 3, 4};
  std::vector<std::size_t> ff_hidden{64, 128, 256};
  std::vector<std::size_t> attention_width{64, 128, 256};
  std::vector<std::size_t> induced_points{16, 32, 64, 128};
};

struct TrainSpace {
  TrainConfig base;
  std::vector<double> lambda{0.0, 1.0, 5.0, 10.0};
};

struct SearchTrial {
  TripletformerConfig config;
  TrainConfig tconfig;
  double val_nll = 0.0;
};

struct SearchResult {
  std::vector<SearchTrial> trials;
  std::size_t best = 0;

  const SearchTrial& winner() const { return trials.at(best); }
};

/// Draws `k` configurations from the grids, trains each and keeps the one
/// with the lowest validation NLL (first one on ties).
SearchResult random_search(const ModelSpace& model_space, const TrainSpace& train_space, std::size_t k,
                           std::uint64_t seed, std::span<const AsTSRecord> train_set,
                           std::span<const AsTSRecord> val_set);

}  // namespace tripletformer
