// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tripletformer/asts.hpp"
#include "tripletformer/model.hpp"
#include "tripletformer/training.hpp"

namespace tripletformer {

/// Anything that maps (context, queries) to a Gaussian per query. Target
/// values are never part of the input.
using Predictor =
    std::function<GaussianPrediction(std::span<const Triplet> context, std::span<const QueryPoint> queries)>;

Predictor model_predictor(TripletformerParams params);

// ---- baselines ----------------------------------------------------------------

enum class BaselineKind { mean, forward };

BaselineKind parse_baseline_kind(std::string_view name);
std::string_view to_string(BaselineKind kind);

enum class SigmaScope { per_channel, global };

SigmaScope parse_sigma_scope(std::string_view name);
std::string_view to_string(SigmaScope scope);

struct BaselineModel {
  BaselineKind kind = BaselineKind::mean;
  std::size_t channels = 0;
  std::vector<double> channel_means;  // mean baseline only; index c - 1
  std::vector<double> sigma;          // index c - 1
};

/// Per-channel means of the training values; sigma starts at 1.
BaselineModel fit_mean_baseline(std::span<const AsTSRecord> train, std::size_t channels);
BaselineModel make_forward_baseline(std::size_t channels);

/// Point predictions only. Throws ValidationError for a channel outside [1, C].
std::vector<double> baseline_means(const BaselineModel& model, std::span<const Triplet> context,
                                   std::span<const QueryPoint> queries);

GaussianPrediction mean_baseline_predict(const BaselineModel& model, const InterpolationInstance& instance);
/// The latest context value in the query's channel at a time <= t' (the
/// earliest-inserted one among equal times), or 0 if there is none.
GaussianPrediction forward_baseline_predict(const BaselineModel& model, const InterpolationInstance& instance);
GaussianPrediction baseline_predict(const BaselineModel& model, std::span<const Triplet> context,
                                    std::span<const QueryPoint> queries);

Predictor baseline_predictor(BaselineModel model);

/// 50 log-spaced values from 0.05 to 3.0.
std::vector<double> default_sigma_grid();

using MeanFunction =
    std::function<std::vector<double>(std::span<const Triplet> context, std::span<const QueryPoint> queries)>;

/// For each channel, the first grid value minimizing the mean validation NLL
/// given fixed means. Channels without validation targets get the argmin over
/// all targets. With SigmaScope::global every channel gets that value.
std::vector<double> fit_homoscedastic_sigma(const MeanFunction& means, std::span<const InterpolationInstance> val,
                                            std::span<const double> grid, std::size_t channels,
                                            SigmaScope scope = SigmaScope::per_channel);

void fit_baseline_sigma(BaselineModel& model, std::span<const InterpolationInstance> val,
                        std::span<const double> grid, SigmaScope scope = SigmaScope::per_channel);

// ---- evaluation -----------------------------------------------------------------

struct EvalReport {
  std::string dataset;
  std::string model;
  std::string config_fingerprint;
  SamplerKind sampler = SamplerKind::random;
  double observed_frac = 0.0;
  std::uint64_t seed = 0;
  double nll_mean = 0.0;
  double mse_mean = 0.0;
  std::size_t n_targets = 0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// 16 hex digits of FNV-1a over the compact JSON dump.
std::string fingerprint(const nlohmann::json& j);

/// One instance per test record (seeded per record id), scored over every target.
/// Only `sampler`, `observed_frac`, `seed` and the metrics are filled in.
EvalReport evaluate(const Predictor& predictor, std::span<const AsTSRecord> test, SamplerKind sampler,
                    double observed_frac, std::uint64_t seed);

// ---- experiments --------------------------------------------------------------------

struct DataSplit {
  std::vector<AsTSRecord> train;
  std::vector<AsTSRecord> val;
  std::vector<AsTSRecord> test;
};

/// Seeded shuffle of record order; `test_frac` of all records go to test and
/// `val_frac` of the remainder to validation.
DataSplit split_records(std::span<const AsTSRecord> records, std::uint64_t seed, double test_frac = 0.2,
                        double val_frac = 0.2);

struct PreparedData {
  DataSplit split;
  PreprocessStats stats;
  std::size_t channels = 0;
};

/// Splits, then fits preprocessing on train and applies it to every split.
PreparedData prepare_data(const AsTSDataset& dataset, std::uint64_t seed, double test_frac = 0.2,
                          double val_frac = 0.2);

struct ExperimentManifest {
  std::string name;
  std::filesystem::path dataset_path;  // empty when generated
  SineDatasetSpec generator;
  std::string model = "tripletformer";  // tripletformer | mean | forward
  std::vector<SamplerKind> samplers{SamplerKind::random, SamplerKind::burst};
  std::vector<double> observed_fracs{0.1, 0.5, 0.9};
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
  double test_frac = 0.2;
  double val_frac = 0.2;
  TripletformerConfig model_config;
  TrainConfig train_config;
  SigmaScope sigma_scope = SigmaScope::per_channel;
};

/// Relative dataset paths resolve against `base_dir`. Throws
/// std::invalid_argument naming the offending field.
ExperimentManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentManifest load_manifest(const std::filesystem::path& path);

AsTSDataset load_dataset(const ExperimentManifest& manifest);

/// Fits the manifest's model on `data` and evaluates it on the test split.
EvalReport run_cell(const ExperimentManifest& manifest, const PreparedData& data, SamplerKind sampler,
                    double observed_frac, std::uint64_t seed);

struct AggregateRow {
  SamplerKind sampler = SamplerKind::random;
  double observed_frac = 0.0;
  std::size_t repetitions = 0;
  double nll_mean = 0.0;
  double nll_sd = 0.0;  // sample sd, 0 for one repetition
  double mse_mean = 0.0;
  double mse_sd = 0.0;
};

struct ExperimentResult {
  std::vector<EvalReport> reports;
  std::vector<AggregateRow> aggregates;
};

/// Groups reports by (sampler, observed_frac) in first-seen order.
std::vector<AggregateRow> aggregate(std::span<const EvalReport> reports);

using ReportCallback = std::function<void(const EvalReport&)>;

ExperimentResult run_experiment(const ExperimentManifest& manifest, const ReportCallback& on_report = {});
ExperimentResult run_experiment(const std::filesystem::path& manifest_path, const ReportCallback& on_report = {});

nlohmann::json to_json(const ExperimentResult& result);

}  // namespace tripletformer
