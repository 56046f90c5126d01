// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tripletformer/tensor.hpp"

namespace tripletformer {

/// One observation. Channels are 1-based.
struct Triplet {
  double t = 0.0;
  std::size_t c = 1;
  double u = 0.0;

  bool operator==(const Triplet&) const = default;
};

/// An asynchronous time series: a set of observations with no duplicate
/// (time, channel) pair.
struct AsTSRecord {
  std::string id;
  std::vector<Triplet> observations;

  /// Distinct observation times, ascending.
  std::vector<double> times() const;
  /// Throws ValidationError on channel out of [1, channels] or duplicate (t, c).
  void validate(std::size_t channels) const;
};

struct AsTSDataset {
  std::vector<AsTSRecord> records;
  std::size_t channels = 0;
};

struct QueryPoint {
  double t = 0.0;
  std::size_t c = 1;

  bool operator==(const QueryPoint&) const = default;
};

/// Conditioning set, query points and the ground truth at those points.
struct InterpolationInstance {
  std::string record_id;
  std::vector<Triplet> context;
  std::vector<QueryPoint> queries;
  std::vector<double> targets;

  bool operator==(const InterpolationInstance&) const = default;
};

// ---- JSON Lines I/O ---------------------------------------------------------

/// One record per line: {"id": "...", "observations": [[t, c, u], ...]}.
/// Blank lines are skipped. The channel count is the largest channel index seen.
AsTSDataset load_jsonl(const std::filesystem::path& path);
AsTSDataset parse_jsonl(std::string_view text);
void save_jsonl(const std::filesystem::path& path, std::span<const AsTSRecord> records);

// ---- synthetic data -----------------------------------------------------------

struct SineParams {
  double amplitude = 1.0;
  double frequency = 1.0;
  double phase = 0.0;
};

/// A dense multivariate series on an even grid over [0, 1].
struct DenseSeries {
  std::vector<double> times;
  std::vector<std::vector<double>> values;   // [channel][step]
  std::vector<SineParams> components;        // one per channel
};

/// Channel j of series i is a_ij sin(2 pi f_ij t + phi_ij) + N(0, noise_sd^2)
/// with a ~ U[0.5, 1.5], f ~ U[0.5, 2], phi ~ U[0, 2 pi).
std::vector<DenseSeries> generate_sine_mts(std::size_t n_series, std::size_t length, std::size_t channels,
                                           double noise_sd, std::uint64_t seed);

/// Keeps one uniformly chosen channel per time step.
AsTSRecord make_synthetic_asts(const DenseSeries& mts, std::uint64_t seed, std::string id);

struct SineDatasetSpec {
  std::size_t n_series = 500;
  std::size_t length = 40;
  std::size_t channels = 2;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
};

/// generate_sine_mts followed by make_synthetic_asts; record i is "sine-<i>".
AsTSDataset generate_sine_dataset(const SineDatasetSpec& sine);

// ---- preprocessing ------------------------------------------------------------

struct ChannelStats {
  double upper_bound = 0.0;  // 99.9th percentile of train values
  double mean = 0.0;
  double sd = 1.0;
};

struct PreprocessStats {
  std::vector<ChannelStats> channels;  // index c - 1
  double time_min = 0.0;
  double time_max = 1.0;
  std::vector<std::string> warnings;
};

/// Linear-interpolated percentile (q in [0, 100]) of `values`.
double percentile(std::vector<double> values, double q);

/// Outlier bound, time range and per-channel standardization fitted on `train`.
PreprocessStats fit_preprocessing(std::span<const AsTSRecord> train, std::size_t channels);
/// Drops values above the channel bound, rescales time, standardizes values.
AsTSRecord apply_preprocessing(const AsTSRecord& record, const PreprocessStats& stats);

struct PreprocessResult {
  std::vector<AsTSRecord> records;
  PreprocessStats stats;
};

PreprocessResult preprocess(std::span<const AsTSRecord> train, std::span<const AsTSRecord> all,
                            std::size_t channels);

// ---- sampling -------------------------------------------------------------------

enum class SamplerKind { random, burst };

SamplerKind parse_sampler(std::string_view name);
std::string_view to_string(SamplerKind s);

/// ceil(observed_frac * n_times), with a tolerance so that e.g. 0.7 * 10 is 7.
std::size_t conditioning_count(double observed_frac, std::size_t n_times);

/// Conditions on a uniformly random subset of the record's times and queries
/// every observation at the remaining times.
InterpolationInstance sample_random_missing(const AsTSRecord& record, double observed_frac, std::uint64_t seed);
/// Queries every observation inside a contiguous window of sorted times.
InterpolationInstance sample_burst_missing(const AsTSRecord& record, double observed_frac, std::uint64_t seed);
InterpolationInstance sample_instance(const AsTSRecord& record, SamplerKind sampler, double observed_frac,
                                      std::uint64_t seed);

// ---- vectorization --------------------------------------------------------------

/// Rows [t, onehot(c; C), u].
Tensor encode_context(std::span<const Triplet> triplets, std::size_t channels);
/// Rows [t', onehot(c'; C)].
Tensor encode_queries(std::span<const QueryPoint> queries, std::size_t channels);
std::vector<Triplet> decode_context(const Tensor& encoded, std::size_t channels);
std::vector<QueryPoint> decode_queries(const Tensor& encoded, std::size_t channels);

/// Instances padded to common sizes. Padded rows are zero with a false mask.
struct Batch {
  std::size_t channels = 0;
  Tensor context;                  // [B x s_max x (C + 2)]
  std::vector<Mask> context_mask;  // B masks of length s_max
  Tensor queries;                  // [B x r_max x (C + 1)]
  std::vector<Mask> query_mask;    // B masks of length r_max
  Tensor targets;                  // [B x r_max]

  std::size_t size() const { return context_mask.size(); }
  /// Rank-2 slices of one batch entry, padding included.
  Tensor context_of(std::size_t b) const;
  Tensor queries_of(std::size_t b) const;
  Tensor targets_of(std::size_t b) const;  // [r_max x 1]
};

Batch batch_pad(std::span<const InterpolationInstance> instances, std::size_t channels);

}  // namespace tripletformer
