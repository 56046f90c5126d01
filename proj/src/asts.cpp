// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/asts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {

using nlohmann::json;

std::vector<double> AsTSRecord::times() const {
  std::vector<double> ts;
  ts.reserve(observations.size());
  for (const auto& x : observations) ts.push_back(x.t);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

void AsTSRecord::validate(std::size_t channels) const {
  std::set<std::pair<double, std::size_t>> seen;
  for (const auto& x : observations) {
    if (x.c < 1 || x.c > channels) {
      throw ValidationError("record '" + id + "': channel " + std::to_string(x.c) + " outside [1, " +
                            std::to_string(channels) + "]");
    }
    if (!std::isfinite(x.t) || !std::isfinite(x.u)) {
      throw ValidationError("record '" + id + "': non-finite time or value");
    }
    if (!seen.emplace(x.t, x.c).second) {
      std::ostringstream os;
      os << "record '" << id << "': duplicate observation at t=" << x.t << " channel " << x.c;
      throw ValidationError(os.str());
    }
  }
}

// ---- JSON Lines -------------------------------------------------------------

namespace {

AsTSRecord parse_record(const json& j) {
  if (!j.is_object()) throw ParseError("expected a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) throw ParseError("missing string field 'id'");
  if (!j.contains("observations") || !j["observations"].is_array()) {
    throw ParseError("missing array field 'observations'");
  }
  AsTSRecord record;
  record.id = j["id"].get<std::string>();
  for (const auto& obs : j["observations"]) {
    if (!obs.is_array() || obs.size() != 3 || !obs[0].is_number() || !obs[2].is_number()) {
      throw ParseError("observation must be [t, c, u] with numeric t and u");
    }
    const auto& c = obs[1];
    if (c.is_number_unsigned()) {
      record.observations.push_back({obs[0].get<double>(), c.get<std::size_t>(), obs[2].get<double>()});
    } else if (c.is_number_integer()) {
      throw ValidationError("record '" + record.id + "': channel " + std::to_string(c.get<long long>()) +
                            " is not a positive 1-based index");
    } else {
      throw ParseError("channel must be an integer");
    }
  }
  return record;
}

}  // namespace

AsTSDataset parse_jsonl(std::string_view text) {
  AsTSDataset dataset;
  std::vector<std::size_t> line_of;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    try {
      AsTSRecord record = parse_record(json::parse(line));
      for (const auto& x : record.observations) {
        if (x.c == 0) throw ValidationError("record '" + record.id + "': channel 0 (channels are 1-based)");
        dataset.channels = std::max(dataset.channels, x.c);
      }
      dataset.records.push_back(std::move(record));
      line_of.push_back(line_no);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    try {
      dataset.records[i].validate(dataset.channels);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_of[i]) + ": " + e.what());
    }
  }
  return dataset;
}

AsTSDataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_jsonl(buffer.str());
}

void save_jsonl(const std::filesystem::path& path, std::span<const AsTSRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    json obs = json::array();
    for (const auto& x : r.observations) obs.push_back({x.t, x.c, x.u});
    out << json{{"id", r.id}, {"observations", obs}}.dump() << '\n';
  }
}

// ---- synthetic data -----------------------------------------------------------

std::vector<DenseSeries> generate_sine_mts(std::size_t n_series, std::size_t length, std::size_t channels,
                                           double noise_sd, std::uint64_t seed) {
  if (n_series == 0 || length == 0 || channels == 0) {
    throw std::invalid_argument("generate_sine_mts: sizes must be positive");
  }
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("generate_sine_mts: noise_sd must be >= 0");
  Rng rng(seed);
  std::vector<DenseSeries> out(n_series);
  for (auto& series : out) {
    series.times.resize(length);
    for (std::size_t k = 0; k < length; ++k) {
      series.times[k] = length == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(length - 1);
    }
    series.components.resize(channels);
    for (auto& comp : series.components) {
      comp.amplitude = rng.uniform(0.5, 1.5);
      comp.frequency = rng.uniform(0.5, 2.0);
      comp.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    series.values.assign(channels, std::vector<double>(length));
    for (std::size_t j = 0; j < channels; ++j) {
      const auto& comp = series.components[j];
      for (std::size_t k = 0; k < length; ++k) {
        const double clean =
            comp.amplitude * std::sin(2.0 * std::numbers::pi * comp.frequency * series.times[k] + comp.phase);
        series.values[j][k] = clean + noise_sd * rng.normal();
      }
    }
  }
  return out;
}

AsTSRecord make_synthetic_asts(const DenseSeries& mts, std::uint64_t seed, std::string id) {
  const std::size_t channels = mts.values.size();
  if (channels == 0 || mts.times.empty()) throw std::invalid_argument("make_synthetic_asts: empty series");
  Rng rng(seed);
  AsTSRecord record;
  record.id = std::move(id);
  record.observations.reserve(mts.times.size());
  for (std::size_t k = 0; k < mts.times.size(); ++k) {
    const std::size_t c = rng.uniform_index(channels);
    record.observations.push_back({mts.times[k], c + 1, mts.values[c][k]});
  }
  return record;
}

AsTSDataset generate_sine_dataset(const SineDatasetSpec& sine) {
  const auto dense = generate_sine_mts(sine.n_series, sine.length, sine.channels, sine.noise_sd,
                                       derive_seed(sine.seed, "dense"));
  AsTSDataset ds;
  ds.channels = sine.channels;
  ds.records.reserve(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    ds.records.push_back(make_synthetic_asts(dense[i], derive_seed(derive_seed(sine.seed, "select"), i),
                                             "sine-" + std::to_string(i)));
  }
  return ds;
}

// ---- preprocessing ------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

PreprocessStats fit_preprocessing(std::span<const AsTSRecord> train, std::size_t channels) {
  std::vector<std::vector<double>> values(channels);
  for (const auto& r : train) {
    for (const auto& x : r.observations) {
      if (x.c < 1 || x.c > channels) throw ValidationError("record '" + r.id + "': channel out of range");
      values[x.c - 1].push_back(x.u);
    }
  }
  PreprocessStats stats;
  stats.channels.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (values[c].empty()) {
      throw ValidationError("channel " + std::to_string(c + 1) + " has no training observations");
    }
    stats.channels[c].upper_bound = percentile(values[c], 99.9);
  }

  double t_lo = std::numeric_limits<double>::infinity();
  double t_hi = -std::numeric_limits<double>::infinity();
  std::vector<double> total(channels, 0.0), total_sq(channels, 0.0);
  std::vector<std::size_t> count(channels, 0);
  for (const auto& r : train) {
    for (const auto& x : r.observations) {
      if (x.u > stats.channels[x.c - 1].upper_bound) continue;
      t_lo = std::min(t_lo, x.t);
      t_hi = std::max(t_hi, x.t);
      total[x.c - 1] += x.u;
      ++count[x.c - 1];
    }
  }
  for (std::size_t c = 0; c < channels; ++c) total[c] /= static_cast<double>(count[c]);
  for (const auto& r : train) {
    for (const auto& x : r.observations) {
      if (x.u > stats.channels[x.c - 1].upper_bound) continue;
      const double d = x.u - total[x.c - 1];
      total_sq[x.c - 1] += d * d;
    }
  }
  stats.time_min = t_lo;
  stats.time_max = t_hi;
  for (std::size_t c = 0; c < channels; ++c) {
    auto& ch = stats.channels[c];
    ch.mean = total[c];
    ch.sd = std::sqrt(total_sq[c] / static_cast<double>(count[c]));
    if (!(ch.sd > 0.0)) {
      ch.sd = 1.0;
      stats.warnings.push_back("channel " + std::to_string(c + 1) + " has zero variance; using sd = 1");
    }
  }
  if (!(t_hi > t_lo)) stats.warnings.push_back("training times span a single instant; times map to 0");
  for (const auto& w : stats.warnings) std::cerr << "warning: " << w << '\n';
  return stats;
}

AsTSRecord apply_preprocessing(const AsTSRecord& record, const PreprocessStats& stats) {
  const double span = stats.time_max > stats.time_min ? stats.time_max - stats.time_min : 1.0;
  AsTSRecord out;
  out.id = record.id;
  out.observations.reserve(record.observations.size());
  for (const auto& x : record.observations) {
    if (x.c < 1 || x.c > stats.channels.size()) {
      throw ValidationError("record '" + record.id + "': channel out of range");
    }
    const auto& ch = stats.channels[x.c - 1];
    if (x.u > ch.upper_bound) continue;
    out.observations.push_back({(x.t - stats.time_min) / span, x.c, (x.u - ch.mean) / ch.sd});
  }
  return out;
}

PreprocessResult preprocess(std::span<const AsTSRecord> train, std::span<const AsTSRecord> all,
                            std::size_t channels) {
  PreprocessResult result;
  result.stats = fit_preprocessing(train, channels);
  result.records.reserve(all.size());
  for (const auto& r : all) result.records.push_back(apply_preprocessing(r, result.stats));
  return result;
}

// ---- sampling -------------------------------------------------------------------

SamplerKind parse_sampler(std::string_view name) {
  if (name == "random") return SamplerKind::random;
  if (name == "burst") return SamplerKind::burst;
  throw std::invalid_argument("unknown sampler '" + std::string(name) + "' (expected random|burst)");
}

std::string_view to_string(SamplerKind s) { return s == SamplerKind::random ? "random" : "burst"; }

std::size_t conditioning_count(double observed_frac, std::size_t n_times) {
  const double raw = std::ceil(observed_frac * static_cast<double>(n_times) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

namespace {

void check_sampling_args(const AsTSRecord& record, double observed_frac, std::size_t n_times) {
  if (!(observed_frac > 0.0 && observed_frac < 1.0)) {
    throw std::invalid_argument("observed_frac must lie in (0, 1)");
  }
  if (n_times < 2) {
    throw std::invalid_argument("record '" + record.id + "' has fewer than two distinct times");
  }
}

/// Splits observations by whether their time index is flagged as a target.
InterpolationInstance split_by_time(const AsTSRecord& record, const std::vector<double>& times,
                                    const std::vector<bool>& is_target) {
  InterpolationInstance inst;
  inst.record_id = record.id;
  for (const auto& x : record.observations) {
    const auto idx = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), x.t) - times.begin());
    if (is_target[idx]) {
      inst.queries.push_back({x.t, x.c});
      inst.targets.push_back(x.u);
    } else {
      inst.context.push_back(x);
    }
  }
  return inst;
}

}  // namespace

InterpolationInstance sample_random_missing(const AsTSRecord& record, double observed_frac, std::uint64_t seed) {
  const auto times = record.times();
  const std::size_t n = times.size();
  check_sampling_args(record, observed_frac, n);
  const std::size_t n_obs = conditioning_count(observed_frac, n);
  if (n_obs >= n) throw std::invalid_argument("random sampler: no target times remain for '" + record.id + "'");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < n_obs; ++i) std::swap(order[i], order[i + rng.uniform_index(n - i)]);

  std::vector<bool> is_target(n, true);
  for (std::size_t i = 0; i < n_obs; ++i) is_target[order[i]] = false;
  return split_by_time(record, times, is_target);
}

InterpolationInstance sample_burst_missing(const AsTSRecord& record, double observed_frac, std::uint64_t seed) {
  const auto times = record.times();
  const std::size_t n = times.size();
  check_sampling_args(record, observed_frac, n);
  const std::size_t n_obs = conditioning_count(observed_frac, n);
  if (n_obs >= n) throw std::invalid_argument("burst sampler: window length is zero for '" + record.id + "'");
  const std::size_t p = n - n_obs;

  Rng rng(seed);
  const std::size_t start = rng.uniform_index(n - p + 1);
  std::vector<bool> is_target(n, false);
  for (std::size_t i = start; i < start + p; ++i) is_target[i] = true;
  return split_by_time(record, times, is_target);
}

InterpolationInstance sample_instance(const AsTSRecord& record, SamplerKind sampler, double observed_frac,
                                      std::uint64_t seed) {
  return sampler == SamplerKind::random ? sample_random_missing(record, observed_frac, seed)
                                        : sample_burst_missing(record, observed_frac, seed);
}

// ---- vectorization --------------------------------------------------------------

namespace {

void check_channel(std::size_t c, std::size_t channels) {
  if (c < 1 || c > channels) {
    throw ValidationError("channel " + std::to_string(c) + " outside [1, " + std::to_string(channels) + "]");
  }
}

std::size_t decode_channel(std::span<const double> onehot) {
  std::size_t found = 0;
  for (std::size_t j = 0; j < onehot.size(); ++j) {
    if (onehot[j] == 1.0) {
      if (found) throw ValidationError("one-hot block has more than one active channel");
      found = j + 1;
    } else if (onehot[j] != 0.0) {
      throw ValidationError("one-hot block holds a value other than 0/1");
    }
  }
  if (!found) throw ValidationError("one-hot block has no active channel");
  return found;
}

}  // namespace

Tensor encode_context(std::span<const Triplet> triplets, std::size_t channels) {
  const std::size_t width = channels + 2;
  std::vector<double> data(triplets.size() * width, 0.0);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& x = triplets[i];
    check_channel(x.c, channels);
    double* row = data.data() + i * width;
    row[0] = x.t;
    row[x.c] = 1.0;
    row[channels + 1] = x.u;
  }
  return Tensor({triplets.size(), width}, std::move(data));
}

Tensor encode_queries(std::span<const QueryPoint> queries, std::size_t channels) {
  const std::size_t width = channels + 1;
  std::vector<double> data(queries.size() * width, 0.0);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    check_channel(queries[i].c, channels);
    data[i * width] = queries[i].t;
    data[i * width + queries[i].c] = 1.0;
  }
  return Tensor({queries.size(), width}, std::move(data));
}

std::vector<Triplet> decode_context(const Tensor& encoded, std::size_t channels) {
  if (encoded.rank() != 2 || encoded.cols() != channels + 2) {
    throw DimensionError("decode_context: expected width " + std::to_string(channels + 2) + ", got " +
                         encoded.shape_string());
  }
  std::vector<Triplet> out;
  for (std::size_t i = 0; i < encoded.rows(); ++i) {
    auto row = encoded.data().subspan(i * (channels + 2), channels + 2);
    out.push_back({row[0], decode_channel(row.subspan(1, channels)), row[channels + 1]});
  }
  return out;
}

std::vector<QueryPoint> decode_queries(const Tensor& encoded, std::size_t channels) {
  if (encoded.rank() != 2 || encoded.cols() != channels + 1) {
    throw DimensionError("decode_queries: expected width " + std::to_string(channels + 1) + ", got " +
                         encoded.shape_string());
  }
  std::vector<QueryPoint> out;
  for (std::size_t i = 0; i < encoded.rows(); ++i) {
    auto row = encoded.data().subspan(i * (channels + 1), channels + 1);
    out.push_back({row[0], decode_channel(row.subspan(1, channels))});
  }
  return out;
}

Tensor Batch::context_of(std::size_t b) const {
  const std::size_t s = context.shape()[1], w = context.shape()[2];
  auto first = context.data().begin() + static_cast<std::ptrdiff_t>(b * s * w);
  return Tensor({s, w}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s * w)));
}

Tensor Batch::queries_of(std::size_t b) const {
  const std::size_t r = queries.shape()[1], w = queries.shape()[2];
  auto first = queries.data().begin() + static_cast<std::ptrdiff_t>(b * r * w);
  return Tensor({r, w}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(r * w)));
}

Tensor Batch::targets_of(std::size_t b) const {
  const std::size_t r = targets.shape()[1];
  auto first = targets.data().begin() + static_cast<std::ptrdiff_t>(b * r);
  return Tensor({r, 1}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(r)));
}

Batch batch_pad(std::span<const InterpolationInstance> instances, std::size_t channels) {
  if (instances.empty()) throw std::invalid_argument("batch_pad: no instances");
  std::size_t s_max = 0, r_max = 0;
  for (const auto& inst : instances) {
    if (inst.queries.size() != inst.targets.size()) {
      throw ValidationError("instance '" + inst.record_id + "': queries and targets differ in length");
    }
    s_max = std::max(s_max, inst.context.size());
    r_max = std::max(r_max, inst.queries.size());
  }
  const std::size_t B = instances.size();
  const std::size_t cw = channels + 2, qw = channels + 1;
  std::vector<double> ctx(B * s_max * cw, 0.0), qry(B * r_max * qw, 0.0), tgt(B * r_max, 0.0);

  Batch batch;
  batch.channels = channels;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& inst = instances[b];
    const Tensor ec = encode_context(inst.context, channels);
    const Tensor eq = encode_queries(inst.queries, channels);
    std::copy(ec.data().begin(), ec.data().end(), ctx.begin() + static_cast<std::ptrdiff_t>(b * s_max * cw));
    std::copy(eq.data().begin(), eq.data().end(), qry.begin() + static_cast<std::ptrdiff_t>(b * r_max * qw));
    std::copy(inst.targets.begin(), inst.targets.end(), tgt.begin() + static_cast<std::ptrdiff_t>(b * r_max));
    Mask cm(s_max, false), qm(r_max, false);
    std::fill_n(cm.begin(), inst.context.size(), true);
    std::fill_n(qm.begin(), inst.queries.size(), true);
    batch.context_mask.push_back(std::move(cm));
    batch.query_mask.push_back(std::move(qm));
  }
  batch.context = Tensor({B, s_max, cw}, std::move(ctx));
  batch.queries = Tensor({B, r_max, qw}, std::move(qry));
  batch.targets = Tensor({B, r_max}, std::move(tgt));
  return batch;
}

}  // namespace tripletformer
