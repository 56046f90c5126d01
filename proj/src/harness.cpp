// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {

using nlohmann::json;

Predictor model_predictor(TripletformerParams params) {
  return [p = std::move(params)](std::span<const Triplet> context, std::span<const QueryPoint> queries) {
    return predict(p, context, queries);
  };
}

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "mean") return BaselineKind::mean;
  if (name == "forward") return BaselineKind::forward;
  throw std::invalid_argument("unknown baseline '" + std::string(name) + "' (expected mean|forward)");
}

std::string_view to_string(BaselineKind kind) { return kind == BaselineKind::mean ? "mean" : "forward"; }

SigmaScope parse_sigma_scope(std::string_view name) {
  if (name == "per_channel") return SigmaScope::per_channel;
  if (name == "global") return SigmaScope::global;
  throw std::invalid_argument("unknown sigma scope '" + std::string(name) + "' (expected per_channel|global)");
}

std::string_view to_string(SigmaScope scope) { return scope == SigmaScope::global ? "global" : "per_channel"; }

// ---- baselines ----------------------------------------------------------------

BaselineModel fit_mean_baseline(std::span<const AsTSRecord> train, std::size_t channels) {
  if (channels == 0) throw std::invalid_argument("fit_mean_baseline: channels must be >= 1");
  BaselineModel m;
  m.kind = BaselineKind::mean;
  m.channels = channels;
  m.sigma.assign(channels, 1.0);
  std::vector<double> sum(channels, 0.0);
  std::vector<std::size_t> count(channels, 0);
  for (const auto& r : train) {
    for (const auto& o : r.observations) {
      if (o.c < 1 || o.c > channels) throw ValidationError("fit_mean_baseline: channel " + std::to_string(o.c));
      sum[o.c - 1] += o.u;
      ++count[o.c - 1];
    }
  }
  m.channel_means.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) m.channel_means[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
  return m;
}

BaselineModel make_forward_baseline(std::size_t channels) {
  if (channels == 0) throw std::invalid_argument("make_forward_baseline: channels must be >= 1");
  BaselineModel m;
  m.kind = BaselineKind::forward;
  m.channels = channels;
  m.sigma.assign(channels, 1.0);
  return m;
}

std::vector<double> baseline_means(const BaselineModel& model, std::span<const Triplet> context,
                                   std::span<const QueryPoint> queries) {
  std::vector<double> mu;
  mu.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.c < 1 || q.c > model.channels) {
      throw ValidationError("baseline: query channel " + std::to_string(q.c) + " outside [1, " +
                            std::to_string(model.channels) + "]");
    }
    if (model.kind == BaselineKind::mean) {
      mu.push_back(model.channel_means.at(q.c - 1));
      continue;
    }
    const Triplet* best = nullptr;
    for (const auto& o : context) {
      if (o.c != q.c || o.t > q.t) continue;
      if (!best || o.t > best->t) best = &o;
    }
    mu.push_back(best ? best->u : 0.0);
  }
  return mu;
}

GaussianPrediction baseline_predict(const BaselineModel& model, std::span<const Triplet> context,
                                    std::span<const QueryPoint> queries) {
  std::vector<double> mu = baseline_means(model, context, queries);
  std::vector<double> sd;
  sd.reserve(queries.size());
  for (const auto& q : queries) sd.push_back(model.sigma.at(q.c - 1));
  return {Tensor::column(std::move(mu)), Tensor::column(std::move(sd))};
}

GaussianPrediction mean_baseline_predict(const BaselineModel& model, const InterpolationInstance& instance) {
  if (model.kind != BaselineKind::mean) throw std::invalid_argument("mean_baseline_predict: not a mean baseline");
  return baseline_predict(model, instance.context, instance.queries);
}

GaussianPrediction forward_baseline_predict(const BaselineModel& model, const InterpolationInstance& instance) {
  if (model.kind != BaselineKind::forward) {
    throw std::invalid_argument("forward_baseline_predict: not a forward baseline");
  }
  return baseline_predict(model, instance.context, instance.queries);
}

Predictor baseline_predictor(BaselineModel model) {
  return [m = std::move(model)](std::span<const Triplet> context, std::span<const QueryPoint> queries) {
    return baseline_predict(m, context, queries);
  };
}

std::vector<double> default_sigma_grid() {
  constexpr std::size_t n = 50;
  const double lo = std::log(0.05), hi = std::log(3.0);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (n - 1));
  grid.front() = 0.05;
  grid.back() = 3.0;
  return grid;
}

namespace {

struct Residual {
  std::size_t c;
  double u;
  double mu;
};

double argmin_sigma(std::span<const Residual> residuals, std::span<const double> grid) {
  double best_sigma = grid.front();
  double best = std::numeric_limits<double>::infinity();
  for (double s : grid) {
    double total = 0.0;
    for (const auto& r : residuals) total += gaussian_nll(r.u, r.mu, s);
    const double nll = total / static_cast<double>(residuals.size());
    if (nll < best) {
      best = nll;
      best_sigma = s;
    }
  }
  return best_sigma;
}

}  // namespace

std::vector<double> fit_homoscedastic_sigma(const MeanFunction& means, std::span<const InterpolationInstance> val,
                                            std::span<const double> grid, std::size_t channels, SigmaScope scope) {
  if (grid.empty()) throw std::invalid_argument("fit_homoscedastic_sigma: empty grid");
  for (double s : grid)
    if (!(s > 0.0)) throw std::invalid_argument("fit_homoscedastic_sigma: grid values must be positive");

  std::vector<Residual> all;
  for (const auto& inst : val) {
    const std::vector<double> mu = means(inst.context, inst.queries);
    if (mu.size() != inst.queries.size()) throw DimensionError("fit_homoscedastic_sigma: mean count mismatch");
    for (std::size_t i = 0; i < mu.size(); ++i) all.push_back({inst.queries[i].c, inst.targets[i], mu[i]});
  }
  if (all.empty()) throw std::invalid_argument("fit_homoscedastic_sigma: no validation targets");

  const double global = argmin_sigma(all, grid);
  std::vector<double> sigma(channels, global);
  if (scope == SigmaScope::global) return sigma;
  for (std::size_t c = 1; c <= channels; ++c) {
    std::vector<Residual> mine;
    for (const auto& r : all)
      if (r.c == c) mine.push_back(r);
    if (!mine.empty()) sigma[c - 1] = argmin_sigma(mine, grid);
  }
  return sigma;
}

void fit_baseline_sigma(BaselineModel& model, std::span<const InterpolationInstance> val,
                        std::span<const double> grid, SigmaScope scope) {
  const BaselineModel frozen = model;
  model.sigma = fit_homoscedastic_sigma(
      [&frozen](std::span<const Triplet> ctx, std::span<const QueryPoint> q) { return baseline_means(frozen, ctx, q); },
      val, grid, model.channels, scope);
}

// ---- evaluation -----------------------------------------------------------------

json to_json(const EvalReport& r) {
  return json{{"dataset", r.dataset},
              {"model", r.model},
              {"config_fingerprint", r.config_fingerprint},
              {"sampler", std::string(to_string(r.sampler))},
              {"observed_frac", r.observed_frac},
              {"seed", r.seed},
              {"nll_mean", r.nll_mean},
              {"mse_mean", r.mse_mean},
              {"n_targets", r.n_targets},
              {"wall_seconds", r.wall_seconds}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.dataset = j.value("dataset", "");
  r.model = j.value("model", "");
  r.config_fingerprint = j.value("config_fingerprint", "");
  r.sampler = parse_sampler(j.at("sampler").get<std::string>());
  r.observed_frac = j.at("observed_frac").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.nll_mean = j.at("nll_mean").get<double>();
  r.mse_mean = j.at("mse_mean").get<double>();
  r.n_targets = j.at("n_targets").get<std::size_t>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  return r;
}

std::string fingerprint(const json& j) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport evaluate(const Predictor& predictor, std::span<const AsTSRecord> test, SamplerKind sampler,
                    double observed_frac, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto instances = sample_instances(test, sampler, observed_frac, seed);
  double nll = 0.0, se = 0.0;
  std::size_t n = 0;
  for (const auto& inst : instances) {
    const GaussianPrediction pred = predictor(inst.context, inst.queries);
    if (pred.size() != inst.targets.size()) {
      throw DimensionError("evaluate: " + std::to_string(pred.size()) + " predictions for " +
                           std::to_string(inst.targets.size()) + " targets");
    }
    for (std::size_t i = 0; i < inst.targets.size(); ++i) {
      const double r = inst.targets[i] - pred.mean[i];
      nll += gaussian_nll(inst.targets[i], pred.mean[i], pred.stddev[i]);
      se += r * r;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("evaluate: no test targets");
  EvalReport report;
  report.sampler = sampler;
  report.observed_frac = observed_frac;
  report.seed = seed;
  report.nll_mean = nll / static_cast<double>(n);
  report.mse_mean = se / static_cast<double>(n);
  report.n_targets = n;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---- experiments --------------------------------------------------------------------

DataSplit split_records(std::span<const AsTSRecord> records, std::uint64_t seed, double test_frac, double val_frac) {
  if (!(test_frac >= 0.0 && test_frac < 1.0) || !(val_frac >= 0.0 && val_frac < 1.0)) {
    throw std::invalid_argument("split_records: fractions must lie in [0, 1)");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(records.size())));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(records.size() - n_test)));
  if (n_test + n_val >= records.size()) throw std::invalid_argument("split_records: training split would be empty");

  DataSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = records[order[i]];
    if (i < n_test) split.test.push_back(r);
    else if (i < n_test + n_val) split.val.push_back(r);
    else split.train.push_back(r);
  }
  return split;
}

PreparedData prepare_data(const AsTSDataset& dataset, std::uint64_t seed, double test_frac, double val_frac) {
  PreparedData out;
  out.channels = dataset.channels;
  DataSplit raw = split_records(dataset.records, seed, test_frac, val_frac);
  out.stats = fit_preprocessing(raw.train, dataset.channels);
  auto apply_all = [&](const std::vector<AsTSRecord>& in) {
    std::vector<AsTSRecord> res;
    res.reserve(in.size());
    for (const auto& r : in) res.push_back(apply_preprocessing(r, out.stats));
    return res;
  };
  out.split.train = apply_all(raw.train);
  out.split.val = apply_all(raw.val);
  out.split.test = apply_all(raw.test);
  return out;
}

namespace {

template <class F>
auto field(const char* name, F&& read) {
  try {
    return read();
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("manifest: field '") + name + "': " + e.what());
  }
}

}  // namespace

ExperimentManifest parse_manifest(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw std::invalid_argument("manifest: must be a JSON object");
  ExperimentManifest m;
  for (const auto& [key, value] : j.items()) {
    const char* k = key.c_str();
    if (key == "name") {
      m.name = field(k, [&] { return value.get<std::string>(); });
    } else if (key == "dataset") {
      field(k, [&] {
        if (!value.is_object()) throw std::invalid_argument("expected an object");
        if (value.contains("path")) {
          std::filesystem::path p = value.at("path").get<std::string>();
          m.dataset_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        } else {
          if (value.value("generator", "") != "sine") throw std::invalid_argument("expected 'path' or generator 'sine'");
          m.generator.n_series = value.value("n_series", m.generator.n_series);
          m.generator.length = value.value("length", m.generator.length);
          m.generator.channels = value.value("channels", m.generator.channels);
          m.generator.noise_sd = value.value("noise_sd", m.generator.noise_sd);
          m.generator.seed = value.value("seed", m.generator.seed);
        }
        return 0;
      });
    } else if (key == "model") {
      m.model = field(k, [&] {
        auto s = value.get<std::string>();
        if (s != "tripletformer" && s != "mean" && s != "forward") {
          throw std::invalid_argument("expected tripletformer|mean|forward, got '" + s + "'");
        }
        return s;
      });
    } else if (key == "samplers") {
      m.samplers = field(k, [&] {
        std::vector<SamplerKind> out;
        for (const auto& s : value) out.push_back(parse_sampler(s.get<std::string>()));
        if (out.empty()) throw std::invalid_argument("must not be empty");
        return out;
      });
    } else if (key == "observed_fracs") {
      m.observed_fracs = field(k, [&] {
        auto out = value.get<std::vector<double>>();
        if (out.empty()) throw std::invalid_argument("must not be empty");
        for (double f : out)
          if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("values must lie in (0, 1)");
        return out;
      });
    } else if (key == "repetitions") {
      m.repetitions = field(k, [&] {
        auto n = value.get<std::size_t>();
        if (n < 1) throw std::invalid_argument("must be >= 1");
        return n;
      });
    } else if (key == "seed") {
      m.seed = field(k, [&] { return value.get<std::uint64_t>(); });
    } else if (key == "test_frac") {
      m.test_frac = field(k, [&] { return value.get<double>(); });
    } else if (key == "val_frac") {
      m.val_frac = field(k, [&] { return value.get<double>(); });
    } else if (key == "model_config") {
      m.model_config = field(k, [&] { return config_from_json(value); });
    } else if (key == "train_config") {
      m.train_config = field(k, [&] { return train_config_from_json(value); });
    } else if (key == "sigma_scope") {
      m.sigma_scope = field(k, [&] { return parse_sigma_scope(value.get<std::string>()); });
    } else {
      throw std::invalid_argument("manifest: unknown field '" + key + "'");
    }
  }
  if (!j.contains("dataset")) throw std::invalid_argument("manifest: field 'dataset' is required");
  return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

AsTSDataset load_dataset(const ExperimentManifest& manifest) {
  if (!manifest.dataset_path.empty()) return load_jsonl(manifest.dataset_path);
  return generate_sine_dataset(manifest.generator);
}

EvalReport run_cell(const ExperimentManifest& manifest, const PreparedData& data, SamplerKind sampler,
                    double observed_frac, std::uint64_t seed) {
  Predictor predictor;
  std::string fp;
  if (manifest.model == "tripletformer") {
    TripletformerConfig config = manifest.model_config;
    config.channels = data.channels;
    TrainConfig tconfig = manifest.train_config;
    tconfig.sampler = sampler;
    tconfig.observed_frac = observed_frac;
    tconfig.seed = seed;
    TrainResult trained = train(config, tconfig, data.split.train, data.split.val);
    fp = fingerprint(json{{"model", to_json(config)}, {"train", to_json(tconfig)}});
    predictor = model_predictor(std::move(trained.params));
  } else {
    const BaselineKind kind = parse_baseline_kind(manifest.model);
    BaselineModel model = kind == BaselineKind::mean ? fit_mean_baseline(data.split.train, data.channels)
                                                     : make_forward_baseline(data.channels);
    const auto val = sample_instances(data.split.val, sampler, observed_frac, derive_seed(seed, "val"));
    fit_baseline_sigma(model, val, default_sigma_grid(), manifest.sigma_scope);
    fp = fingerprint(json{{"baseline", manifest.model}, {"sigma", model.sigma}});
    predictor = baseline_predictor(std::move(model));
  }
  EvalReport report = evaluate(predictor, data.split.test, sampler, observed_frac, seed);
  report.dataset = manifest.name;
  report.model = manifest.model;
  report.config_fingerprint = fp;
  return report;
}

std::vector<AggregateRow> aggregate(std::span<const EvalReport> reports) {
  std::vector<AggregateRow> rows;
  std::vector<std::vector<const EvalReport*>> groups;
  for (const auto& r : reports) {
    std::size_t g = 0;
    while (g < rows.size() && !(rows[g].sampler == r.sampler && rows[g].observed_frac == r.observed_frac)) ++g;
    if (g == rows.size()) {
      rows.push_back({r.sampler, r.observed_frac});
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
    double s = 0.0;
    for (double x : xs) s += x;
    mean = s / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  };
  for (std::size_t g = 0; g < rows.size(); ++g) {
    std::vector<double> nll, mse;
    for (const auto* r : groups[g]) {
      nll.push_back(r->nll_mean);
      mse.push_back(r->mse_mean);
    }
    rows[g].repetitions = nll.size();
    stats(nll, rows[g].nll_mean, rows[g].nll_sd);
    stats(mse, rows[g].mse_mean, rows[g].mse_sd);
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentManifest& manifest, const ReportCallback& on_report) {
  const AsTSDataset dataset = load_dataset(manifest);
  ExperimentResult result;
  for (std::size_t rep = 0; rep < manifest.repetitions; ++rep) {
    const std::uint64_t seed = derive_seed(manifest.seed, rep);
    const PreparedData data = prepare_data(dataset, seed, manifest.test_frac, manifest.val_frac);
    for (SamplerKind sampler : manifest.samplers) {
      for (double frac : manifest.observed_fracs) {
        result.reports.push_back(run_cell(manifest, data, sampler, frac, seed));
        if (on_report) on_report(result.reports.back());
      }
    }
  }
  result.aggregates = aggregate(result.reports);
  return result;
}

ExperimentResult run_experiment(const std::filesystem::path& manifest_path, const ReportCallback& on_report) {
  return run_experiment(load_manifest(manifest_path), on_report);
}

json to_json(const ExperimentResult& result) {
  json reports = json::array();
  for (const auto& r : result.reports) reports.push_back(to_json(r));
  json rows = json::array();
  for (const auto& a : result.aggregates) {
    rows.push_back(json{{"sampler", std::string(to_string(a.sampler))},
                        {"observed_frac", a.observed_frac},
                        {"repetitions", a.repetitions},
                        {"nll_mean", a.nll_mean},
                        {"nll_sd", a.nll_sd},
                        {"mse_mean", a.mse_mean},
                        {"mse_sd", a.mse_sd}});
  }
  return json{{"reports", reports}, {"aggregates", rows}};
}

}  // namespace tripletformer
