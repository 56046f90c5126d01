// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tripletformer/asts.hpp"
#include "tripletformer/attention.hpp"
#include "tripletformer/harness.hpp"
#include "tripletformer/model.hpp"
#include "tripletformer/rng.hpp"
#include "tripletformer/tensor.hpp"
#include "tripletformer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tripletformer;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Writes to `path`, or stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) std::cout << text;
  else write_text(path, text);
}

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string sampler = "random";
  double observed_frac = 0.5;
  std::optional<double> lambda;
  std::string config;
  std::string out;
};

void add_seed(CLI::App* app, CommonOptions& o) { app->add_option("--seed", o.seed, "Random seed"); }

void add_sampling(CLI::App* app, CommonOptions& o) {
  app->add_option("--sampler", o.sampler, "Missingness sampler")->check(CLI::IsMember({"random", "burst"}));
  app->add_option("--observed-frac", o.observed_frac, "Fraction of observation times used as context")
      ->check(CLI::Range(0.0, 1.0));
}

void add_lambda(CLI::App* app, CommonOptions& o) {
  app->add_option("--lambda", o.lambda, "Weight of the MSE term in the training loss")->check(CLI::NonNegativeNumber);
}

// Config files hold {"model": {...}, "train": {...}}; both parts are optional.
struct RunConfig {
  TripletformerConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const CommonOptions& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    const json j = read_json(o.config);
    for (const auto& [key, value] : j.items()) {
      if (key != "model" && key != "train") throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    if (j.contains("model")) rc.model = config_from_json(j["model"]);
    if (j.contains("train")) rc.train = train_config_from_json(j["train"]);
  }
  rc.train.seed = o.seed;
  rc.train.sampler = parse_sampler(o.sampler);
  rc.train.observed_frac = o.observed_frac;
  if (o.lambda) rc.train.lambda = *o.lambda;
  rc.train.validate();
  return rc;
}

std::string dataset_name(const fs::path& path) { return path.stem().string(); }

// ---- generate ------------------------------------------------------------------

int run_generate(const CommonOptions& o, SineDatasetSpec sine) {
  if (o.out.empty()) throw std::invalid_argument("generate: --out directory is required");
  sine.seed = o.seed;
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const AsTSDataset ds = generate_sine_dataset(sine);
  save_jsonl(dir / "data.jsonl", ds.records);
  const json manifest{{"name", "sine"},
                      {"dataset", {{"path", "data.jsonl"}}},
                      {"model", "tripletformer"},
                      {"samplers", {"random", "burst"}},
                      {"observed_fracs", {0.1, 0.5, 0.9}},
                      {"repetitions", 5},
                      {"seed", o.seed}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cerr << "wrote " << ds.records.size() << " records with " << ds.channels << " channels to " << dir.string()
            << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------------

int run_train(const CommonOptions& o, const std::string& data_path) {
  if (o.out.empty()) throw std::invalid_argument("train: --out directory is required");
  RunConfig rc = load_run_config(o);
  const PreparedData data = prepare_data(load_jsonl(data_path), o.seed);
  rc.model.channels = data.channels;
  const TrainResult result = train(rc.model, rc.train, data.split.train, data.split.val, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu train_loss %.6f val_nll %.6f\n", e.epoch, e.train_loss, e.val_nll);
  });
  const fs::path dir(o.out);
  const json metadata{{"data", fs::absolute(data_path).string()},
                      {"dataset", dataset_name(data_path)},
                      {"split_seed", o.seed},
                      {"train", to_json(rc.train)}};
  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.json", result.params, metadata);
  write_text(dir / "history.json", to_json(result.history).dump(2) + "\n");
  std::cerr << "best epoch " << result.history.best_epoch << " val_nll " << result.history.best_val_nll << "\n";
  return 0;
}

// ---- evaluate ------------------------------------------------------------------

int run_evaluate(const CommonOptions& o, std::string data_path, const std::string& checkpoint_path,
                 const std::string& model, std::optional<std::uint64_t> split_seed) {
  EvalReport report;
  const SamplerKind sampler = parse_sampler(o.sampler);
  if (!checkpoint_path.empty()) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (data_path.empty()) data_path = ck.metadata.value("data", std::string());
    if (data_path.empty()) throw std::invalid_argument("evaluate: --data is required");
    if (!split_seed) split_seed = ck.metadata.value("split_seed", std::uint64_t{0});
    const PreparedData data = prepare_data(load_jsonl(data_path), *split_seed);
    if (data.channels != ck.params.config.channels) {
      throw std::invalid_argument("evaluate: checkpoint expects " + std::to_string(ck.params.config.channels) +
                                  " channels, data has " + std::to_string(data.channels));
    }
    report = evaluate(model_predictor(ck.params), data.split.test, sampler, o.observed_frac, o.seed);
    report.dataset = dataset_name(data_path);
    report.model = "tripletformer";
    report.config_fingerprint =
        fingerprint(json{{"model", to_json(ck.params.config)}, {"train", ck.metadata.value("train", json())}});
  } else {
    if (data_path.empty()) throw std::invalid_argument("evaluate: --data is required");
    if (model == "tripletformer") throw std::invalid_argument("evaluate: --checkpoint is required for tripletformer");
    const PreparedData data = prepare_data(load_jsonl(data_path), split_seed.value_or(o.seed));
    ExperimentManifest manifest;
    manifest.name = dataset_name(data_path);
    manifest.model = model;
    report = run_cell(manifest, data, sampler, o.observed_frac, o.seed);
  }
  emit(o.out, to_json(report).dump(2) + "\n");
  return 0;
}

// ---- benchmark-attention -------------------------------------------------------

int run_benchmark(const CommonOptions& o, std::vector<std::size_t> sizes, std::size_t d, std::size_t l,
                  std::size_t heads, std::size_t repeats) {
  Rng rng(o.seed);
  const MabParams mab_params = init_mab(d, d, heads, Activation::relu, rng);
  const ImabParams imab_params = init_imab(d, d, l, heads, Activation::relu, rng);
  std::string csv = "block,s,l,d,heads,score_macs,matmul_macs,wall_seconds\n";
  for (std::size_t s : sizes) {
    std::vector<double> x(s * d);
    for (double& v : x) v = rng.normal();
    const Tensor input({s, d}, std::move(x));
    for (const char* block : {"mab", "imab"}) {
      const bool induced = std::string(block) == "imab";
      OpCounters counts;
      double best = INFINITY;
      for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
        reset_op_counters();
        const auto start = std::chrono::steady_clock::now();
        const Tensor y = induced ? imab(input, input, input, imab_params) : mab(input, input, input, mab_params);
        const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;
        best = std::min(best, wall.count());
        counts = op_counters();
        if (y.rows() != s) throw std::logic_error("benchmark: unexpected output shape");
      }
      csv += std::string(block) + "," + std::to_string(s) + "," + std::to_string(induced ? l : s) + "," +
             std::to_string(d) + "," + std::to_string(heads) + "," + std::to_string(counts.score_macs) + "," +
             std::to_string(counts.matmul_macs) + "," + std::to_string(best) + "\n";
    }
  }
  emit(o.out, csv);
  return 0;
}

// ---- gradcheck -----------------------------------------------------------------

int run_gradcheck(const CommonOptions& o, double eps, double tol, std::size_t context_size, std::size_t queries) {
  TripletformerConfig config;
  config.channels = 2;
  config.depth = 1;
  config.input_width = config.encoder_width = config.target_width = config.decoder_width = 8;
  config.ff_hidden = 8;
  config.induced_points = 4;
  config.num_heads = 2;
  if (!o.config.empty()) {
    const json j = read_json(o.config);
    config = config_from_json(j.contains("model") ? j["model"] : j);
  }
  const TripletformerParams params = init_params(config, derive_seed(o.seed, "init"));
  Rng rng(derive_seed(o.seed, "instance"));
  InterpolationInstance inst;
  for (std::size_t i = 0; i < context_size; ++i)
    inst.context.push_back({rng.uniform(), 1 + rng.uniform_index(config.channels), rng.normal()});
  for (std::size_t i = 0; i < queries; ++i) {
    inst.queries.push_back({rng.uniform(), 1 + rng.uniform_index(config.channels)});
    inst.targets.push_back(rng.normal());
  }
  const Batch batch = batch_pad(std::span(&inst, 1), config.channels);
  const double lambda = o.lambda.value_or(1.0);
  const auto f = [&](std::span<const Tensor> flat) {
    TripletformerParams p = params;
    assign_params(p, flat);
    return batch_loss(p, batch, lambda);
  };
  const GradCheckResult r = grad_check(f, flatten_params(params), eps);
  const bool pass = r.max_relative_error < tol;
  const json out{{"pass", pass},
                 {"max_relative_error", r.max_relative_error},
                 {"tolerance", tol},
                 {"entries_checked", r.entries_checked},
                 {"worst_param", r.worst_param},
                 {"worst_index", r.worst_index},
                 {"analytic", r.analytic},
                 {"numeric", r.numeric}};
  emit(o.out, out.dump(2) + "\n");
  return pass ? 0 : 1;
}

// ---- search --------------------------------------------------------------------

int run_search(const CommonOptions& o, const std::string& data_path, std::size_t trials) {
  const RunConfig rc = load_run_config(o);
  const PreparedData data = prepare_data(load_jsonl(data_path), o.seed);
  ModelSpace ms;
  ms.base = rc.model;
  ms.base.channels = data.channels;
  TrainSpace ts;
  ts.base = rc.train;
  const SearchResult result = random_search(ms, ts, trials, o.seed, data.split.train, data.split.val);
  json j{{"dataset", dataset_name(data_path)}, {"best", result.best}, {"trials", json::array()}};
  for (const auto& t : result.trials) {
    j["trials"].push_back({{"model", to_json(t.config)}, {"train", to_json(t.tconfig)}, {"val_nll", t.val_nll}});
  }
  emit(o.out, j.dump(2) + "\n");
  return 0;
}

// ---- experiment ----------------------------------------------------------------

int run_experiment_cmd(const CommonOptions& o) {
  if (o.config.empty()) throw std::invalid_argument("experiment: --config manifest is required");
  const ExperimentResult result = run_experiment(fs::path(o.config), [](const EvalReport& r) {
    std::fprintf(stderr, "%s %s frac %.2f seed %llu nll %.6f mse %.6f\n", r.model.c_str(),
                 std::string(to_string(r.sampler)).c_str(), r.observed_frac,
                 static_cast<unsigned long long>(r.seed), r.nll_mean, r.mse_mean);
  });
  emit(o.out, to_json(result).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tripletformer: probabilistic interpolation of asynchronous time series"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* gen = app.add_subcommand("generate", "Write a synthetic sine dataset (JSONL) and an experiment manifest");
  SineDatasetSpec sine;
  add_seed(gen, o);
  gen->add_option("--n-series", sine.n_series, "Number of series")->check(CLI::PositiveNumber);
  gen->add_option("--length", sine.length, "Dense grid length")->check(CLI::PositiveNumber);
  gen->add_option("--channels", sine.channels, "Number of channels")->check(CLI::PositiveNumber);
  gen->add_option("--noise-sd", sine.noise_sd, "Observation noise sd")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", o.out, "Output directory")->required();

  std::string data_path;
  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint.json and history.json");
  add_seed(tr, o);
  add_sampling(tr, o);
  add_lambda(tr, o);
  tr->add_option("--data", data_path, "Dataset (JSONL)")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", o.config, "JSON with optional 'model' and 'train' objects")->check(CLI::ExistingFile);
  tr->add_option("--out", o.out, "Output directory")->required();

  std::string checkpoint_path;
  std::string model = "tripletformer";
  std::optional<std::uint64_t> split_seed;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint or a baseline on the test split");
  add_seed(ev, o);
  add_sampling(ev, o);
  ev->add_option("--data", data_path, "Dataset (JSONL); defaults to the checkpoint's")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--model", model, "Model when no checkpoint is given")
      ->check(CLI::IsMember({"tripletformer", "mean", "forward"}));
  ev->add_option("--split-seed", split_seed, "Seed of the train/val/test split");
  ev->add_option("--out", o.out, "Report path (stdout when omitted)");

  std::vector<std::size_t> sizes{128, 256, 512, 1024};
  std::size_t bench_d = 32, bench_l = 16, bench_heads = 1, repeats = 3;
  auto* bench = app.add_subcommand("benchmark-attention", "Count and time MAB versus IMAB self-attention");
  add_seed(bench, o);
  bench->add_option("--sizes", sizes, "Set sizes s")->delimiter(',');
  bench->add_option("--d", bench_d, "Model width")->check(CLI::PositiveNumber);
  bench->add_option("--l", bench_l, "Induced points")->check(CLI::PositiveNumber);
  bench->add_option("--heads", bench_heads, "Attention heads")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "Timing repetitions (minimum is reported)");
  bench->add_option("--out", o.out, "CSV path (stdout when omitted)");

  double eps = 1e-4, tol = 1e-4;
  std::size_t gc_context = 6, gc_queries = 3;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model gradient");
  add_seed(gc, o);
  add_lambda(gc, o);
  gc->add_option("--config", o.config, "Model config JSON")->check(CLI::ExistingFile);
  gc->add_option("--eps", eps, "Central-difference step")->check(CLI::PositiveNumber);
  gc->add_option("--tol", tol, "Maximum relative error")->check(CLI::PositiveNumber);
  gc->add_option("--context", gc_context, "Context size")->check(CLI::PositiveNumber);
  gc->add_option("--queries", gc_queries, "Query count")->check(CLI::PositiveNumber);
  gc->add_option("--out", o.out, "Result path (stdout when omitted)");

  std::size_t trials = 10;
  auto* se = app.add_subcommand("search", "Random hyperparameter search on the validation split");
  add_seed(se, o);
  add_sampling(se, o);
  add_lambda(se, o);
  se->add_option("--data", data_path, "Dataset (JSONL)")->required()->check(CLI::ExistingFile);
  se->add_option("--config", o.config, "Base config JSON")->check(CLI::ExistingFile);
  se->add_option("--trials", trials, "Number of sampled configurations")->check(CLI::PositiveNumber);
  se->add_option("--out", o.out, "Result path (stdout when omitted)");

  auto* ex = app.add_subcommand("experiment", "Run every cell of an experiment manifest");
  ex->add_option("--config", o.config, "Experiment manifest JSON")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", o.out, "Result path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_generate(o, sine);
    if (*tr) return run_train(o, data_path);
    if (*ev) return run_evaluate(o, data_path, checkpoint_path, model, split_seed);
    if (*bench) return run_benchmark(o, sizes, bench_d, bench_l, bench_heads, repeats);
    if (*gc) return run_gradcheck(o, eps, tol, gc_context, gc_queries);
    if (*se) return run_search(o, data_path, trials);
    if (*ex) return run_experiment_cmd(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
