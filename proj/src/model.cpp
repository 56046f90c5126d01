// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/model.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {

using nlohmann::json;

BlockKind parse_block_kind(std::string_view name) {
  if (name == "imab") return BlockKind::imab;
  if (name == "mab") return BlockKind::mab;
  throw std::invalid_argument("unknown block kind '" + std::string(name) + "' (expected imab|mab)");
}

std::string_view to_string(BlockKind kind) { return kind == BlockKind::imab ? "imab" : "mab"; }

void TripletformerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid config: " + msg); };
  if (channels < 1) fail("channels must be >= 1");
  if (depth < 1) fail("depth must be >= 1");
  if (input_width == 0 || encoder_width == 0 || target_width == 0 || decoder_width == 0 || ff_hidden == 0) {
    fail("all widths must be positive");
  }
  if (num_heads == 0) fail("num_heads must be >= 1");
  if (encoder_width % num_heads != 0) fail("encoder_width must be divisible by num_heads");
  if (decoder_width % num_heads != 0) fail("decoder_width must be divisible by num_heads");
  if (input_width != encoder_width) fail("input_width must equal encoder_width (residual connection)");
  if (target_width != decoder_width) fail("target_width must equal decoder_width (residual connection)");
  if (induced_points < 1) fail("induced_points must be >= 1");
}

json to_json(const TripletformerConfig& c) {
  return json{{"channels", c.channels},
              {"depth", c.depth},
              {"input_width", c.input_width},
              {"encoder_width", c.encoder_width},
              {"target_width", c.target_width},
              {"decoder_width", c.decoder_width},
              {"ff_hidden", c.ff_hidden},
              {"induced_points", c.induced_points},
              {"num_heads", c.num_heads},
              {"activation", std::string(to_string(c.activation))},
              {"encoder_block", std::string(to_string(c.encoder_block))},
              {"decoder_block", std::string(to_string(c.decoder_block))}};
}

TripletformerConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  TripletformerConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "channels") c.channels = value.get<std::size_t>();
    else if (key == "depth") c.depth = value.get<std::size_t>();
    else if (key == "input_width") c.input_width = value.get<std::size_t>();
    else if (key == "encoder_width") c.encoder_width = value.get<std::size_t>();
    else if (key == "target_width") c.target_width = value.get<std::size_t>();
    else if (key == "decoder_width") c.decoder_width = value.get<std::size_t>();
    else if (key == "ff_hidden") c.ff_hidden = value.get<std::size_t>();
    else if (key == "induced_points") c.induced_points = value.get<std::size_t>();
    else if (key == "num_heads") c.num_heads = value.get<std::size_t>();
    else if (key == "activation") c.activation = parse_activation(value.get<std::string>());
    else if (key == "encoder_block") c.encoder_block = parse_block_kind(value.get<std::string>());
    else if (key == "decoder_block") c.decoder_block = parse_block_kind(value.get<std::string>());
    else throw std::invalid_argument("model config: unknown field '" + key + "'");
  }
  return c;
}

std::size_t TripletformerParams::parameter_count() const {
  std::size_t n = 0;
  for_each_param(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

namespace {

AttentionBlock init_block(BlockKind kind, std::size_t width, std::size_t key_width, const TripletformerConfig& c,
                          Rng& rng) {
  if (kind == BlockKind::imab) return init_imab(width, key_width, c.induced_points, c.num_heads, c.activation, rng);
  return init_mab(width, key_width, c.num_heads, c.activation, rng);
}

}  // namespace

TripletformerParams init_params(const TripletformerConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  TripletformerParams p;
  p.config = config;
  p.input_ff = init_feed_forward(config.channels + 2, config.ff_hidden, config.input_width, config.activation, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    p.encoder.push_back(init_block(config.encoder_block, config.encoder_width, config.encoder_width, config, rng));
  }
  p.target_ff = init_feed_forward(config.channels + 1, config.ff_hidden, config.target_width, config.activation, rng);
  p.cross = init_block(config.decoder_block, config.decoder_width, config.encoder_width, config, rng);
  p.mean_head = init_linear(config.decoder_width, 1, rng);
  p.scale_head = init_linear(config.decoder_width, 1, rng);
  return p;
}

std::vector<Tensor> flatten_params(const TripletformerParams& params) {
  std::vector<Tensor> out;
  for_each_param(params, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

void assign_params(TripletformerParams& params, std::span<const Tensor> tensors) {
  std::size_t i = 0;
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw DimensionError("assign_params: too few tensors");
    if (tensors[i].shape() != t.shape()) {
      throw DimensionError("assign_params: " + name + " expects " + t.shape_string() + ", got " +
                           tensors[i].shape_string());
    }
    t = tensors[i++];
  });
  if (i != tensors.size()) throw DimensionError("assign_params: too many tensors");
}

TripletformerParams watch_params(Tape& tape, const TripletformerParams& params) {
  TripletformerParams watched = params;
  for_each_param(watched, [&](const std::string&, Tensor& t) { t = tape.watch(t); });
  return watched;
}

Tensor apply_block(const AttentionBlock& block, const Tensor& q, const Tensor& k, const Tensor& v,
                   const Mask& query_mask, const Mask& key_mask) {
  if (const auto* induced = std::get_if<ImabParams>(&block)) return imab(q, k, v, *induced, query_mask, key_mask);
  return mab(q, k, v, std::get<MabParams>(block), key_mask);
}

namespace {

bool any_selected(const Mask& mask, std::size_t n) {
  if (mask.empty()) return n > 0;
  if (mask.size() != n) throw DimensionError("mask length " + std::to_string(mask.size()) + " for " + std::to_string(n) + " rows");
  for (bool b : mask)
    if (b) return true;
  return false;
}

}  // namespace

Tensor encoder_forward(const Tensor& context, const Mask& context_mask, const TripletformerParams& params) {
  const auto& c = params.config;
  if (context.rank() != 2 || context.cols() != c.channels + 2) {
    throw DimensionError("encoder: context " + context.shape_string() + " is not [s x " +
                         std::to_string(c.channels + 2) + "]");
  }
  if (!any_selected(context_mask, context.rows())) throw EmptyAttentionSupport();
  Tensor z = apply(params.input_ff, context);
  for (const auto& block : params.encoder) z = apply_block(block, z, z, z, context_mask, context_mask);
  return z;
}

GaussianPrediction decoder_forward(const Tensor& encoded, const Mask& context_mask, const Tensor& queries,
                                   const Mask& query_mask, const TripletformerParams& params) {
  const auto& c = params.config;
  if (queries.rank() != 2 || queries.cols() != c.channels + 1) {
    throw DimensionError("decoder: queries " + queries.shape_string() + " are not [r x " +
                         std::to_string(c.channels + 1) + "]");
  }
  if (!any_selected(context_mask, encoded.rows())) throw EmptyAttentionSupport();
  if (!any_selected(query_mask, queries.rows())) throw std::invalid_argument("decoder: no unmasked queries");

  Tensor y = apply(params.target_ff, queries);
  Tensor z = apply_block(params.cross, y, encoded, encoded, query_mask, context_mask);
  Tensor mu = apply(params.mean_head, z);
  Tensor sigma = add_scalar(softplus(apply(params.scale_head, z)), kSigmaFloor);
  if (query_mask.empty()) return {mu, sigma};

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < query_mask.size(); ++i)
    if (query_mask[i]) keep.push_back(i);
  return {gather_rows(mu, keep), gather_rows(sigma, keep)};
}

GaussianPrediction predict(const TripletformerParams& params, std::span<const Triplet> context,
                           std::span<const QueryPoint> queries) {
  const std::size_t C = params.config.channels;
  Tensor encoded = encoder_forward(encode_context(context, C), {}, params);
  return decoder_forward(encoded, {}, encode_queries(queries, C), {}, params);
}

GaussianPrediction predict_distribution(const TripletformerParams& params, const InterpolationInstance& instance) {
  return predict(params, instance.context, instance.queries);
}

// ---- checkpoints ----------------------------------------------------------------

json checkpoint_to_json(const TripletformerParams& params, const json& metadata) {
  json tensors = json::array();
  for_each_param(params, [&](const std::string& name, const Tensor& t) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}, {"data", t.values()}});
  });
  json j{{"format", "tripletformer.checkpoint"},
         {"version", 1},
         {"config", to_json(params.config)},
         {"parameters", std::move(tensors)}};
  if (!metadata.is_null()) j["metadata"] = metadata;
  return j;
}

TripletformerParams params_from_checkpoint(const json& j) {
  if (!j.is_object() || j.value("format", "") != "tripletformer.checkpoint") {
    throw ParseError("not a tripletformer checkpoint");
  }
  if (j.value("version", 0) != 1) throw ParseError("unsupported checkpoint version");
  TripletformerParams params = init_params(config_from_json(j.at("config")), 0);

  std::map<std::string, const json*> by_name;
  for (const auto& entry : j.at("parameters")) by_name[entry.at("name").get<std::string>()] = &entry;
  std::size_t used = 0;
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing parameter " + name);
    auto shape = it->second->at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw ParseError("checkpoint parameter " + name + " has shape " + shape_string(shape) + ", expected " +
                       t.shape_string());
    }
    t = Tensor(std::move(shape), it->second->at("data").get<std::vector<double>>());
    ++used;
  });
  if (used != by_name.size()) throw ParseError("checkpoint has parameters that do not belong to its config");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const TripletformerParams& params, const json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(params, metadata).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Checkpoint ck;
  ck.params = params_from_checkpoint(j);
  if (j.contains("metadata")) ck.metadata = j["metadata"];
  return ck;
}

}  // namespace tripletformer
