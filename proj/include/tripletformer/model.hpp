// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tripletformer/asts.hpp"
#include "tripletformer/attention.hpp"
#include "tripletformer/tensor.hpp"

namespace tripletformer {

enum class BlockKind { imab, mab };

BlockKind parse_block_kind(std::string_view name);
std::string_view to_string(BlockKind kind);

/// Architecture hyperparameters.
///
/// Residual connections inside the attention blocks require the embedding
/// feeding a block to have the block's width, so input_width must equal
/// encoder_width and target_width must equal decoder_width.
struct TripletformerConfig {
  std::size_t channels = 1;         // C
  std::size_t depth = 2;            // L, encoder blocks
  std::size_t input_width = 64;     // E_iFF
  std::size_t encoder_width = 64;   // E_SA
  std::size_t target_width = 64;    // E_tFF
  std::size_t decoder_width = 64;   // E_CA
  std::size_t ff_hidden = 64;       // hidden units of iFF and tFF
  std::size_t induced_points = 16;  // l
  std::size_t num_heads = 2;
  Activation activation = Activation::relu;
  BlockKind encoder_block = BlockKind::imab;
  BlockKind decoder_block = BlockKind::mab;

  void validate() const;
  bool operator==(const TripletformerConfig&) const = default;
};

nlohmann::json to_json(const TripletformerConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TripletformerConfig config_from_json(const nlohmann::json& j);

using AttentionBlock = std::variant<MabParams, ImabParams>;

struct TripletformerParams {
  TripletformerConfig config;
  FeedForward input_ff;                // iFF: (C + 2) -> ff_hidden -> E_iFF
  std::vector<AttentionBlock> encoder; // L self-attention blocks
  FeedForward target_ff;               // tFF: (C + 1) -> ff_hidden -> E_tFF
  AttentionBlock cross;                // queries attend to the encoded context
  Linear mean_head;
  Linear scale_head;

  std::size_t parameter_count() const;
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, TripletformerParams>
void for_each_param(P& params, F&& fn) {
  auto visit_block = [&fn](auto& block, const std::string& name) {
    std::visit([&](auto& b) { for_each_param(b, name, fn); }, block);
  };
  for_each_param(params.input_ff, "input_ff", fn);
  for (std::size_t i = 0; i < params.encoder.size(); ++i) visit_block(params.encoder[i], "encoder" + std::to_string(i));
  for_each_param(params.target_ff, "target_ff", fn);
  visit_block(params.cross, "cross");
  for_each_param(params.mean_head, "mean_head", fn);
  for_each_param(params.scale_head, "scale_head", fn);
}

/// Linear weights ~ U(+-sqrt(6 / (fan_in + fan_out))), biases 0, induced
/// points ~ N(0, 1/sqrt(d)). Deterministic in `seed`.
TripletformerParams init_params(const TripletformerConfig& config, std::uint64_t seed);

/// Parameter tensors in for_each_param order.
std::vector<Tensor> flatten_params(const TripletformerParams& params);
/// Replaces the parameter tensors, in for_each_param order.
void assign_params(TripletformerParams& params, std::span<const Tensor> tensors);
/// Copy of `params` whose tensors are watched on `tape`.
TripletformerParams watch_params(Tape& tape, const TripletformerParams& params);

/// Lower bound added to the softplus scale output.
inline constexpr double kSigmaFloor = 1e-8;

/// Per-query Gaussian N(mean, stddev^2); both are column vectors [r x 1].
struct GaussianPrediction {
  Tensor mean;
  Tensor stddev;

  std::size_t size() const { return mean.rows(); }
};

Tensor apply_block(const AttentionBlock& block, const Tensor& q, const Tensor& k, const Tensor& v,
                   const Mask& query_mask, const Mask& key_mask);

/// Context rows [s x (C + 2)] -> Z^(e) [s x E_SA]. The mask applies to both
/// the queries and keys of every encoder block.
Tensor encoder_forward(const Tensor& context, const Mask& context_mask, const TripletformerParams& params);

/// Query rows [r x (C + 1)] attend to Z^(e); masked query rows are dropped
/// from the returned prediction.
GaussianPrediction decoder_forward(const Tensor& encoded, const Mask& context_mask, const Tensor& queries,
                                   const Mask& query_mask, const TripletformerParams& params);

GaussianPrediction predict(const TripletformerParams& params, std::span<const Triplet> context,
                           std::span<const QueryPoint> queries);
GaussianPrediction predict_distribution(const TripletformerParams& params, const InterpolationInstance& instance);

// ---- checkpoints ----------------------------------------------------------------

/// {"format", "version", "config", "parameters": [{"name", "shape", "data"}], "metadata"}.
/// Doubles are written in shortest round-trip form, so loading is bit-exact.
nlohmann::json checkpoint_to_json(const TripletformerParams& params, const nlohmann::json& metadata = {});
TripletformerParams params_from_checkpoint(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const TripletformerParams& params,
                     const nlohmann::json& metadata = {});

struct Checkpoint {
  TripletformerParams params;
  nlohmann::json metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tripletformer
