#pragma once

// Checkpoint directory layout:
//   config.json      model config fields plus a "format" tag
//   descriptor.json  per-layer pruning state
//   index.json       ordered [{name, shape, byte_offset}]
//   weights.bin      little-endian float32 tensors, concatenated
//
// Tensor names: embed, final_norm, lm_head, layers.<l>.<wq|wk|wv|wo|w_gate|
// w_up|w_down|attn_norm|mlp_norm>. Projections of absent blocks may be omitted.

#include <filesystem>

#include "multipruner/model.hpp"

namespace multipruner {

inline constexpr const char* kCheckpointFormat = "multipruner-checkpoint/1";

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& dir);

/// Throws FormatError naming the offending tensor on missing tensors, shape
/// mismatches or truncated data.
TransformerModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace multipruner
