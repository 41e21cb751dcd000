#pragma once

// Decoder-only transformer (Llama layout): RMSNorm, rotary attention with
// grouped KV heads, SiLU-gated MLP. The pruning state lives in an
// ArchDescriptor; forward() consults it, so masking a block or trimming a
// width never touches the weights.

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "multipruner/tensor.hpp"

namespace multipruner {

using TokenId = std::uint32_t;

struct ModelConfig {
  int vocab_size = 256;
  int n_layers = 4;
  int hidden = 64;
  int n_heads = 4;
  int n_kv_heads = 4;
  int head_dim = 16;
  int intermediate = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  bool tied_embeddings = false;

  /// Query heads per KV head.
  int group_size() const { return n_heads / n_kv_heads; }
  /// Throws InputError when the fields are inconsistent.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class BlockKind { Attn, Mlp };

struct BlockId {
  int layer = 0;
  BlockKind kind = BlockKind::Attn;

  // Lowest layer first, ATTN before MLP; this is the tie-breaking order.
  auto operator<=>(const BlockId&) const = default;
};

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);
std::string to_string(const BlockId& id);

struct LayerArch {
  bool attn_present = true;
  bool mlp_present = true;
  int heads_kept = 0;
  int kv_heads_kept = 0;
  int mlp_channels_kept = 0;

  bool operator==(const LayerArch&) const = default;
};

/// Which minimal blocks exist and how wide each one is.
struct ArchDescriptor {
  std::vector<LayerArch> layers;

  static ArchDescriptor dense(const ModelConfig& config);

  /// Throws InputError on any invariant violation. A block is present iff its
  /// kept width is positive, and heads are kept in whole KV groups.
  void validate(const ModelConfig& config) const;

  bool present(BlockId id) const;
  /// Kept MLP channels or kept query heads.
  int width(BlockId id) const;
  /// True when every block here is no larger than in `other`.
  bool within(const ArchDescriptor& other) const;
  /// All present blocks in tie-breaking order.
  std::vector<BlockId> present_blocks() const;

  bool operator==(const ArchDescriptor&) const = default;
};

struct LayerWeights {
  Tensor wq;      // (n_heads * head_dim) x hidden
  Tensor wk;      // (n_kv_heads * head_dim) x hidden
  Tensor wv;      // (n_kv_heads * head_dim) x hidden
  Tensor wo;      // hidden x (n_heads * head_dim)
  Tensor w_gate;  // intermediate x hidden
  Tensor w_up;    // intermediate x hidden
  Tensor w_down;  // hidden x intermediate
  Vector<float> attn_norm;
  Vector<float> mlp_norm;
};

struct TransformerModel {
  ModelConfig config;
  Tensor embed;  // vocab x hidden
  std::vector<LayerWeights> layers;
  Vector<float> final_norm;
  Tensor lm_head;  // vocab x hidden; empty when embeddings are tied
  ArchDescriptor descriptor;

  const Tensor& output_head() const { return config.tied_embeddings ? embed : lm_head; }
};

/// Sum of squared activations feeding w_down (per channel) and wo (per column),
/// accumulated over all forwarded tokens.
struct ActivationStats {
  std::vector<Vector<double>> mlp_sq;
  std::vector<Vector<double>> attn_sq;
  std::int64_t tokens = 0;

  explicit ActivationStats(const TransformerModel& model);
};

/// Random weights, N(0, weight_std^2); norm gains 1 + N(0, gain_std^2).
TransformerModel random_model(const ModelConfig& config, std::uint64_t seed,
                              double weight_std = 0.02, double gain_std = 0.0);

/// Logits (len x vocab) for one sequence, using the model's own descriptor.
Tensor forward(const TransformerModel& model, std::span<const TokenId> tokens);

/// Same, with an overlay descriptor. The overlay must be within the model's
/// physical tensor widths. Pass `stats` to collect activation norms.
Tensor forward(const TransformerModel& model, const ArchDescriptor& arch,
               std::span<const TokenId> tokens, ActivationStats* stats = nullptr);

/// Rotated keys and values per layer for incremental decoding.
struct KvCache {
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  Index length = 0;

  KvCache(const TransformerModel& model, Index capacity);
};

/// Appends `tokens` after the cached positions and returns their logits.
/// Uses the model's own descriptor.
Tensor forward_cached(const TransformerModel& model, std::span<const TokenId> tokens,
                      KvCache& cache);

/// Total parameter count implied by a descriptor: embeddings, all norms,
/// present projections and the output head (once if tied).
std::int64_t count_params(const ModelConfig& config, const ArchDescriptor& arch);
std::int64_t count_params(const TransformerModel& model);

/// Fraction of the dense parameter count removed.
double pruning_ratio(const ArchDescriptor& current, const ArchDescriptor& dense,
                     const ModelConfig& config);
double pruning_ratio(const TransformerModel& model);

/// Parameters in one MLP channel or one KV group (its query heads included).
std::int64_t unit_params(const ModelConfig& config, BlockKind kind);

/// Restores one block's descriptor fields when it goes out of scope.
class ScopedMask {
 public:
  ScopedMask() = default;
  ScopedMask(ArchDescriptor& arch, BlockId block);
  ScopedMask(ScopedMask&& other) noexcept;
  ScopedMask& operator=(ScopedMask&& other) noexcept;
  ScopedMask(const ScopedMask&) = delete;
  ScopedMask& operator=(const ScopedMask&) = delete;
  ~ScopedMask();

  void release();

 private:
  ArchDescriptor* arch_ = nullptr;
  BlockId block_;
  LayerArch saved_;
};

/// Marks a present block absent until the handle is released.
ScopedMask mask_block(ArchDescriptor& arch, BlockId block);
ScopedMask mask_block(TransformerModel& model, BlockId block);

/// Drops the last `drop_last` channels (MLP) or query heads (ATTN, whole KV
/// groups only). Dropping the full width marks the block absent.
ScopedMask mask_width(ArchDescriptor& arch, const ModelConfig& config, BlockId block,
                      int drop_last);
ScopedMask mask_width(TransformerModel& model, BlockId block, int drop_last);

/// Applies a width trim permanently (used by the pruning drivers).
void trim_width(ArchDescriptor& arch, const ModelConfig& config, BlockId block, int drop_last);

/// Physically shrinks tensors to the descriptor; `arch` must lie within the
/// model's current descriptor.
TransformerModel materialize(const TransformerModel& model, const ArchDescriptor& arch);

/// FNV-1a over every weight byte.
std::uint64_t weights_checksum(const TransformerModel& model);

/// Rotates pairs (i, i + d/2) of a head vector in place for position `pos`.
/// direction = -1 applies the inverse rotation.
template <typename Scalar>
void apply_rope(Scalar* head, int head_dim, int pos, double base, int direction = 1) {
  const int half = head_dim / 2;
  for (int i = 0; i < half; ++i) {
    const double inv_freq = std::pow(base, -2.0 * i / head_dim);
    const double angle = pos * inv_freq;
    const double c = std::cos(angle);
    const double s = direction * std::sin(angle);
    const double a = static_cast<double>(head[i]);
    const double b = static_cast<double>(head[i + half]);
    head[i] = static_cast<Scalar>(a * c - b * s);
    head[i + half] = static_cast<Scalar>(b * c + a * s);
  }
}

}  // namespace multipruner
