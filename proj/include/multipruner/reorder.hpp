#pragma once

// Consistent permutation of MLP channels and KV head groups so the least
// important units sit last, where width trimming removes them first.

#include <string>
#include <vector>

#include "multipruner/calib.hpp"

namespace multipruner {

enum class ReorderMetric { L1Norm, Wanda, None };

std::string to_string(ReorderMetric metric);
ReorderMetric reorder_metric_from_string(const std::string& s);

/// Per-channel scores over the kept MLP channels of one layer.
///   L1_NORM: |gate row|_1 + |up row|_1 + |down column|_1
///   WANDA:   sum_j |w_down[j][c]| * ||X_c||_2, X_c the activation entering
///            w_down at channel c (needs `input_sq`, the per-channel sum of
///            squares over calibration tokens).
Vector<double> mlp_channel_scores(const LayerWeights& layer, int channels, ReorderMetric metric,
                                  const Vector<double>* input_sq = nullptr);

/// Per-KV-group scores over the kept groups of one layer.
///   L1_NORM: query-head slices of wq and column blocks of wo for every head
///            in the group, plus the group's wk and wv slices.
///   WANDA:   the wo column blocks of the group weighted by the L2 norm of the
///            attention output entering each column.
Vector<double> head_scores(const LayerWeights& layer, const ModelConfig& config, int kv_groups,
                           ReorderMetric metric, const Vector<double>* input_sq = nullptr);

struct LayerPermutation {
  int layer = 0;
  std::vector<int> channel_perm;  // new position i holds old channel perm[i]
  std::vector<int> head_perm;     // same, over KV groups
};

struct PermutationReport {
  ReorderMetric metric = ReorderMetric::L1Norm;
  std::vector<LayerPermutation> layers;
};

/// Sorts channels and KV groups of every present block by descending score
/// (stable), permuting all paired tensors together. WANDA requires `calib`.
PermutationReport apply_reordering(TransformerModel& model, ReorderMetric metric,
                                   const CalibrationSet* calib = nullptr);

/// Applies explicit permutations (used by tests and by apply_reordering).
void permute_mlp_channels(LayerWeights& layer, const std::vector<int>& perm);
void permute_kv_groups(LayerWeights& layer, const ModelConfig& config,
                       const std::vector<int>& perm);

}  // namespace multipruner
