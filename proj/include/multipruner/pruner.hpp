#pragma once

// Sequential multidimensional pruning with fixed cumulative thresholds:
// greedy block removal, one weight reordering, then greedy MLP-channel and
// head-group trimming. Every decision takes the argmin of masked calibration
// PPL over all candidates.

#include <array>
#include <optional>
#include <vector>

#include "multipruner/importance.hpp"
#include "multipruner/reorder.hpp"

namespace multipruner {

enum class PruneStage { Block, Mlp, Attn };

std::string to_string(PruneStage stage);
PruneStage prune_stage_from_string(const std::string& s);

struct PruneConfig {
  double target_ratio = 0.22;
  /// Share of the target assigned to (block, MLP, attention).
  std::array<double, 3> ratio_weights = {0.44, 0.52, 0.04};
  int g_mlp = 0;   // channels per trim; 0 selects hidden / 4
  int g_attn = 0;  // query heads per trim; 0 selects one KV group
  std::vector<PruneStage> stage_order = {PruneStage::Block, PruneStage::Mlp, PruneStage::Attn};
  std::vector<PruneStage> stages_enabled = {PruneStage::Block, PruneStage::Mlp, PruneStage::Attn};
  ReorderMetric reorder_metric = ReorderMetric::L1Norm;
  int calib_samples_depth = 256;
  int calib_samples_width = 128;
  std::uint64_t seed = 0;
  int workers = 0;
  bool verbose = false;

  bool enabled(PruneStage stage) const;
  /// Fills the 0 defaults for `model` and checks every invariant.
  PruneConfig resolved(const ModelConfig& model) const;
};

/// (tau1, tau2, tau3) = (tau*w_b, tau*w_b + tau*w_m, tau).
std::array<double, 3> derive_thresholds(double tau, const std::array<double, 3>& weights);

/// Cumulative threshold of each stage in `stage_order`. Disabled stages get
/// zero weight and the remaining weights are rescaled to sum to one, so the
/// last enabled stage always ends at the target.
std::vector<double> stage_thresholds(const PruneConfig& config);

struct TraceStep {
  PruneStage stage = PruneStage::Block;
  BlockId block;
  int group = 0;  // units trimmed; 0 for whole-block removal
  double score = 0.0;
  double ratio_after = 0.0;
};

struct PruneTrace {
  std::vector<TraceStep> steps;
  ArchDescriptor final_descriptor;
  double final_ppl = 0.0;
};

/// Removes the lowest-scoring present block until the ratio reaches
/// `threshold`. Throws ExhaustionError if no blocks remain first.
std::vector<TraceStep> prune_depth(TransformerModel& model, double threshold,
                                   const CalibrationSet& calib, const MetricSpec& metric = {},
                                   int workers = 0, bool verbose = false);

/// Trims the last `group` units (or the remainder, if fewer) of the
/// lowest-scoring block of `kind` until the ratio reaches `threshold`.
/// A block trimmed to zero width becomes absent.
std::vector<TraceStep> prune_width(TransformerModel& model, BlockKind kind, double threshold,
                                   int group, const CalibrationSet& calib,
                                   const MetricSpec& metric = {}, int workers = 0,
                                   bool verbose = false);

struct PruneResult {
  TransformerModel model;  // materialized
  PruneTrace trace;
  std::vector<double> thresholds;  // per entry of stage_order
  std::optional<PermutationReport> reordering;
};

/// Runs the enabled stages in order; reordering happens once, right before
/// the first width stage. `calib` holds the depth-stage sample; width stages
/// use its first calib_samples_width sequences.
PruneResult multipruner(TransformerModel model, const PruneConfig& config,
                        const CalibrationSet& calib);

}  // namespace multipruner
