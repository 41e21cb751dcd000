#pragma once

#include <optional>
#include <vector>

#include "multipruner/calib.hpp"

namespace multipruner {

enum class Stage { Depth, MlpWidth, AttnWidth };

std::string to_string(Stage stage);

struct ImportanceScore {
  BlockId block;
  double score = 0.0;  // calibration PPL with the candidate masked
  Stage stage = Stage::Depth;
};

/// A scoring candidate: remove the whole block, or trim its last `group`
/// units (channels for MLP, query heads for ATTN).
struct Candidate {
  BlockId block;
  std::optional<int> group;
};

/// PPL with `block` masked. The model's descriptor is left untouched.
ImportanceScore block_importance(const TransformerModel& model, BlockId block,
                                 const CalibrationSet& calib, const MetricSpec& metric = {});

/// PPL with the last `group` units of `block` masked.
ImportanceScore width_importance(const TransformerModel& model, BlockId block, int group,
                                 const CalibrationSet& calib, const MetricSpec& metric = {});

/// Scores every candidate against its own overlay descriptor, in candidate
/// order. workers = 1 forces serial evaluation.
std::vector<ImportanceScore> score_all(const TransformerModel& model,
                                       const std::vector<Candidate>& candidates,
                                       const CalibrationSet& calib, const MetricSpec& metric = {},
                                       int workers = 0);

/// Index of the lowest score; ties go to the earliest block in (layer, kind)
/// order.
std::size_t argmin_score(const std::vector<ImportanceScore>& scores);

}  // namespace multipruner
