#include "multipruner/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace multipruner {

std::string to_string(PruneStage stage) {
  switch (stage) {
    case PruneStage::Block:
      return "BLOCK";
    case PruneStage::Mlp:
      return "MLP";
    case PruneStage::Attn:
      return "ATTN";
  }
  return "?";
}

PruneStage prune_stage_from_string(const std::string& s) {
  if (s == "BLOCK" || s == "block") return PruneStage::Block;
  if (s == "MLP" || s == "mlp") return PruneStage::Mlp;
  if (s == "ATTN" || s == "attn") return PruneStage::Attn;
  throw InputError("unknown prune stage '" + s + "'");
}

bool PruneConfig::enabled(PruneStage stage) const {
  return std::find(stages_enabled.begin(), stages_enabled.end(), stage) != stages_enabled.end();
}

PruneConfig PruneConfig::resolved(const ModelConfig& model) const {
  PruneConfig c = *this;
  if (!(c.target_ratio >= 0.0 && c.target_ratio < 1.0)) {
    throw InputError("target_ratio must lie in [0, 1)");
  }
  derive_thresholds(c.target_ratio, c.ratio_weights);  // validates the weights
  if (c.g_mlp == 0) c.g_mlp = std::max(1, model.hidden / 4);
  if (c.g_attn == 0) c.g_attn = model.group_size();
  if (c.g_mlp < 1 || c.g_mlp > model.intermediate) {
    throw InputError("g_mlp must lie in [1, intermediate]");
  }
  if (c.g_attn < 1 || c.g_attn > model.n_heads || c.g_attn % model.group_size() != 0) {
    throw InputError("g_attn must be a positive multiple of the KV group size (" +
                     std::to_string(model.group_size()) + ")");
  }
  std::vector<PruneStage> sorted = c.stage_order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::vector<PruneStage>{PruneStage::Block, PruneStage::Mlp, PruneStage::Attn}) {
    throw InputError("stage_order must be a permutation of BLOCK, MLP, ATTN");
  }
  for (PruneStage s : c.stages_enabled) {
    if (std::count(c.stages_enabled.begin(), c.stages_enabled.end(), s) != 1) {
      throw InputError("stages_enabled lists a stage twice");
    }
  }
  if (c.stages_enabled.empty()) throw InputError("at least one stage must be enabled");
  if (c.calib_samples_depth < 1 || c.calib_samples_width < 1) {
    throw InputError("calibration sample counts must be >= 1");
  }
  return c;
}

std::array<double, 3> derive_thresholds(double tau, const std::array<double, 3>& w) {
  if (w[0] < 0 || w[1] < 0 || w[2] < 0) throw InputError("ratio weights must be nonnegative");
  if (std::abs(w[0] + w[1] + w[2] - 1.0) > 1e-9) throw InputError("ratio weights must sum to 1");
  const double t1 = tau * w[0];
  const double t2 = t1 + tau * w[1];
  return {t1, t2, tau};
}

std::vector<double> stage_thresholds(const PruneConfig& config) {
  const auto& order = config.stage_order;
  std::vector<double> weights;
  double total = 0.0;
  std::size_t last_enabled = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool on = config.enabled(order[i]);
    weights.push_back(on ? config.ratio_weights[static_cast<std::size_t>(order[i])] : 0.0);
    total += weights.back();
    if (on) last_enabled = i;
  }
  const bool rescale = config.stages_enabled.size() < order.size();
  if (rescale && total <= 0.0) throw InputError("enabled stages carry zero ratio weight");
  std::vector<double> out;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    cumulative += config.target_ratio * (rescale ? weights[i] / total : weights[i]);
    out.push_back(i >= last_enabled ? config.target_ratio : cumulative);
  }
  return out;
}

namespace {

void log_step(bool verbose, const TraceStep& s) {
  if (!verbose) return;
  std::cerr << "[" << to_string(s.stage) << "] " << to_string(s.block);
  if (s.group > 0) std::cerr << " -" << s.group;
  std::cerr << "  ppl=" << s.score << "  ratio=" << s.ratio_after << '\n';
}

}  // namespace

std::vector<TraceStep> prune_depth(TransformerModel& model, double threshold,
                                   const CalibrationSet& calib, const MetricSpec& metric,
                                   int workers, bool verbose) {
  std::vector<TraceStep> steps;
  double ratio = pruning_ratio(model);
  while (ratio < threshold) {
    const std::vector<BlockId> blocks = model.descriptor.present_blocks();
    if (blocks.empty()) {
      throw ExhaustionError("depth stage ran out of blocks at ratio " + std::to_string(ratio) +
                            " before reaching " + std::to_string(threshold));
    }
    std::vector<Candidate> candidates;
    for (BlockId b : blocks) candidates.push_back({b, std::nullopt});
    const auto scores = score_all(model, candidates, calib, metric, workers);
    const ImportanceScore& best = scores[argmin_score(scores)];
    trim_width(model.descriptor, model.config, best.block, model.descriptor.width(best.block));
    ratio = pruning_ratio(model);
    steps.push_back({PruneStage::Block, best.block, 0, best.score, ratio});
    log_step(verbose, steps.back());
  }
  return steps;
}

std::vector<TraceStep> prune_width(TransformerModel& model, BlockKind kind, double threshold,
                                   int group, const CalibrationSet& calib,
                                   const MetricSpec& metric, int workers, bool verbose) {
  if (group < 1) throw InputError("prune_width: group must be >= 1");
  const PruneStage stage = kind == BlockKind::Mlp ? PruneStage::Mlp : PruneStage::Attn;
  std::vector<TraceStep> steps;
  double ratio = pruning_ratio(model);
  while (ratio < threshold) {
    std::vector<Candidate> candidates;
    for (BlockId b : model.descriptor.present_blocks()) {
      if (b.kind == kind) candidates.push_back({b, std::min(group, model.descriptor.width(b))});
    }
    if (candidates.empty()) {
      throw ExhaustionError(to_string(kind) + " width stage ran out of blocks at ratio " +
                            std::to_string(ratio) + " before reaching " +
                            std::to_string(threshold));
    }
    const auto scores = score_all(model, candidates, calib, metric, workers);
    const std::size_t best = argmin_score(scores);
    const int trimmed = *candidates[best].group;
    trim_width(model.descriptor, model.config, scores[best].block, trimmed);
    ratio = pruning_ratio(model);
    steps.push_back({stage, scores[best].block, trimmed, scores[best].score, ratio});
    log_step(verbose, steps.back());
  }
  return steps;
}

PruneResult multipruner(TransformerModel model, const PruneConfig& config_in,
                        const CalibrationSet& calib) {
  const PruneConfig config = config_in.resolved(model.config);
  if (calib.sequences.empty()) throw InputError("multipruner: empty calibration set");
  const CalibrationSet depth_calib = calib.head(static_cast<std::size_t>(config.calib_samples_depth));
  const CalibrationSet width_calib = calib.head(static_cast<std::size_t>(config.calib_samples_width));
  const MetricSpec metric;

  PruneResult result;
  result.thresholds = stage_thresholds(config);
  if (config.target_ratio == 0.0) {
    result.trace.final_descriptor = model.descriptor;
    result.model = std::move(model);
    result.trace.final_ppl = perplexity(result.model, depth_calib, config.workers);
    return result;
  }
  bool reordered = false;
  for (std::size_t i = 0; i < config.stage_order.size(); ++i) {
    const PruneStage stage = config.stage_order[i];
    if (!config.enabled(stage)) continue;
    const double threshold = result.thresholds[i];
    std::vector<TraceStep> steps;
    if (stage == PruneStage::Block) {
      steps = prune_depth(model, threshold, depth_calib, metric, config.workers, config.verbose);
    } else {
      if (!reordered) {
        result.reordering = apply_reordering(model, config.reorder_metric, &width_calib);
        reordered = true;
      }
      const BlockKind kind = stage == PruneStage::Mlp ? BlockKind::Mlp : BlockKind::Attn;
      const int group = stage == PruneStage::Mlp ? config.g_mlp : config.g_attn;
      steps = prune_width(model, kind, threshold, group, width_calib, metric, config.workers,
                          config.verbose);
    }
    result.trace.steps.insert(result.trace.steps.end(), steps.begin(), steps.end());
  }
  result.trace.final_descriptor = model.descriptor;
  result.model = materialize(model, model.descriptor);
  result.trace.final_ppl = perplexity(result.model, depth_calib, config.workers);
  return result;
}

}  // namespace multipruner
