#include "multipruner/importance.hpp"

#include "multipruner/parallel.hpp"

namespace multipruner {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Depth:
      return "DEPTH";
    case Stage::MlpWidth:
      return "MLP_WIDTH";
    case Stage::AttnWidth:
      return "ATTN_WIDTH";
  }
  return "?";
}

namespace {

ImportanceScore score_candidate(const TransformerModel& model, const Candidate& c,
                                const CalibrationSet& calib, const MetricSpec& metric,
                                int workers) {
  ArchDescriptor overlay = model.descriptor;
  ImportanceScore s;
  s.block = c.block;
  if (c.group) {
    ScopedMask mask = mask_width(overlay, model.config, c.block, *c.group);
    s.stage = c.block.kind == BlockKind::Mlp ? Stage::MlpWidth : Stage::AttnWidth;
    s.score = evaluate_metric(model, overlay, calib, metric, workers);
  } else {
    ScopedMask mask = mask_block(overlay, c.block);
    s.stage = Stage::Depth;
    s.score = evaluate_metric(model, overlay, calib, metric, workers);
  }
  return s;
}

}  // namespace

ImportanceScore block_importance(const TransformerModel& model, BlockId block,
                                 const CalibrationSet& calib, const MetricSpec& metric) {
  return score_candidate(model, Candidate{block, std::nullopt}, calib, metric, 0);
}

ImportanceScore width_importance(const TransformerModel& model, BlockId block, int group,
                                 const CalibrationSet& calib, const MetricSpec& metric) {
  return score_candidate(model, Candidate{block, group}, calib, metric, 0);
}

std::vector<ImportanceScore> score_all(const TransformerModel& model,
                                       const std::vector<Candidate>& candidates,
                                       const CalibrationSet& calib, const MetricSpec& metric,
                                       int workers) {
  std::vector<ImportanceScore> out(candidates.size());
  // Parallelism goes across candidates; each candidate scores serially.
  parallel_for(
      candidates.size(),
      [&](std::size_t i) { out[i] = score_candidate(model, candidates[i], calib, metric, 1); },
      workers);
  return out;
}

std::size_t argmin_score(const std::vector<ImportanceScore>& scores) {
  if (scores.empty()) throw InputError("argmin_score: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].score < scores[best].score ||
        (scores[i].score == scores[best].score && scores[i].block < scores[best].block)) {
      best = i;
    }
  }
  return best;
}

}  // namespace multipruner
