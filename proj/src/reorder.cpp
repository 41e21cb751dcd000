#include "multipruner/reorder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "multipruner/parallel.hpp"

namespace multipruner {

std::string to_string(ReorderMetric metric) {
  switch (metric) {
    case ReorderMetric::L1Norm:
      return "L1_NORM";
    case ReorderMetric::Wanda:
      return "WANDA";
    case ReorderMetric::None:
      return "NONE";
  }
  return "?";
}

ReorderMetric reorder_metric_from_string(const std::string& s) {
  if (s == "L1_NORM" || s == "l1" || s == "L1") return ReorderMetric::L1Norm;
  if (s == "WANDA" || s == "wanda") return ReorderMetric::Wanda;
  if (s == "NONE" || s == "none") return ReorderMetric::None;
  throw InputError("unknown reorder metric '" + s + "'");
}

namespace {

double abs_sum_row(const Tensor& t, Index row, Index begin, Index count) {
  double s = 0.0;
  for (Index j = begin; j < begin + count; ++j) s += std::abs(static_cast<double>(t(row, j)));
  return s;
}

double abs_sum_col(const Tensor& t, Index col) {
  double s = 0.0;
  for (Index i = 0; i < t.rows(); ++i) s += std::abs(static_cast<double>(t(i, col)));
  return s;
}

double abs_sum_rows(const Tensor& t, Index first, Index count) {
  double s = 0.0;
  for (Index i = first; i < first + count; ++i) s += abs_sum_row(t, i, 0, t.cols());
  return s;
}

void require_stats(ReorderMetric metric, const Vector<double>* input_sq, Index needed) {
  if (metric != ReorderMetric::Wanda) return;
  if (!input_sq) throw InputError("WANDA reordering needs calibration activations");
  if (input_sq->size() < needed) throw InputError("WANDA activation statistics too short");
}

std::vector<int> descending_order(const Vector<double>& scores) {
  std::vector<int> perm(static_cast<std::size_t>(scores.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return perm;
}

}  // namespace

Vector<double> mlp_channel_scores(const LayerWeights& layer, int channels, ReorderMetric metric,
                                  const Vector<double>* input_sq) {
  require_stats(metric, input_sq, channels);
  Vector<double> scores = Vector<double>::Zero(channels);
  for (Index c = 0; c < channels; ++c) {
    switch (metric) {
      case ReorderMetric::L1Norm:
        scores[c] = abs_sum_row(layer.w_gate, c, 0, layer.w_gate.cols()) +
                    abs_sum_row(layer.w_up, c, 0, layer.w_up.cols()) +
                    abs_sum_col(layer.w_down, c);
        break;
      case ReorderMetric::Wanda:
        scores[c] = abs_sum_col(layer.w_down, c) * std::sqrt((*input_sq)[c]);
        break;
      case ReorderMetric::None:
        break;
    }
  }
  return scores;
}

Vector<double> head_scores(const LayerWeights& layer, const ModelConfig& config, int kv_groups,
                           ReorderMetric metric, const Vector<double>* input_sq) {
  const int hd = config.head_dim;
  const int group = config.group_size();
  require_stats(metric, input_sq, static_cast<Index>(kv_groups) * group * hd);
  Vector<double> scores = Vector<double>::Zero(kv_groups);
  for (int g = 0; g < kv_groups; ++g) {
    double s = 0.0;
    for (int r = 0; r < group; ++r) {
      const Index first = static_cast<Index>(g * group + r) * hd;
      for (Index col = first; col < first + hd; ++col) {
        if (metric == ReorderMetric::L1Norm) {
          s += abs_sum_col(layer.wo, col);
        } else if (metric == ReorderMetric::Wanda) {
          s += abs_sum_col(layer.wo, col) * std::sqrt((*input_sq)[col]);
        }
      }
      if (metric == ReorderMetric::L1Norm) s += abs_sum_rows(layer.wq, first, hd);
    }
    if (metric == ReorderMetric::L1Norm) {
      s += abs_sum_rows(layer.wk, static_cast<Index>(g) * hd, hd);
      s += abs_sum_rows(layer.wv, static_cast<Index>(g) * hd, hd);
    }
    scores[g] = s;
  }
  return scores;
}

void permute_mlp_channels(LayerWeights& layer, const std::vector<int>& perm) {
  const Index n = static_cast<Index>(perm.size());
  const Tensor gate = layer.w_gate.topRows(n);
  const Tensor up = layer.w_up.topRows(n);
  const Tensor down = layer.w_down.leftCols(n);
  for (Index i = 0; i < n; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    layer.w_gate.row(i) = gate.row(src);
    layer.w_up.row(i) = up.row(src);
    layer.w_down.col(i) = down.col(src);
  }
}

void permute_kv_groups(LayerWeights& layer, const ModelConfig& config,
                       const std::vector<int>& perm) {
  const Index hd = config.head_dim;
  const Index group = config.group_size();
  const Index n = static_cast<Index>(perm.size());
  const Tensor wq = layer.wq.topRows(n * group * hd);
  const Tensor wk = layer.wk.topRows(n * hd);
  const Tensor wv = layer.wv.topRows(n * hd);
  const Tensor wo = layer.wo.leftCols(n * group * hd);
  for (Index i = 0; i < n; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    layer.wk.middleRows(i * hd, hd) = wk.middleRows(src * hd, hd);
    layer.wv.middleRows(i * hd, hd) = wv.middleRows(src * hd, hd);
    const Index qw = group * hd;
    layer.wq.middleRows(i * qw, qw) = wq.middleRows(src * qw, qw);
    layer.wo.middleCols(i * qw, qw) = wo.middleCols(src * qw, qw);
  }
}

PermutationReport apply_reordering(TransformerModel& model, ReorderMetric metric,
                                   const CalibrationSet* calib) {
  PermutationReport report;
  report.metric = metric;
  std::optional<ActivationStats> stats;
  if (metric == ReorderMetric::Wanda) {
    if (!calib || calib->sequences.empty()) {
      throw InputError("WANDA reordering needs a calibration set");
    }
    stats.emplace(model);
    for (const auto& seq : calib->sequences) forward(model, model.descriptor, seq, &*stats);
  }

  const std::size_t n_layers = model.layers.size();
  report.layers.resize(n_layers);
  parallel_for(n_layers, [&](std::size_t l) {
    LayerWeights& lw = model.layers[l];
    const LayerArch& a = model.descriptor.layers[l];
    LayerPermutation& lp = report.layers[l];
    lp.layer = static_cast<int>(l);
    if (a.mlp_present) {
      const Vector<double> s = mlp_channel_scores(lw, a.mlp_channels_kept, metric,
                                                  stats ? &stats->mlp_sq[l] : nullptr);
      lp.channel_perm = descending_order(s);
      permute_mlp_channels(lw, lp.channel_perm);
    }
    if (a.attn_present) {
      const Vector<double> s = head_scores(lw, model.config, a.kv_heads_kept, metric,
                                           stats ? &stats->attn_sq[l] : nullptr);
      lp.head_perm = descending_order(s);
      permute_kv_groups(lw, model.config, lp.head_perm);
    }
  });
  return report;
}

}  // namespace multipruner
