#pragma once

// Independent reference computations. Everything here is written
// straight-line in double (or long double) and shares no code with the
// library beyond the data types.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "multipruner/calib.hpp"
#include "multipruner/model.hpp"
#include "multipruner/nsga2.hpp"

namespace oracle {

using namespace multipruner;
using DMat = std::vector<std::vector<double>>;

inline DMat to_dmat(const Tensor& t) {
  DMat m(static_cast<std::size_t>(t.rows()), std::vector<double>(static_cast<std::size_t>(t.cols())));
  for (Index i = 0; i < t.rows(); ++i)
    for (Index j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline DMat matmul(const DMat& a, const DMat& b) {
  DMat c(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < c[i].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline std::vector<double> rms(const std::vector<double>& x, const Vector<float>& g, double eps) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[static_cast<Index>(i)] * x[i] / std::sqrt(ms + eps);
  return y;
}

// First `rows` rows of w applied to x.
inline std::vector<double> proj(const Tensor& w, const std::vector<double>& x, Index rows) {
  std::vector<double> y(static_cast<std::size_t>(rows), 0.0);
  for (Index r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += w(r, static_cast<Index>(c)) * x[c];
  return y;
}

// w restricted to its first `cols` columns, applied to x (length cols).
inline std::vector<double> proj_cols(const Tensor& w, const std::vector<double>& x) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Index r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += w(r, static_cast<Index>(c)) * x[c];
  return y;
}

inline void rope(double* v, int hd, int pos, double base) {
  const int half = hd / 2;
  for (int i = 0; i < half; ++i) {
    const double ang = pos * std::pow(base, -2.0 * i / hd);
    const double a = v[i], b = v[i + half];
    v[i] = a * std::cos(ang) - b * std::sin(ang);
    v[i + half] = b * std::cos(ang) + a * std::sin(ang);
  }
}

/// Logits for `tokens` under descriptor `arch`, token by token.
inline DMat forward(const TransformerModel& m, const ArchDescriptor& arch,
                    const std::vector<TokenId>& tokens) {
  const ModelConfig& c = m.config;
  const std::size_t n = tokens.size();
  const int hd = c.head_dim;
  const int group = c.n_heads / c.n_kv_heads;
  DMat x(n);
  for (std::size_t t = 0; t < n; ++t)
    for (int j = 0; j < c.hidden; ++j) x[t].push_back(m.embed(tokens[t], j));
  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& w = m.layers[l];
    const LayerArch& a = arch.layers[l];
    if (a.attn_present) {
      DMat q(n), k(n), v(n);
      for (std::size_t t = 0; t < n; ++t) {
        const auto xn = rms(x[t], w.attn_norm, c.norm_eps);
        q[t] = proj(w.wq, xn, a.heads_kept * hd);
        k[t] = proj(w.wk, xn, a.kv_heads_kept * hd);
        v[t] = proj(w.wv, xn, a.kv_heads_kept * hd);
        for (int h = 0; h < a.heads_kept; ++h) rope(q[t].data() + h * hd, hd, static_cast<int>(t), c.rope_base);
        for (int h = 0; h < a.kv_heads_kept; ++h) rope(k[t].data() + h * hd, hd, static_cast<int>(t), c.rope_base);
      }
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> o(static_cast<std::size_t>(a.heads_kept * hd), 0.0);
        for (int h = 0; h < a.heads_kept; ++h) {
          const int kh = h / group;
          std::vector<double> s(t + 1);
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j <= t; ++j) {
            double d = 0.0;
            for (int e = 0; e < hd; ++e) d += q[t][h * hd + e] * k[j][kh * hd + e];
            s[j] = d / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, s[j]);
          }
          double z = 0.0;
          for (double& e : s) z += (e = std::exp(e - mx));
          for (std::size_t j = 0; j <= t; ++j)
            for (int e = 0; e < hd; ++e) o[h * hd + e] += s[j] / z * v[j][kh * hd + e];
        }
        const auto y = proj_cols(w.wo, o);
        for (int j = 0; j < c.hidden; ++j) x[t][j] += y[j];
      }
    }
    if (a.mlp_present) {
      for (std::size_t t = 0; t < n; ++t) {
        const auto xn = rms(x[t], w.mlp_norm, c.norm_eps);
        const auto g = proj(w.w_gate, xn, a.mlp_channels_kept);
        const auto u = proj(w.w_up, xn, a.mlp_channels_kept);
        std::vector<double> act(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) act[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
        const auto y = proj_cols(w.w_down, act);
        for (int j = 0; j < c.hidden; ++j) x[t][j] += y[j];
      }
    }
  }
  DMat logits(n);
  const Tensor& head = c.tied_embeddings ? m.embed : m.lm_head;
  for (std::size_t t = 0; t < n; ++t) logits[t] = proj(head, rms(x[t], m.final_norm, c.norm_eps), c.vocab_size);
  return logits;
}

inline DMat forward(const TransformerModel& m, const std::vector<TokenId>& tokens) {
  return forward(m, m.descriptor, tokens);
}

/// Perplexity from reference logits with long-double log-sum-exp.
inline double perplexity(const TransformerModel& m, const ArchDescriptor& arch,
                         const CalibrationSet& calib) {
  long double nll = 0.0L;
  long double count = 0.0L;
  for (const auto& seq : calib.sequences) {
    const DMat lg = forward(m, arch, seq);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      long double mx = -std::numeric_limits<long double>::infinity();
      for (double v : lg[t]) mx = std::max<long double>(mx, v);
      long double z = 0.0L;
      for (double v : lg[t]) z += std::exp(static_cast<long double>(v) - mx);
      nll += mx + std::log(z) - lg[t][seq[t + 1]];
      count += 1.0L;
    }
  }
  return static_cast<double>(std::exp(nll / count));
}

inline double max_abs_diff(const Tensor& a, const DMat& b) {
  double e = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) e = std::max(e, std::abs(a(i, j) - b[i][j]));
  return e;
}

/// Fronts by definition: peel off the points no remaining point dominates.
inline std::vector<std::vector<std::size_t>> fronts(const std::vector<std::vector<double>>& pts) {
  auto dom = [](const std::vector<double>& a, const std::vector<double>& b) {
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] > b[i]) return false;
      strict = strict || a[i] < b[i];
    }
    return strict;
  };
  std::vector<bool> done(pts.size(), false);
  std::vector<std::vector<std::size_t>> out;
  std::size_t left = pts.size();
  while (left > 0) {
    std::vector<std::size_t> f;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (done[i]) continue;
      bool dominated = false;
      for (std::size_t j = 0; j < pts.size() && !dominated; ++j) dominated = !done[j] && dom(pts[j], pts[i]);
      if (!dominated) f.push_back(i);
    }
    for (std::size_t i : f) done[i] = true;
    left -= f.size();
    out.push_back(f);
  }
  return out;
}

/// Textbook crowding distance over one front (ascending sort per objective,
/// boundaries infinite, interior gaps normalized by the objective range).
inline std::vector<double> crowding(const std::vector<std::vector<double>>& pts,
                                    const std::vector<std::size_t>& front) {
  const std::size_t n = front.size();
  std::vector<double> d(n, 0.0);
  if (n <= 2) return std::vector<double>(n, std::numeric_limits<double>::infinity());
  for (std::size_t m = 0; m < pts[front[0]].size(); ++m) {
    std::vector<std::pair<double, std::size_t>> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back({pts[front[i]][m], i});
    std::stable_sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.first < b.first; });
    const double range = s.back().first - s.front().first;
    if (range <= 0.0) continue;
    d[s.front().second] = d[s.back().second] = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < n; ++i) d[s[i].second] += (s[i + 1].first - s[i - 1].first) / range;
  }
  return d;
}

/// One exhaustive greedy round: every candidate is scored on a freshly
/// materialized model; returns the index of the lowest PPL with ties to the
/// earliest candidate.
inline std::size_t exhaustive_argmin(const TransformerModel& m,
                                     const std::vector<ArchDescriptor>& candidates,
                                     const CalibrationSet& calib, std::vector<double>* ppls = nullptr) {
  std::size_t best = 0;
  double best_ppl = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TransformerModel small = materialize(m, candidates[i]);
    const double p = multipruner::perplexity(small, calib, 1);
    if (ppls) ppls->push_back(p);
    if (p < best_ppl) {
      best_ppl = p;
      best = i;
    }
  }
  return best;
}

struct Choice {
  BlockId block;
  int group = 0;  // 0 for whole-block removal
  bool operator==(const Choice&) const = default;
};

/// Greedy depth stage by exhaustive search over materialized candidates.
inline std::vector<Choice> greedy_depth(TransformerModel m, double threshold, const CalibrationSet& c) {
  std::vector<Choice> out;
  while (pruning_ratio(m) < threshold) {
    const auto blocks = m.descriptor.present_blocks();
    std::vector<ArchDescriptor> cands;
    for (BlockId b : blocks) {
      ArchDescriptor d = m.descriptor;
      trim_width(d, m.config, b, d.width(b));
      cands.push_back(d);
    }
    const std::size_t i = exhaustive_argmin(m, cands, c);
    out.push_back({blocks[i], 0});
    m.descriptor = cands[i];
  }
  return out;
}

/// Greedy width stage: every present block of `kind` proposes dropping its
/// last min(g, kept) units.
inline std::vector<Choice> greedy_width(TransformerModel m, BlockKind kind, double threshold, int g,
                                        const CalibrationSet& c) {
  std::vector<Choice> out;
  while (pruning_ratio(m) < threshold) {
    std::vector<Choice> choices;
    std::vector<ArchDescriptor> cands;
    for (BlockId b : m.descriptor.present_blocks()) {
      if (b.kind != kind) continue;
      ArchDescriptor d = m.descriptor;
      const int drop = std::min(g, d.width(b));
      trim_width(d, m.config, b, drop);
      choices.push_back({b, drop});
      cands.push_back(d);
    }
    const std::size_t i = exhaustive_argmin(m, cands, c);
    out.push_back(choices[i]);
    m.descriptor = cands[i];
  }
  return out;
}

}  // namespace oracle
