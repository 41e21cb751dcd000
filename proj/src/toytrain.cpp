#include "multipruner/toytrain.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>

#include "multipruner/random.hpp"

namespace multipruner {

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw InputError("train: steps must be >= 1");
  if (batch < 1) throw InputError("train: batch must be >= 1");
  if (seq_len < 1) throw InputError("train: seq_len must be >= 1");
  if (!(lr > 0.0)) throw InputError("train: lr must be > 0");
  if (warmup < 0) throw InputError("train: warmup must be >= 0");
  if (model.vocab_size < 256) throw InputError("train: byte corpus needs vocab_size >= 256");
}

template <typename S>
TrainParams<S> to_train_params(const TransformerModel& m) {
  if (m.descriptor != ArchDescriptor::dense(m.config)) {
    throw StateError("training requires a dense model");
  }
  TrainParams<S> p;
  p.embed = m.embed.cast<S>();
  for (const LayerWeights& lw : m.layers) {
    TrainLayer<S> t;
    t.wq = lw.wq.cast<S>();
    t.wk = lw.wk.cast<S>();
    t.wv = lw.wv.cast<S>();
    t.wo = lw.wo.cast<S>();
    t.w_gate = lw.w_gate.cast<S>();
    t.w_up = lw.w_up.cast<S>();
    t.w_down = lw.w_down.cast<S>();
    t.attn_norm = lw.attn_norm.cast<S>();
    t.mlp_norm = lw.mlp_norm.cast<S>();
    p.layers.push_back(std::move(t));
  }
  p.final_norm = m.final_norm.cast<S>();
  p.lm_head = m.lm_head.cast<S>();
  return p;
}

TransformerModel from_train_params(const TrainParams<float>& p, const ModelConfig& config) {
  TransformerModel m;
  m.config = config;
  m.embed = p.embed;
  for (const TrainLayer<float>& t : p.layers) {
    m.layers.push_back(LayerWeights{t.wq, t.wk, t.wv, t.wo, t.w_gate, t.w_up, t.w_down,
                                    t.attn_norm, t.mlp_norm});
  }
  m.final_norm = p.final_norm;
  m.lm_head = p.lm_head;
  m.descriptor = ArchDescriptor::dense(config);
  return m;
}

template <typename S>
TrainParams<S> zeros_like(const TrainParams<S>& p) {
  TrainParams<S> z;
  z.embed = Matrix<S>::Zero(p.embed.rows(), p.embed.cols());
  for (const TrainLayer<S>& t : p.layers) {
    TrainLayer<S> l;
    l.wq = Matrix<S>::Zero(t.wq.rows(), t.wq.cols());
    l.wk = Matrix<S>::Zero(t.wk.rows(), t.wk.cols());
    l.wv = Matrix<S>::Zero(t.wv.rows(), t.wv.cols());
    l.wo = Matrix<S>::Zero(t.wo.rows(), t.wo.cols());
    l.w_gate = Matrix<S>::Zero(t.w_gate.rows(), t.w_gate.cols());
    l.w_up = Matrix<S>::Zero(t.w_up.rows(), t.w_up.cols());
    l.w_down = Matrix<S>::Zero(t.w_down.rows(), t.w_down.cols());
    l.attn_norm = Vector<S>::Zero(t.attn_norm.size());
    l.mlp_norm = Vector<S>::Zero(t.mlp_norm.size());
    z.layers.push_back(std::move(l));
  }
  z.final_norm = Vector<S>::Zero(p.final_norm.size());
  z.lm_head = Matrix<S>::Zero(p.lm_head.rows(), p.lm_head.cols());
  return z;
}

template <typename S>
std::vector<std::pair<S*, Index>> tensor_spans(TrainParams<S>& p) {
  std::vector<std::pair<S*, Index>> out;
  auto add = [&](auto& t) {
    if (t.size() > 0) out.emplace_back(t.data(), t.size());
  };
  add(p.embed);
  for (TrainLayer<S>& t : p.layers) {
    add(t.wq);
    add(t.wk);
    add(t.wv);
    add(t.wo);
    add(t.w_gate);
    add(t.w_up);
    add(t.w_down);
    add(t.attn_norm);
    add(t.mlp_norm);
  }
  add(p.final_norm);
  add(p.lm_head);
  return out;
}

namespace {

template <typename S>
Matrix<S> rms_fwd(const Matrix<S>& x, const Vector<S>& gamma, double eps, Vector<double>& r) {
  const Index d = x.cols();
  r.resize(x.rows());
  Matrix<S> y(x.rows(), d);
  for (Index i = 0; i < x.rows(); ++i) {
    const double ms = x.row(i).template cast<double>().squaredNorm() / static_cast<double>(d);
    r[i] = 1.0 / std::sqrt(ms + eps);
    for (Index j = 0; j < d; ++j) y(i, j) = static_cast<S>(gamma[j] * x(i, j) * r[i]);
  }
  return y;
}

template <typename S>
Matrix<S> rms_bwd(const Matrix<S>& x, const Vector<S>& gamma, const Vector<double>& r,
                  const Matrix<S>& dy, Vector<S>& dgamma) {
  const Index d = x.cols();
  Matrix<S> dx(x.rows(), d);
  for (Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < d; ++j) s += static_cast<double>(gamma[j] * dy(i, j) * x(i, j));
    const double r3 = r[i] * r[i] * r[i] / static_cast<double>(d);
    for (Index j = 0; j < d; ++j) {
      dgamma[j] += static_cast<S>(dy(i, j) * x(i, j) * r[i]);
      dx(i, j) = static_cast<S>(r[i] * gamma[j] * dy(i, j) - x(i, j) * r3 * s);
    }
  }
  return dx;
}

template <typename S>
void rope_rows(Matrix<S>& m, int heads, int hd, double base, int direction) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (int h = 0; h < heads; ++h) {
      apply_rope(m.data() + i * m.cols() + h * hd, hd, static_cast<int>(i), base, direction);
    }
  }
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

template <typename S>
struct LayerCache {
  Matrix<S> x_in, xn1, q, k, v, o, x_mid, xn2, g, u, a;
  Vector<double> r1, r2;
  std::vector<Matrix<S>> probs;  // per query head
};

template <typename S>
struct SeqCache {
  std::vector<LayerCache<S>> layers;
  Matrix<S> x_last, xf;
  Vector<double> rf;
};

template <typename S>
Matrix<S> forward_seq(const TrainParams<S>& p, const ModelConfig& c,
                      std::span<const TokenId> tokens, SeqCache<S>& cache) {
  const Index len = static_cast<Index>(tokens.size());
  const int hd = c.head_dim;
  const int group = c.group_size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix<S> x(len, c.hidden);
  for (Index i = 0; i < len; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    if (t >= static_cast<TokenId>(c.vocab_size)) throw InputError("train: token out of range");
    x.row(i) = p.embed.row(t);
  }
  cache.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const TrainLayer<S>& w = p.layers[l];
    LayerCache<S>& lc = cache.layers[l];
    lc.x_in = x;
    lc.xn1 = rms_fwd(x, w.attn_norm, c.norm_eps, lc.r1);
    lc.q = lc.xn1 * w.wq.transpose();
    lc.k = lc.xn1 * w.wk.transpose();
    lc.v = lc.xn1 * w.wv.transpose();
    rope_rows(lc.q, c.n_heads, hd, c.rope_base, 1);
    rope_rows(lc.k, c.n_kv_heads, hd, c.rope_base, 1);
    lc.o.resize(len, static_cast<Index>(c.n_heads) * hd);
    lc.probs.resize(static_cast<std::size_t>(c.n_heads));
    for (int h = 0; h < c.n_heads; ++h) {
      const Index qc = static_cast<Index>(h) * hd;
      const Index kc = static_cast<Index>(h / group) * hd;
      Matrix<S> sc = lc.q.middleCols(qc, hd) * lc.k.middleCols(kc, hd).transpose();
      Matrix<S>& pr = lc.probs[static_cast<std::size_t>(h)];
      pr = Matrix<S>::Zero(len, len);
      for (Index i = 0; i < len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j <= i; ++j) mx = std::max(mx, static_cast<double>(sc(i, j)) * scale);
        double sum = 0.0;
        for (Index j = 0; j <= i; ++j) sum += std::exp(static_cast<double>(sc(i, j)) * scale - mx);
        for (Index j = 0; j <= i; ++j) {
          pr(i, j) = static_cast<S>(std::exp(static_cast<double>(sc(i, j)) * scale - mx) / sum);
        }
      }
      lc.o.middleCols(qc, hd) = pr * lc.v.middleCols(kc, hd);
    }
    lc.x_mid = lc.x_in + lc.o * w.wo.transpose();
    lc.xn2 = rms_fwd(lc.x_mid, w.mlp_norm, c.norm_eps, lc.r2);
    lc.g = lc.xn2 * w.w_gate.transpose();
    lc.u = lc.xn2 * w.w_up.transpose();
    lc.a.resize(lc.g.rows(), lc.g.cols());
    for (Index i = 0; i < lc.g.size(); ++i) {
      lc.a.data()[i] = static_cast<S>(silu(static_cast<double>(lc.g.data()[i])) * lc.u.data()[i]);
    }
    x = lc.x_mid + lc.a * w.w_down.transpose();
  }
  cache.x_last = x;
  cache.xf = rms_fwd(x, p.final_norm, c.norm_eps, cache.rf);
  const Matrix<S>& head = c.tied_embeddings ? p.embed : p.lm_head;
  return cache.xf * head.transpose();
}

template <typename S>
void backward_seq(const TrainParams<S>& p, const ModelConfig& c, std::span<const TokenId> tokens,
                  const SeqCache<S>& cache, const Matrix<S>& dlogits, TrainParams<S>& g) {
  const int hd = c.head_dim;
  const int group = c.group_size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Matrix<S>& head = c.tied_embeddings ? p.embed : p.lm_head;
  Matrix<S>& dhead = c.tied_embeddings ? g.embed : g.lm_head;
  dhead.noalias() += dlogits.transpose() * cache.xf;
  Matrix<S> dx = rms_bwd(cache.x_last, p.final_norm, cache.rf, Matrix<S>(dlogits * head),
                         g.final_norm);

  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const TrainLayer<S>& w = p.layers[l];
    TrainLayer<S>& gw = g.layers[l];
    const LayerCache<S>& lc = cache.layers[l];

    // MLP
    gw.w_down.noalias() += dx.transpose() * lc.a;
    const Matrix<S> da = dx * w.w_down;
    Matrix<S> dg(da.rows(), da.cols()), du(da.rows(), da.cols());
    for (Index i = 0; i < da.size(); ++i) {
      const double gv = static_cast<double>(lc.g.data()[i]);
      const double sg = sigmoid(gv);
      du.data()[i] = static_cast<S>(da.data()[i] * gv * sg);
      dg.data()[i] = static_cast<S>(da.data()[i] * lc.u.data()[i] * sg * (1.0 + gv * (1.0 - sg)));
    }
    gw.w_gate.noalias() += dg.transpose() * lc.xn2;
    gw.w_up.noalias() += du.transpose() * lc.xn2;
    const Matrix<S> dxn2 = dg * w.w_gate + du * w.w_up;
    dx += rms_bwd(lc.x_mid, w.mlp_norm, lc.r2, dxn2, gw.mlp_norm);

    // Attention
    gw.wo.noalias() += dx.transpose() * lc.o;
    const Matrix<S> d_o = dx * w.wo;
    Matrix<S> dq = Matrix<S>::Zero(lc.q.rows(), lc.q.cols());
    Matrix<S> dk = Matrix<S>::Zero(lc.k.rows(), lc.k.cols());
    Matrix<S> dv = Matrix<S>::Zero(lc.v.rows(), lc.v.cols());
    for (int h = 0; h < c.n_heads; ++h) {
      const Index qc = static_cast<Index>(h) * hd;
      const Index kc = static_cast<Index>(h / group) * hd;
      const Matrix<S>& pr = lc.probs[static_cast<std::size_t>(h)];
      const Matrix<S> doh = d_o.middleCols(qc, hd);
      const Matrix<S> dp = doh * lc.v.middleCols(kc, hd).transpose();
      Matrix<S> ds(pr.rows(), pr.cols());
      for (Index i = 0; i < pr.rows(); ++i) {
        const double dot = (pr.row(i).array() * dp.row(i).array()).template cast<double>().sum();
        for (Index j = 0; j < pr.cols(); ++j) {
          ds(i, j) = static_cast<S>(pr(i, j) * (dp(i, j) - dot) * scale);
        }
      }
      dq.middleCols(qc, hd) += ds * lc.k.middleCols(kc, hd);
      dk.middleCols(kc, hd) += ds.transpose() * lc.q.middleCols(qc, hd);
      dv.middleCols(kc, hd) += pr.transpose() * doh;
    }
    rope_rows(dq, c.n_heads, hd, c.rope_base, -1);
    rope_rows(dk, c.n_kv_heads, hd, c.rope_base, -1);
    gw.wq.noalias() += dq.transpose() * lc.xn1;
    gw.wk.noalias() += dk.transpose() * lc.xn1;
    gw.wv.noalias() += dv.transpose() * lc.xn1;
    const Matrix<S> dxn1 = dq * w.wq + dk * w.wk + dv * w.wv;
    dx += rms_bwd(lc.x_in, w.attn_norm, lc.r1, dxn1, gw.attn_norm);
  }
  for (Index i = 0; i < dx.rows(); ++i) g.embed.row(tokens[static_cast<std::size_t>(i)]) += dx.row(i);
}

}  // namespace

template <typename S>
Matrix<S> train_logits(const TrainParams<S>& p, const ModelConfig& config,
                       std::span<const TokenId> tokens) {
  SeqCache<S> cache;
  return forward_seq(p, config, tokens, cache);
}

template <typename S>
double loss_and_grad(const TrainParams<S>& p, const ModelConfig& config,
                     const std::vector<std::vector<TokenId>>& batch, TrainParams<S>* grad) {
  std::int64_t predicted = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2) throw InputError("train: sequences need at least two tokens");
    predicted += static_cast<std::int64_t>(seq.size()) - 1;
  }
  if (predicted == 0) throw InputError("train: empty batch");
  const double inv_n = 1.0 / static_cast<double>(predicted);
  double total = 0.0;
  SeqCache<S> cache;
  for (const auto& seq : batch) {
    const std::span<const TokenId> input(seq.data(), seq.size() - 1);
    const Matrix<S> logits = forward_seq(p, config, input, cache);
    Matrix<S> dlogits(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
      const double mx = static_cast<double>(logits.row(i).maxCoeff());
      double sum = 0.0;
      for (Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(i, j)) - mx);
      const TokenId target = seq[static_cast<std::size_t>(i) + 1];
      total += std::log(sum) + mx - static_cast<double>(logits(i, target));
      for (Index j = 0; j < logits.cols(); ++j) {
        const double prob = std::exp(static_cast<double>(logits(i, j)) - mx) / sum;
        dlogits(i, j) = static_cast<S>((prob - (static_cast<Index>(target) == j ? 1.0 : 0.0)) * inv_n);
      }
    }
    if (grad) backward_seq(p, config, input, cache, dlogits, *grad);
  }
  return total * inv_n;
}

TrainResult train_toy(const TrainConfig& config, std::span<const unsigned char> corpus) {
  config.validate();
  const auto window = static_cast<std::size_t>(config.seq_len) + 1;
  if (corpus.size() < window) {
    throw InputError("train: corpus has " + std::to_string(corpus.size()) +
                     " bytes, need at least " + std::to_string(window));
  }
  const ModelConfig& mc = config.model;
  TransformerModel init = random_model(mc, config.seed, config.init_std);
  // Residual-branch outputs start smaller so the stream is not dominated early.
  const float out_scale = static_cast<float>(1.0 / std::sqrt(2.0 * mc.n_layers));
  for (LayerWeights& lw : init.layers) {
    lw.wo *= out_scale;
    lw.w_down *= out_scale;
  }
  TrainParams<float> params = to_train_params<float>(init);
  TrainParams<float> m1 = zeros_like(params);
  TrainParams<float> m2 = zeros_like(params);
  auto p_spans = tensor_spans(params);
  auto m1_spans = tensor_spans(m1);
  auto m2_spans = tensor_spans(m2);

  constexpr double beta1 = 0.9, beta2 = 0.99, adam_eps = 1e-8;
  TrainResult result;
  const std::uint64_t positions = corpus.size() - window + 1;
  for (int step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, 1, static_cast<std::uint64_t>(step)));
    std::vector<std::vector<TokenId>> batch;
    for (int b = 0; b < config.batch; ++b) {
      const auto start = static_cast<std::size_t>(rng.below(positions));
      batch.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                         corpus.begin() + static_cast<std::ptrdiff_t>(start + window));
    }
    TrainParams<float> grad = zeros_like(params);
    const double loss = loss_and_grad(params, mc, batch, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("training diverged at step " + std::to_string(step) + " (loss " +
                          std::to_string(loss) + ")");
    }
    result.losses.push_back(loss);
    if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps)) {
      std::cerr << "[train] step " << step << " loss " << loss << '\n';
    }

    auto g_spans = tensor_spans(grad);
    double norm_sq = 0.0;
    for (const auto& [data, n] : g_spans) {
      for (Index i = 0; i < n; ++i) norm_sq += static_cast<double>(data[i]) * data[i];
    }
    const double norm = std::sqrt(norm_sq);
    const double clip = config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;

    double lr = config.lr;
    if (step < config.warmup) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(config.warmup);
    } else {
      const double span = std::max(1, config.steps - config.warmup);
      const double t = static_cast<double>(step - config.warmup) / span;
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    const double bc1 = 1.0 - std::pow(beta1, step + 1);
    const double bc2 = 1.0 - std::pow(beta2, step + 1);
    for (std::size_t t = 0; t < p_spans.size(); ++t) {
      float* w = p_spans[t].first;
      float* gm = m1_spans[t].first;
      float* gv = m2_spans[t].first;
      const float* gr = g_spans[t].first;
      for (Index i = 0; i < p_spans[t].second; ++i) {
        const double gi = static_cast<double>(gr[i]) * clip;
        gm[i] = static_cast<float>(beta1 * gm[i] + (1.0 - beta1) * gi);
        gv[i] = static_cast<float>(beta2 * gv[i] + (1.0 - beta2) * gi * gi);
        const double mhat = gm[i] / bc1;
        const double vhat = gv[i] / bc2;
        w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + adam_eps));
      }
    }
  }
  result.model = from_train_params(params, mc);
  result.initial_loss = result.losses.front();
  result.final_loss = result.losses.back();
  const std::size_t tail = std::min<std::size_t>(20, result.losses.size());
  double mean = 0.0;
  for (std::size_t i = result.losses.size() - tail; i < result.losses.size(); ++i) mean += result.losses[i];
  result.final_train_ppl = std::exp(mean / static_cast<double>(tail));
  return result;
}

TrainResult train_toy(const TrainConfig& config) {
  std::ifstream in(config.corpus, std::ios::binary);
  if (!in) throw InputError("cannot open corpus " + config.corpus.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.empty()) throw InputError("corpus " + config.corpus.string() + " is empty");
  return train_toy(config, bytes);
}

template TrainParams<float> to_train_params<float>(const TransformerModel&);
template TrainParams<double> to_train_params<double>(const TransformerModel&);
template TrainParams<float> zeros_like<float>(const TrainParams<float>&);
template TrainParams<double> zeros_like<double>(const TrainParams<double>&);
template std::vector<std::pair<float*, Index>> tensor_spans<float>(TrainParams<float>&);
template std::vector<std::pair<double*, Index>> tensor_spans<double>(TrainParams<double>&);
template Matrix<float> train_logits<float>(const TrainParams<float>&, const ModelConfig&,
                                           std::span<const TokenId>);
template Matrix<double> train_logits<double>(const TrainParams<double>&, const ModelConfig&,
                                             std::span<const TokenId>);
template double loss_and_grad<float>(const TrainParams<float>&, const ModelConfig&,
                                     const std::vector<std::vector<TokenId>>&, TrainParams<float>*);
template double loss_and_grad<double>(const TrainParams<double>&, const ModelConfig&,
                                      const std::vector<std::vector<TokenId>>&,
                                      TrainParams<double>*);

}  // namespace multipruner
