#pragma once

// Byte-level language-model training used to build test fixtures. Cross-
// entropy on next-token prediction with Adam; single-threaded and fully
// deterministic for a given seed. Only dense models are trained.

#include <filesystem>
#include <span>
#include <vector>

#include "multipruner/model.hpp"

namespace multipruner {

struct TrainConfig {
  ModelConfig model;
  std::filesystem::path corpus;  // plain bytes
  int steps = 3000;
  int batch = 8;
  int seq_len = 64;  // predicted tokens per sequence
  double lr = 3e-3;
  int warmup = 100;
  double grad_clip = 1.0;
  double init_std = 0.02;
  std::uint64_t seed = 0;
  int log_every = 0;  // 0 disables progress lines on stderr

  void validate() const;
};

struct TrainResult {
  TransformerModel model;
  std::vector<double> losses;  // mean token NLL per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_train_ppl = 0.0;  // exp of the mean loss over the last 20 steps
};

TrainResult train_toy(const TrainConfig& config);
TrainResult train_toy(const TrainConfig& config, std::span<const unsigned char> corpus);

// Differentiable mirror of the dense forward pass. Exposed for gradient and
// parity checks.

template <typename S>
struct TrainLayer {
  Matrix<S> wq, wk, wv, wo, w_gate, w_up, w_down;
  Vector<S> attn_norm, mlp_norm;
};

template <typename S>
struct TrainParams {
  Matrix<S> embed;
  std::vector<TrainLayer<S>> layers;
  Vector<S> final_norm;
  Matrix<S> lm_head;  // empty when embeddings are tied
};

template <typename S>
TrainParams<S> to_train_params(const TransformerModel& model);

TransformerModel from_train_params(const TrainParams<float>& params, const ModelConfig& config);

template <typename S>
TrainParams<S> zeros_like(const TrainParams<S>& p);

/// Every parameter tensor as (data, size), in a fixed order.
template <typename S>
std::vector<std::pair<S*, Index>> tensor_spans(TrainParams<S>& p);

/// Logits for tokens (len x vocab).
template <typename S>
Matrix<S> train_logits(const TrainParams<S>& p, const ModelConfig& config,
                       std::span<const TokenId> tokens);

/// Mean next-token NLL over all sequences; each sequence of length L+1 feeds
/// its first L tokens and predicts its last L. Adds the gradient into `grad`
/// when it is non-null.
template <typename S>
double loss_and_grad(const TrainParams<S>& p, const ModelConfig& config,
                     const std::vector<std::vector<TokenId>>& batch, TrainParams<S>* grad);

}  // namespace multipruner
