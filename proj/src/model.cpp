#include "multipruner/model.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include "multipruner/random.hpp"

namespace multipruner {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InputError("model config: " + what);
  };
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(n_layers >= 1, "n_layers must be >= 1");
  require(hidden >= 1 && n_heads >= 1 && n_kv_heads >= 1 && head_dim >= 1 &&
              intermediate >= 1,
          "dimensions must be >= 1");
  require(hidden == n_heads * head_dim, "hidden must equal n_heads * head_dim");
  require(n_heads % n_kv_heads == 0, "n_kv_heads must divide n_heads");
  require(head_dim % 2 == 0, "head_dim must be even for rotary embeddings");
  require(rope_base > 0.0 && norm_eps >= 0.0, "rope_base > 0 and norm_eps >= 0");
}

std::string to_string(BlockKind kind) { return kind == BlockKind::Attn ? "ATTN" : "MLP"; }

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "ATTN" || s == "attn") return BlockKind::Attn;
  if (s == "MLP" || s == "mlp") return BlockKind::Mlp;
  throw InputError("unknown block kind '" + s + "'");
}

std::string to_string(const BlockId& id) {
  return "layers." + std::to_string(id.layer) + "." + to_string(id.kind);
}

// ---------------------------------------------------------------------------
// ArchDescriptor

ArchDescriptor ArchDescriptor::dense(const ModelConfig& config) {
  ArchDescriptor d;
  d.layers.assign(static_cast<std::size_t>(config.n_layers),
                  LayerArch{true, true, config.n_heads, config.n_kv_heads, config.intermediate});
  return d;
}

void ArchDescriptor::validate(const ModelConfig& config) const {
  if (static_cast<int>(layers.size()) != config.n_layers) {
    throw InputError("descriptor has " + std::to_string(layers.size()) + " layers, config has " +
                     std::to_string(config.n_layers));
  }
  const int group = config.group_size();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerArch& a = layers[l];
    const std::string where = "descriptor layer " + std::to_string(l) + ": ";
    if (a.heads_kept < 0 || a.heads_kept > config.n_heads || a.kv_heads_kept < 0 ||
        a.kv_heads_kept > config.n_kv_heads || a.mlp_channels_kept < 0 ||
        a.mlp_channels_kept > config.intermediate) {
      throw InputError(where + "kept width out of range");
    }
    if (a.heads_kept != a.kv_heads_kept * group) {
      throw InputError(where + "heads must be kept in whole KV groups");
    }
    if (a.attn_present != (a.heads_kept > 0)) {
      throw InputError(where + "attention presence disagrees with kept heads");
    }
    if (a.mlp_present != (a.mlp_channels_kept > 0)) {
      throw InputError(where + "MLP presence disagrees with kept channels");
    }
  }
}

bool ArchDescriptor::present(BlockId id) const {
  const LayerArch& a = layers.at(static_cast<std::size_t>(id.layer));
  return id.kind == BlockKind::Attn ? a.attn_present : a.mlp_present;
}

int ArchDescriptor::width(BlockId id) const {
  const LayerArch& a = layers.at(static_cast<std::size_t>(id.layer));
  return id.kind == BlockKind::Attn ? a.heads_kept : a.mlp_channels_kept;
}

bool ArchDescriptor::within(const ArchDescriptor& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerArch& a = layers[l];
    const LayerArch& b = other.layers[l];
    if ((a.attn_present && !b.attn_present) || (a.mlp_present && !b.mlp_present)) return false;
    if (a.heads_kept > b.heads_kept || a.kv_heads_kept > b.kv_heads_kept ||
        a.mlp_channels_kept > b.mlp_channels_kept) {
      return false;
    }
  }
  return true;
}

std::vector<BlockId> ArchDescriptor::present_blocks() const {
  std::vector<BlockId> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].attn_present) out.push_back({static_cast<int>(l), BlockKind::Attn});
    if (layers[l].mlp_present) out.push_back({static_cast<int>(l), BlockKind::Mlp});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Construction

ActivationStats::ActivationStats(const TransformerModel& model) {
  for (const LayerWeights& lw : model.layers) {
    mlp_sq.push_back(Vector<double>::Zero(lw.w_down.cols()));
    attn_sq.push_back(Vector<double>::Zero(lw.wo.cols()));
  }
}

namespace {

Tensor random_tensor(Rng& rng, Index rows, Index cols, double stddev) {
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(stddev * rng.normal());
  return t;
}

Vector<float> random_gain(Rng& rng, Index n, double stddev) {
  Vector<float> g(n);
  for (Index i = 0; i < n; ++i) g[i] = static_cast<float>(1.0 + stddev * rng.normal());
  return g;
}

}  // namespace

TransformerModel random_model(const ModelConfig& config, std::uint64_t seed, double weight_std,
                              double gain_std) {
  config.validate();
  Rng rng(seed);
  TransformerModel m;
  m.config = config;
  const Index h = config.hidden;
  const Index q = static_cast<Index>(config.n_heads) * config.head_dim;
  const Index kv = static_cast<Index>(config.n_kv_heads) * config.head_dim;
  const Index inter = config.intermediate;
  m.embed = random_tensor(rng, config.vocab_size, h, weight_std);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.wq = random_tensor(rng, q, h, weight_std);
    lw.wk = random_tensor(rng, kv, h, weight_std);
    lw.wv = random_tensor(rng, kv, h, weight_std);
    lw.wo = random_tensor(rng, h, q, weight_std);
    lw.w_gate = random_tensor(rng, inter, h, weight_std);
    lw.w_up = random_tensor(rng, inter, h, weight_std);
    lw.w_down = random_tensor(rng, h, inter, weight_std);
    lw.attn_norm = random_gain(rng, h, gain_std);
    lw.mlp_norm = random_gain(rng, h, gain_std);
    m.layers.push_back(std::move(lw));
  }
  m.final_norm = random_gain(rng, h, gain_std);
  if (!config.tied_embeddings) m.lm_head = random_tensor(rng, config.vocab_size, h, weight_std);
  m.descriptor = ArchDescriptor::dense(config);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void check_overlay(const TransformerModel& model, const ArchDescriptor& arch) {
  if (arch.layers.size() != model.layers.size()) {
    throw InputError("descriptor layer count does not match the model");
  }
  const int hd = model.config.head_dim;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerArch& a = arch.layers[l];
    const LayerWeights& lw = model.layers[l];
    if (a.attn_present && (a.heads_kept * hd > lw.wq.rows() || a.kv_heads_kept * hd > lw.wk.rows())) {
      throw StateError("descriptor keeps more heads than layer " + std::to_string(l) + " holds");
    }
    if (a.mlp_present && a.mlp_channels_kept > lw.w_gate.rows()) {
      throw StateError("descriptor keeps more channels than layer " + std::to_string(l) + " holds");
    }
  }
}

// Causal attention over kept heads. Query row i sits at absolute position
// offset + i and attends to key rows 0..offset + i. q/k are already rotated.
Tensor attention(const Tensor& q, const MatrixView<float>& k, const MatrixView<float>& v,
                 Index offset, int heads, int group, int head_dim) {
  const Index len = q.rows();
  Tensor out(len, static_cast<Index>(heads) * head_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Matrix<double> qd = q.cast<double>();
  const Matrix<double> kd = k.cast<double>();
  const Matrix<double> vd = v.cast<double>();
  const Index n = offset + len;
  Matrix<double> p(len, n);
  for (int h = 0; h < heads; ++h) {
    const Index qc = static_cast<Index>(h) * head_dim;
    const Index kc = static_cast<Index>(h / group) * head_dim;
    p.noalias() = qd.middleCols(qc, head_dim) * kd.middleCols(kc, head_dim).transpose();
    for (Index i = 0; i < len; ++i) {
      const Index keep = offset + i + 1;
      auto row = p.row(i).head(keep).array();
      row *= scale;
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
      p.row(i).tail(n - keep).setZero();
    }
    out.middleCols(qc, head_dim) = (p * vd.middleCols(kc, head_dim)).cast<float>();
  }
  return out;
}

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  for (TokenId t : tokens) {
    if (t >= static_cast<TokenId>(cfg.vocab_size)) {
      throw InputError("forward: token id " + std::to_string(t) + " >= vocab size " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

// Shared body of forward() and forward_cached(). Tokens sit at absolute
// positions offset..offset+len-1; with a cache, keys/values are appended
// and attention sees all cached positions.
Tensor run(const TransformerModel& model, const ArchDescriptor& arch,
           std::span<const TokenId> tokens, Index offset, KvCache* cache,
           ActivationStats* stats) {
  const ModelConfig& cfg = model.config;
  const Index len = static_cast<Index>(tokens.size());
  const int hd = cfg.head_dim;
  Tensor x(len, cfg.hidden);
  for (Index i = 0; i < len; ++i) x.row(i) = model.embed.row(tokens[static_cast<std::size_t>(i)]);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& lw = model.layers[l];
    const LayerArch& a = arch.layers[l];

    if (a.attn_present) {
      const Index qw = static_cast<Index>(a.heads_kept) * hd;
      const Index kvw = static_cast<Index>(a.kv_heads_kept) * hd;
      const Tensor xn = rms_norm<float>(x, lw.attn_norm, cfg.norm_eps);
      Tensor q = linear<float>(xn, lw.wq.topRows(qw));
      Tensor k = linear<float>(xn, lw.wk.topRows(kvw));
      Tensor v = linear<float>(xn, lw.wv.topRows(kvw));
      for (Index i = 0; i < len; ++i) {
        const int pos = static_cast<int>(offset + i);
        for (int h = 0; h < a.heads_kept; ++h) {
          apply_rope(q.data() + i * qw + h * hd, hd, pos, cfg.rope_base);
        }
        for (int h = 0; h < a.kv_heads_kept; ++h) {
          apply_rope(k.data() + i * kvw + h * hd, hd, pos, cfg.rope_base);
        }
      }
      Tensor o;
      if (cache) {
        Tensor& ck = cache->keys[l];
        Tensor& cv = cache->values[l];
        if (offset + len > ck.rows()) throw InputError("forward_cached: cache capacity exceeded");
        ck.block(offset, 0, len, kvw) = k;
        cv.block(offset, 0, len, kvw) = v;
        o = attention(q, ck.topLeftCorner(offset + len, kvw), cv.topLeftCorner(offset + len, kvw),
                      offset, a.heads_kept, cfg.group_size(), hd);
      } else {
        o = attention(q, k, v, 0, a.heads_kept, cfg.group_size(), hd);
      }
      if (stats) {
        for (Index j = 0; j < qw; ++j) {
          const Vector<float> col = o.col(j);
          stats->attn_sq[l][j] += detail::dot(col.data(), col.data(), len);
        }
      }
      x += linear<float>(o, lw.wo.leftCols(qw));
    }

    if (a.mlp_present) {
      const Index c = a.mlp_channels_kept;
      const Tensor xn = rms_norm<float>(x, lw.mlp_norm, cfg.norm_eps);
      Tensor act = linear<float>(xn, lw.w_gate.topRows(c));
      const Tensor up = linear<float>(xn, lw.w_up.topRows(c));
      for (Index i = 0; i < act.size(); ++i) {
        act.data()[i] = static_cast<float>(silu(act.data()[i]) * static_cast<double>(up.data()[i]));
      }
      if (stats) {
        for (Index j = 0; j < c; ++j) {
          const Vector<float> col = act.col(j);
          stats->mlp_sq[l][j] += detail::dot(col.data(), col.data(), len);
        }
      }
      x += linear<float>(act, lw.w_down.leftCols(c));
    }
  }
  if (stats) stats->tokens += len;
  if (cache) cache->length = offset + len;

  const Tensor xn = rms_norm<float>(x, model.final_norm, cfg.norm_eps);
  return linear<float>(xn, model.output_head());
}

}  // namespace

Tensor forward(const TransformerModel& model, std::span<const TokenId> tokens) {
  return forward(model, model.descriptor, tokens);
}

Tensor forward(const TransformerModel& model, const ArchDescriptor& arch,
               std::span<const TokenId> tokens, ActivationStats* stats) {
  check_tokens(model.config, tokens);
  check_overlay(model, arch);
  return run(model, arch, tokens, 0, nullptr, stats);
}

KvCache::KvCache(const TransformerModel& model, Index capacity) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Index kvw = static_cast<Index>(model.descriptor.layers[l].kv_heads_kept) *
                      model.config.head_dim;
    keys.emplace_back(Tensor::Zero(capacity, kvw));
    values.emplace_back(Tensor::Zero(capacity, kvw));
  }
}

Tensor forward_cached(const TransformerModel& model, std::span<const TokenId> tokens,
                      KvCache& cache) {
  check_tokens(model.config, tokens);
  check_overlay(model, model.descriptor);
  if (cache.keys.size() != model.layers.size()) {
    throw InputError("forward_cached: cache was built for a different model");
  }
  return run(model, model.descriptor, tokens, cache.length, &cache, nullptr);
}

// ---------------------------------------------------------------------------
// Parameter accounting

std::int64_t unit_params(const ModelConfig& config, BlockKind kind) {
  const std::int64_t h = config.hidden;
  if (kind == BlockKind::Mlp) return 3 * h;
  return (2 * config.group_size() + 2) * static_cast<std::int64_t>(config.head_dim) * h;
}

std::int64_t count_params(const ModelConfig& config, const ArchDescriptor& arch) {
  const std::int64_t h = config.hidden;
  const std::int64_t hd = config.head_dim;
  std::int64_t total = static_cast<std::int64_t>(config.vocab_size) * h;  // embed
  if (!config.tied_embeddings) total += static_cast<std::int64_t>(config.vocab_size) * h;
  total += h;  // final norm
  for (const LayerArch& a : arch.layers) {
    total += 2 * h;  // both norms stay with the layer
    if (a.attn_present) {
      total += 2 * a.heads_kept * hd * h;     // wq, wo
      total += 2 * a.kv_heads_kept * hd * h;  // wk, wv
    }
    if (a.mlp_present) total += 3 * a.mlp_channels_kept * h;
  }
  return total;
}

std::int64_t count_params(const TransformerModel& model) {
  return count_params(model.config, model.descriptor);
}

double pruning_ratio(const ArchDescriptor& current, const ArchDescriptor& dense,
                     const ModelConfig& config) {
  const auto base = static_cast<double>(count_params(config, dense));
  const auto now = static_cast<double>(count_params(config, current));
  return (base - now) / base;
}

double pruning_ratio(const TransformerModel& model) {
  return pruning_ratio(model.descriptor, ArchDescriptor::dense(model.config), model.config);
}

// ---------------------------------------------------------------------------
// Masks

ScopedMask::ScopedMask(ArchDescriptor& arch, BlockId block)
    : arch_(&arch), block_(block), saved_(arch.layers.at(static_cast<std::size_t>(block.layer))) {}

ScopedMask::ScopedMask(ScopedMask&& other) noexcept
    : arch_(std::exchange(other.arch_, nullptr)), block_(other.block_), saved_(other.saved_) {}

ScopedMask& ScopedMask::operator=(ScopedMask&& other) noexcept {
  if (this != &other) {
    release();
    arch_ = std::exchange(other.arch_, nullptr);
    block_ = other.block_;
    saved_ = other.saved_;
  }
  return *this;
}

ScopedMask::~ScopedMask() { release(); }

void ScopedMask::release() {
  if (!arch_) return;
  LayerArch& a = arch_->layers[static_cast<std::size_t>(block_.layer)];
  if (block_.kind == BlockKind::Attn) {
    a.attn_present = saved_.attn_present;
    a.heads_kept = saved_.heads_kept;
    a.kv_heads_kept = saved_.kv_heads_kept;
  } else {
    a.mlp_present = saved_.mlp_present;
    a.mlp_channels_kept = saved_.mlp_channels_kept;
  }
  arch_ = nullptr;
}

namespace {

LayerArch& layer_of(ArchDescriptor& arch, BlockId block) {
  if (block.layer < 0 || block.layer >= static_cast<int>(arch.layers.size())) {
    throw InputError("block layer " + std::to_string(block.layer) + " out of range");
  }
  return arch.layers[static_cast<std::size_t>(block.layer)];
}

void clear_block(LayerArch& a, BlockKind kind) {
  if (kind == BlockKind::Attn) {
    a.attn_present = false;
    a.heads_kept = 0;
    a.kv_heads_kept = 0;
  } else {
    a.mlp_present = false;
    a.mlp_channels_kept = 0;
  }
}

}  // namespace

ScopedMask mask_block(ArchDescriptor& arch, BlockId block) {
  LayerArch& a = layer_of(arch, block);
  if (!arch.present(block)) throw StateError("cannot mask absent block " + to_string(block));
  ScopedMask handle(arch, block);
  clear_block(a, block.kind);
  return handle;
}

ScopedMask mask_block(TransformerModel& model, BlockId block) {
  return mask_block(model.descriptor, block);
}

void trim_width(ArchDescriptor& arch, const ModelConfig& config, BlockId block, int drop_last) {
  LayerArch& a = layer_of(arch, block);
  if (!arch.present(block)) throw StateError("cannot trim absent block " + to_string(block));
  const int kept = arch.width(block);
  if (drop_last < 0 || drop_last > kept) {
    throw InputError("cannot drop " + std::to_string(drop_last) + " units from " +
                     to_string(block) + " (kept " + std::to_string(kept) + ")");
  }
  if (block.kind == BlockKind::Attn) {
    const int group = config.group_size();
    if (drop_last % group != 0) {
      throw InputError("head trim of " + std::to_string(drop_last) +
                       " is not a whole number of KV groups (group size " +
                       std::to_string(group) + ")");
    }
    a.heads_kept -= drop_last;
    a.kv_heads_kept -= drop_last / group;
  } else {
    a.mlp_channels_kept -= drop_last;
  }
  if (arch.width(block) == 0) clear_block(a, block.kind);
}

ScopedMask mask_width(ArchDescriptor& arch, const ModelConfig& config, BlockId block,
                      int drop_last) {
  layer_of(arch, block);
  if (!arch.present(block)) throw StateError("cannot mask absent block " + to_string(block));
  ScopedMask handle(arch, block);
  trim_width(arch, config, block, drop_last);
  return handle;
}

ScopedMask mask_width(TransformerModel& model, BlockId block, int drop_last) {
  return mask_width(model.descriptor, model.config, block, drop_last);
}

// ---------------------------------------------------------------------------
// Materialization

TransformerModel materialize(const TransformerModel& model, const ArchDescriptor& arch) {
  arch.validate(model.config);
  if (!arch.within(model.descriptor)) {
    throw InputError("materialize: descriptor is not within the model's current structure");
  }
  const ModelConfig& cfg = model.config;
  const Index hd = cfg.head_dim;
  const Index h = cfg.hidden;
  TransformerModel out;
  out.config = cfg;
  out.embed = model.embed;
  out.final_norm = model.final_norm;
  out.lm_head = model.lm_head;
  out.descriptor = arch;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& src = model.layers[l];
    const LayerArch& a = arch.layers[l];
    LayerWeights dst;
    const Index qw = a.heads_kept * hd;
    const Index kvw = a.kv_heads_kept * hd;
    const Index c = a.mlp_channels_kept;
    dst.wq = src.wq.topRows(qw);
    dst.wk = src.wk.topRows(kvw);
    dst.wv = src.wv.topRows(kvw);
    dst.wo = qw > 0 ? Tensor(src.wo.leftCols(qw)) : Tensor(h, 0);
    dst.w_gate = src.w_gate.topRows(c);
    dst.w_up = src.w_up.topRows(c);
    dst.w_down = c > 0 ? Tensor(src.w_down.leftCols(c)) : Tensor(h, 0);
    dst.attn_norm = src.attn_norm;
    dst.mlp_norm = src.mlp_norm;
    out.layers.push_back(std::move(dst));
  }
  return out;
}

std::uint64_t weights_checksum(const TransformerModel& model) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto feed = [&hash](const float* data, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(float); ++i) {
      hash = (hash ^ bytes[i]) * 1099511628211ULL;
    }
  };
  feed(model.embed.data(), model.embed.size());
  for (const LayerWeights& lw : model.layers) {
    for (const Tensor* t : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.w_gate, &lw.w_up, &lw.w_down}) {
      feed(t->data(), t->size());
    }
    feed(lw.attn_norm.data(), lw.attn_norm.size());
    feed(lw.mlp_norm.data(), lw.mlp_norm.size());
  }
  feed(model.final_norm.data(), model.final_norm.size());
  feed(model.lm_head.data(), model.lm_head.size());
  return hash;
}

}  // namespace multipruner
