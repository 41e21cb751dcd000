#include "multipruner/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "multipruner/random.hpp"

namespace multipruner {

void BenchConfig::validate() const {
  if (prompt_len < 1 || new_tokens < 1) throw InputError("benchmark: prompt_len and new_tokens must be >= 1");
  if (batch_sizes.empty()) throw InputError("benchmark: no batch sizes");
  for (int b : batch_sizes) {
    if (b < 1) throw InputError("benchmark: batch sizes must be >= 1");
  }
  if (repeats < 1 || warmup < 0) throw InputError("benchmark: repeats >= 1 and warmup >= 0 required");
}

namespace {

using Clock = std::chrono::steady_clock;

TokenId argmax_last(const Tensor& logits) {
  Index best = 0;
  logits.row(logits.rows() - 1).maxCoeff(&best);
  return static_cast<TokenId>(best);
}

std::vector<std::vector<TokenId>> random_prompts(int count, int len, int vocab, std::uint64_t seed) {
  std::vector<std::vector<TokenId>> out;
  for (int b = 0; b < count; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<TokenId> p;
    for (int i = 0; i < len; ++i) p.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
    out.push_back(std::move(p));
  }
  return out;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::pair<double, double> time_once(const TransformerModel& model,
                                    const std::vector<std::vector<TokenId>>& prompts,
                                    int new_tokens) {
  double prefill = 0.0;
  double decode = 0.0;
  for (const auto& prompt : prompts) {
    auto t0 = Clock::now();
    Tensor full = forward(model, prompt);
    prefill += seconds_since(t0);

    KvCache cache(model, static_cast<Index>(prompt.size()) + new_tokens);
    Tensor logits = forward_cached(model, prompt, cache);
    TokenId next = argmax_last(logits);
    t0 = Clock::now();
    for (int s = 0; s < new_tokens; ++s) {
      logits = forward_cached(model, std::span<const TokenId>(&next, 1), cache);
      next = argmax_last(logits);
    }
    decode += seconds_since(t0);
  }
  return {prefill, decode};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double kv_cache_error(const TransformerModel& model, std::span<const TokenId> prompt,
                      int new_tokens) {
  KvCache cache(model, static_cast<Index>(prompt.size()) + new_tokens);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<Tensor> rows;
  Tensor logits = forward_cached(model, prompt, cache);
  rows.push_back(logits);
  for (int s = 0; s < new_tokens; ++s) {
    const TokenId next = argmax_last(logits);
    seq.push_back(next);
    logits = forward_cached(model, std::span<const TokenId>(&next, 1), cache);
    rows.push_back(logits);
  }
  const Tensor full = forward(model, std::span<const TokenId>(seq.data(), seq.size()));
  double err = 0.0;
  Index r = 0;
  for (const Tensor& block : rows) {
    err = std::max(err, static_cast<double>((full.middleRows(r, block.rows()) - block).cwiseAbs().maxCoeff()));
    r += block.rows();
  }
  return err;
}

BenchReport run_benchmark(const TransformerModel& dense, const TransformerModel& pruned,
                          const BenchConfig& config) {
  config.validate();
  if (dense.config.vocab_size != pruned.config.vocab_size) {
    throw InputError("benchmark: models have different vocabularies");
  }
  BenchReport report;
  const auto check_prompt = random_prompts(1, config.prompt_len, dense.config.vocab_size, config.seed);
  report.dense_cache_error = kv_cache_error(dense, check_prompt[0], config.new_tokens);
  report.pruned_cache_error = kv_cache_error(pruned, check_prompt[0], config.new_tokens);
  for (double e : {report.dense_cache_error, report.pruned_cache_error}) {
    if (!(e <= config.cache_tolerance)) {
      throw StateError("KV-cache logits differ from full recomputation by " + std::to_string(e));
    }
  }

  for (int b : config.batch_sizes) {
    const auto prompts = random_prompts(b, config.prompt_len, dense.config.vocab_size,
                                        derive_seed(config.seed, static_cast<std::uint64_t>(b)));
    for (int w = 0; w < config.warmup; ++w) {
      time_once(dense, prompts, config.new_tokens);
      time_once(pruned, prompts, config.new_tokens);
    }
    std::vector<double> dp, dd, pp, pd;
    for (int r = 0; r < config.repeats; ++r) {
      const auto [a, c] = time_once(dense, prompts, config.new_tokens);
      const auto [x, y] = time_once(pruned, prompts, config.new_tokens);
      dp.push_back(a);
      dd.push_back(c);
      pp.push_back(x);
      pd.push_back(y);
    }
    BenchRow row;
    row.batch = b;
    auto fill = [&](BenchTiming& t, double prefill, double decode) {
      t.prefill_seconds = prefill;
      t.decode_seconds = decode;
      t.prefill_tokens_per_s = static_cast<double>(b) * config.prompt_len / prefill;
      t.decode_tokens_per_s = static_cast<double>(b) * config.new_tokens / decode;
    };
    fill(row.dense, median(dp), median(dd));
    fill(row.pruned, median(pp), median(pd));
    row.prefill_speedup = row.pruned.prefill_tokens_per_s / row.dense.prefill_tokens_per_s;
    row.decode_speedup = row.pruned.decode_tokens_per_s / row.dense.decode_tokens_per_s;
    report.rows.push_back(row);
  }
  return report;
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report,
                     const BenchConfig& config) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "batch,prompt_len,new_tokens,workers,dense_prefill_tps,pruned_prefill_tps,"
         "prefill_speedup,dense_decode_tps,pruned_decode_tps,decode_speedup\n";
  for (const BenchRow& r : report.rows) {
    out << r.batch << ',' << config.prompt_len << ',' << config.new_tokens << ',' << report.workers
        << ',' << r.dense.prefill_tokens_per_s << ',' << r.pruned.prefill_tokens_per_s << ','
        << r.prefill_speedup << ',' << r.dense.decode_tokens_per_s << ','
        << r.pruned.decode_tokens_per_s << ',' << r.decode_speedup << '\n';
  }
}

}  // namespace multipruner
