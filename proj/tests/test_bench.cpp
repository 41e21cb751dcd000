#include "doctest.h"
#include "fixtures.hpp"
#include "multipruner/bench.hpp"

using namespace multipruner;

TEST_CASE("KV cache error is tiny") {
  const ModelConfig c = fixture::tiny_config(2, 4, 2, 8, 40, 50);
  const TransformerModel m = random_model(c, 91, 0.3, 0.1);
  Rng rng(1);
  const auto prompt = fixture::random_tokens(rng, 20, 50);
  CHECK(kv_cache_error(m, prompt, 6) < 1e-5);
}

TEST_CASE("benchmark grid") {
  const ModelConfig c = fixture::tiny_config(2, 4, 2, 8, 40, 50);
  const TransformerModel dense = random_model(c, 92);
  TransformerModel pruned = dense;
  trim_width(pruned.descriptor, c, {1, BlockKind::Mlp}, 40);
  pruned = materialize(pruned, pruned.descriptor);
  BenchConfig cfg;
  cfg.prompt_len = 16;
  cfg.new_tokens = 4;
  cfg.batch_sizes = {1, 2, 4};
  cfg.repeats = 2;
  cfg.warmup = 0;
  const BenchReport rep = run_benchmark(dense, pruned, cfg);
  REQUIRE(rep.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rep.rows[i].batch == cfg.batch_sizes[i]);
    CHECK(rep.rows[i].dense.prefill_tokens_per_s > 0);
    CHECK(rep.rows[i].pruned.decode_tokens_per_s > 0);
  }
  CHECK(rep.workers == 1);
  const auto dir = fixture::temp_dir("bench");
  write_bench_csv(dir / "bench.csv", rep, cfg);
  CHECK(std::filesystem::exists(dir / "bench.csv"));
  cfg.batch_sizes = {};
  CHECK_THROWS_AS(run_benchmark(dense, pruned, cfg), InputError);
}
