// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. The trained fixture model is cached in
// MP_FIXTURE_DIR and reused across runs.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"
#include "multipruner/bench.hpp"
#include "multipruner/checkpoint.hpp"
#include "multipruner/cli.hpp"
#include "multipruner/config_io.hpp"
#include "multipruner/evo.hpp"
#include "multipruner/pruner.hpp"
#include "oracles.hpp"

using namespace multipruner;
namespace fs = std::filesystem;

namespace {

constexpr int kSeqLen = 128;
constexpr int kDepthSamples = 64;
constexpr int kWidthSamples = 32;
constexpr int kHeldSamples = 64;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << name << ": " << o.detail << " ["
            << std::fixed << std::setprecision(1) << secs << "s]" << std::defaultfloat << std::endl;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Trained fixture: 6 layers, hidden 64, byte vocabulary.

struct Fixture {
  fs::path dir;
  TransformerModel model;
  CalibrationSet calib;  // depth sample; its head is the width sample
  CalibrationSet held;
};

ModelConfig fixture_config() {
  ModelConfig c;
  c.vocab_size = 256;
  c.n_layers = 6;
  c.hidden = 64;
  c.n_heads = 8;
  c.n_kv_heads = 8;
  c.head_dim = 8;
  c.intermediate = 192;
  return c;
}

const Fixture& fixture_model() {
  static const Fixture f = [] {
    Fixture f;
    f.dir = fs::path(MP_FIXTURE_DIR);
    fs::create_directories(f.dir);
    const fs::path train_bytes = f.dir / "train.bin";
    const fs::path held_bytes = f.dir / "heldout.bin";
    if (!fs::exists(train_bytes)) write_bytes(train_bytes, synthetic_corpus(1 << 20, 1));
    if (!fs::exists(held_bytes)) write_bytes(held_bytes, synthetic_corpus(200 * 1024, 2));
    const fs::path calib_tok = f.dir / "calib.tok";
    const fs::path held_tok = f.dir / "heldout.tok";
    if (!fs::exists(calib_tok)) write_token_file(calib_tok, bytes_to_sequences(read_bytes(train_bytes), kSeqLen, kSeqLen));
    if (!fs::exists(held_tok)) write_token_file(held_tok, bytes_to_sequences(read_bytes(held_bytes), kSeqLen, kSeqLen));

    const fs::path ckpt = f.dir / "trained_6L_3000";
    if (!fs::exists(ckpt / "weights.bin")) {
      std::cout << "training fixture model (3000 steps)..." << std::endl;
      TrainConfig tc;
      tc.model = fixture_config();
      tc.steps = 3000;
      tc.batch = 8;
      tc.seq_len = 64;
      tc.seed = 1;
      tc.log_every = 500;
      const TrainResult r = train_toy(tc, read_bytes(train_bytes));
      save_checkpoint(r.model, ckpt);
      write_json_file(f.dir / "train_report.json",
                      Json{{"steps", tc.steps}, {"initial_loss", r.initial_loss}, {"final_loss", r.final_loss},
                           {"final_train_ppl", r.final_train_ppl}});
    }
    f.model = load_checkpoint(ckpt);
    f.calib = load_calibration(calib_tok, kDepthSamples, kSeqLen, 0);
    f.held = load_calibration(held_tok, kHeldSamples, kSeqLen, 0);
    return f;
  }();
  return f;
}

PruneConfig acceptance_prune_config() {
  PruneConfig c;
  c.calib_samples_depth = kDepthSamples;
  c.calib_samples_width = kWidthSamples;
  return c;
}

// Shared between criteria 7, 8 and 9.
std::optional<PruneResult> default_prune;

const PruneResult& default_multipruner() {
  if (!default_prune) default_prune = multipruner::multipruner(fixture_model().model, acceptance_prune_config(), fixture_model().calib);
  return *default_prune;
}

// ---------------------------------------------------------------------------
// Schaffer's SCH problem: f1 = x^2, f2 = (x - 2)^2, x in [-1000, 1000].
// Pareto set x in [0, 2]; front f2 = (sqrt(f1) - 2)^2. The hypervolume
// against (4, 4) is 16 - int_0^4 (sqrt(u) - 2)^2 du = 40/3.

struct Sch {
  using Genome = double;
  static constexpr double lo = -1000.0, hi = 1000.0;
  std::vector<double> initial_population(std::size_t n, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(lo + (hi - lo) * rng.uniform());
    return out;
  }
  // Simulated binary crossover, distribution index 15.
  double crossover(double a, double b, Rng& rng) const {
    const double u = rng.uniform();
    const double eta = 15.0;
    const double beta = u <= 0.5 ? std::pow(2.0 * u, 1.0 / (eta + 1)) : std::pow(1.0 / (2.0 * (1.0 - u)), 1.0 / (eta + 1));
    const double c = rng.uniform() < 0.5 ? 0.5 * ((1 + beta) * a + (1 - beta) * b) : 0.5 * ((1 - beta) * a + (1 + beta) * b);
    return std::clamp(c, lo, hi);
  }
  // Gaussian step with a log-uniform scale between 1e-3 and 1e2.
  void mutate(double& x, Rng& rng) const {
    if (rng.uniform() >= 0.5) return;
    const double scale = std::pow(10.0, -3.0 + 5.0 * rng.uniform());
    x = std::clamp(x + scale * rng.normal(), lo, hi);
  }
  ObjectiveVector evaluate(double x) const { return {x * x, (x - 2) * (x - 2)}; }
};

}  // namespace

int main() {
  std::cout << std::unitbuf;

  report(1, "threshold arithmetic", [] {
    const auto t = derive_thresholds(0.22, {0.44, 0.52, 0.04});
    const double err = std::max({std::abs(t[0] - 0.0968), std::abs(t[1] - 0.2112), std::abs(t[2] - 0.22)});
    return Outcome{err <= 1e-12, "(" + fmt(t[0], 12) + ", " + fmt(t[1], 12) + ", " + fmt(t[2], 12) + "), max err " + fmt(err, 3)};
  });

  report(2, "mask/materialize equivalence", [] {
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      Rng rng(derive_seed(2, static_cast<std::uint64_t>(i)));
      const int heads = rng.uniform() < 0.5 ? 4 : 8;
      const int kv = rng.uniform() < 0.5 ? heads : heads / 2;
      const ModelConfig c = fixture::tiny_config(static_cast<int>(rng.between(1, 3)), heads, kv, 8,
                                                 static_cast<int>(rng.between(8, 64)), 64);
      const TransformerModel m = random_model(c, rng.next(), 0.2, 0.1);
      const ArchDescriptor d = fixture::random_descriptor(c, rng);
      const auto tokens = fixture::random_tokens(rng, static_cast<int>(rng.between(1, 24)), c.vocab_size);
      const Tensor a = forward(m, d, tokens);
      const Tensor b = forward(materialize(m, d), tokens);
      worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
    }
    return Outcome{worst < 1e-5, "200 pairs, max |diff| " + fmt(worst, 3)};
  });

  report(3, "reordering functional invariance", [] {
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      Rng rng(derive_seed(3, static_cast<std::uint64_t>(i)));
      const int heads = rng.uniform() < 0.5 ? 4 : 8;
      const ModelConfig c = fixture::tiny_config(static_cast<int>(rng.between(1, 3)), heads, heads / 2, 8, 48, 64);
      const TransformerModel m = random_model(c, rng.next(), 0.2, 0.1);
      const CalibrationSet calib = fixture::random_calib(rng.next(), 4, 16, 64);
      const CalibrationSet held = fixture::random_calib(rng.next(), 4, 16, 64);
      for (ReorderMetric metric : {ReorderMetric::L1Norm, ReorderMetric::Wanda}) {
        TransformerModel r = m;
        apply_reordering(r, metric, &calib);
        for (const auto& seq : held.sequences) {
          worst = std::max(worst, static_cast<double>((forward(m, seq) - forward(r, seq)).cwiseAbs().maxCoeff()));
        }
      }
    }
    return Outcome{worst < 1e-5, "50 models x {L1_NORM, WANDA}, max |diff| " + fmt(worst, 3)};
  });

  report(4, "greedy-oracle equivalence", [] {
    int decisions = 0, mismatches = 0;
    for (int i = 0; i < 20; ++i) {
      const int layers = 2 + i % 2;
      TransformerModel m = fixture::trained_tiny(static_cast<std::uint64_t>(1000 + i), layers, 150);
      const CalibrationSet calib = fixture::text_calib(static_cast<std::uint64_t>(2000 + i), 6, 32);
      const double total = static_cast<double>(count_params(m));
      const double mlp_block = static_cast<double>(m.config.intermediate * unit_params(m.config, BlockKind::Mlp)) / total;
      auto compare = [&](const std::vector<TraceStep>& got, const std::vector<oracle::Choice>& want) {
        decisions += static_cast<int>(want.size());
        if (got.size() != want.size()) {
          ++mismatches;
          return;
        }
        for (std::size_t k = 0; k < got.size(); ++k) {
          if (!(got[k].block == want[k].block && got[k].group == want[k].group)) ++mismatches;
        }
      };
      const double t1 = 1.5 * mlp_block;
      const auto want_depth = oracle::greedy_depth(m, t1, calib);
      compare(prune_depth(m, t1, calib), want_depth);
      apply_reordering(m, ReorderMetric::L1Norm, &calib);
      const int g = 16;
      const double t2 = pruning_ratio(m) + 3.5 * g * unit_params(m.config, BlockKind::Mlp) / total;
      const auto want_mlp = oracle::greedy_width(m, BlockKind::Mlp, t2, g, calib);
      compare(prune_width(m, BlockKind::Mlp, t2, g, calib), want_mlp);
      const double t3 = pruning_ratio(m) + 1.5 * unit_params(m.config, BlockKind::Attn) / total;
      const int ga = m.config.group_size();
      const auto want_attn = oracle::greedy_width(m, BlockKind::Attn, t3, ga, calib);
      compare(prune_width(m, BlockKind::Attn, t3, ga, calib), want_attn);
    }
    return Outcome{mismatches == 0, "20 trained models, " + std::to_string(decisions) + " decisions, " +
                                        std::to_string(mismatches) + " mismatches"};
  });

  report(5, "perplexity identities", [] {
    ModelConfig c = fixture::tiny_config(1, 2, 1, 4, 8, 256);
    TransformerModel m = random_model(c, 5);
    m.lm_head.setZero();
    const double p256 = perplexity(m, fixture::random_calib(5, 4, 32, 256));
    c.vocab_size = 2;
    TransformerModel two = random_model(c, 6);
    two.lm_head.setZero();
    CalibrationSet calib;
    calib.sequences = {{0, 1}, {1, 0, 1}};
    const double p2 = perplexity(two, calib);
    const bool ok = std::abs(p256 / 256.0 - 1.0) <= 1e-6 && std::abs(p2 - 2.0) <= 1e-9;
    return Outcome{ok, "uniform PPL " + fmt(p256, 15) + ", two-token PPL " + fmt(p2, 15)};
  });

  report(6, "NSGA-II correctness", [] {
    int sort_mismatch = 0;
    for (int i = 0; i < 100; ++i) {
      Rng rng(derive_seed(6, static_cast<std::uint64_t>(i)));
      std::vector<ObjectiveVector> pts;
      const bool grid = i % 2 == 0;
      for (int k = 0; k < 60; ++k) {
        pts.push_back(grid ? ObjectiveVector{static_cast<double>(rng.below(8)), static_cast<double>(rng.below(8))}
                           : ObjectiveVector{rng.uniform(), rng.uniform()});
      }
      auto ref = oracle::fronts(pts);
      for (auto& f : ref) std::sort(f.begin(), f.end());
      if (non_dominated_sort(pts) != ref) ++sort_mismatch;
    }
    Nsga2Config cfg;
    cfg.evaluations = 2000;
    cfg.population_size = 100;
    cfg.seed = 6;
    const auto result = nsga2(Sch{}, cfg);
    std::vector<ObjectiveVector> final_pts;
    for (const auto& ind : result.population) final_pts.push_back(ind.objectives);
    const double hv = hypervolume_2d(final_pts, {4.0, 4.0});
    const double optimum = 40.0 / 3.0;
    const bool ok = sort_mismatch == 0 && hv >= 0.95 * optimum && result.archive.size() == 2000;
    return Outcome{ok, "sort mismatches " + std::to_string(sort_mismatch) + "/100; SCH hypervolume " + fmt(hv, 8) +
                           " vs optimum " + fmt(optimum, 8) + " (" + fmt(100.0 * hv / optimum, 5) + "%)"};
  });

  report(7, "method-ordering trend", [] {
    const Fixture& f = fixture_model();
    PruneConfig depth_only = acceptance_prune_config();
    depth_only.stages_enabled = {PruneStage::Block};
    const PruneResult d = multipruner::multipruner(f.model, depth_only, f.calib);
    const double rd = pruning_ratio(d.model);
    // Multidimensional pruning targets the ratio depth-only pruning landed on.
    PruneConfig matched = acceptance_prune_config();
    matched.target_ratio = rd;
    const PruneResult m = multipruner::multipruner(f.model, matched, f.calib);
    const double rm = pruning_ratio(m.model);
    const double ppl_d = perplexity(d.model, f.held);
    const double ppl_m = perplexity(m.model, f.held);
    const double dense = perplexity(f.model, f.held);
    std::cout << "  dense held-out PPL " << fmt(dense) << "\n";
    std::cout << "  depth-only:   ratio " << fmt(rd) << "  held-out PPL " << fmt(ppl_d) << "\n";
    std::cout << "  multipruner:  ratio " << fmt(rm) << "  held-out PPL " << fmt(ppl_m) << "\n";
    std::cout << "  order grid at tau=0.22 (report only):\n";
    std::vector<PruneStage> order = {PruneStage::Block, PruneStage::Mlp, PruneStage::Attn};
    do {
      PruneConfig c = acceptance_prune_config();
      c.stage_order = order;
      std::string name;
      for (PruneStage s : order) name += (name.empty() ? "" : ">") + to_string(s);
      try {
        const PruneResult r = order == std::vector<PruneStage>{PruneStage::Block, PruneStage::Mlp, PruneStage::Attn}
                                  ? default_multipruner()
                                  : multipruner::multipruner(f.model, c, f.calib);
        std::cout << "    " << std::left << std::setw(15) << name << std::right << " ratio " << fmt(pruning_ratio(r.model))
                  << "  held-out PPL " << fmt(perplexity(r.model, f.held)) << "\n";
      } catch (const std::exception& e) {
        std::cout << "    " << name << " failed: " << e.what() << "\n";
      }
    } while (std::next_permutation(order.begin(), order.end()));
    const bool ok = std::abs(rm - rd) <= 0.01 && ppl_m <= ppl_d;
    return Outcome{ok, "held-out PPL " + fmt(ppl_m) + " (multipruner) vs " + fmt(ppl_d) + " (depth-only), ratios " +
                           fmt(rm) + " / " + fmt(rd)};
  });

  report(8, "Evol proximity", [] {
    const Fixture& f = fixture_model();
    SearchConfig sc;
    sc.evaluations = 1000;
    sc.calib_samples_depth = kDepthSamples;
    sc.calib_samples_width = kWidthSamples;
    const EvolResult e = multipruner_evol(f.model, 0.22, f.calib, sc);
    const PruneResult& fixed = default_multipruner();
    const double ppl_e = perplexity(e.model, f.calib);
    const double ppl_f = perplexity(fixed.model, f.calib);
    const double ratio = pruning_ratio(e.model);
    std::cout << "  depth stage ratio " << fmt(e.depth_ratio) << ", epsilon " << fmt(e.epsilon) << ", archive "
              << e.archive.size() << "\n";
    const bool ok = std::abs(ratio - 0.22) <= e.epsilon && ppl_e <= 1.10 * ppl_f;
    return Outcome{ok, "evol ratio " + fmt(ratio) + " calib PPL " + fmt(ppl_e) + " vs fixed " + fmt(ppl_f) +
                           " (ratio " + fmt(pruning_ratio(fixed.model)) + "), limit " + fmt(1.10 * ppl_f)};
  });

  report(9, "benchmark direction", [] {
    const Fixture& f = fixture_model();
    const PruneResult& p = default_multipruner();
    BenchConfig bc;
    bc.prompt_len = 512;
    bc.new_tokens = 16;
    bc.batch_sizes = {1};
    bc.repeats = 5;
    const BenchReport rep = run_benchmark(f.model, p.model, bc);
    const BenchRow& r = rep.rows.at(0);
    const bool ok = r.prefill_speedup > 1.0 && r.decode_speedup > 1.0 &&
                    rep.dense_cache_error <= 1e-4 && rep.pruned_cache_error <= 1e-4;
    return Outcome{ok, "ratio " + fmt(pruning_ratio(p.model), 4) + ", prefill x" + fmt(r.prefill_speedup, 4) +
                           ", decode x" + fmt(r.decode_speedup, 4) + ", cache err " +
                           fmt(std::max(rep.dense_cache_error, rep.pruned_cache_error), 3)};
  });

  report(10, "determinism", [] {
    const Fixture& f = fixture_model();
    const fs::path work = f.dir / "determinism";
    fs::remove_all(work);
    fs::create_directories(work);
    save_checkpoint(f.model, work / "dense");
    write_json_file(work / "run.json", Json{{"checkpoint", "dense"},
                                            {"calibration", (f.dir / "calib.tok").string()},
                                            {"calib_samples", kDepthSamples},
                                            {"calib_samples_width", kWidthSamples},
                                            {"max_seq_len", kSeqLen},
                                            {"seed", 7},
                                            {"search", {{"evaluations", 200}}}});
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    std::string detail;
    bool ok = true;
    for (const std::string cmd : {"prune", "evolve"}) {
      for (const char* run : {"a", "b"}) {
        const int code = run_cli({"multipruner", cmd, "-c", (work / "run.json").string(), "-o", (work / (cmd + run)).string()});
        if (code != 0) return Outcome{false, cmd + " exited with " + std::to_string(code)};
      }
      for (const char* file : {"model/descriptor.json", "trace.jsonl"}) {
        const std::string a = slurp(work / (cmd + "a") / file), b = slurp(work / (cmd + "b") / file);
        const bool same = !a.empty() && a == b;
        ok = ok && same;
        detail += cmd + ":" + file + (same ? " identical; " : " DIFFERENT; ");
      }
    }
    const bool archives = slurp(work / "evolvea" / "archive.csv") == slurp(work / "evolveb" / "archive.csv");
    return Outcome{ok && archives, detail + "archive.csv " + (archives ? "identical" : "DIFFERENT")};
  });

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
