#include "multipruner/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "multipruner/bench.hpp"
#include "multipruner/checkpoint.hpp"
#include "multipruner/corpus.hpp"
#include "multipruner/toytrain.hpp"

namespace fs = std::filesystem;

namespace multipruner {

namespace {

fs::path resolve_path(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw InputError("unknown key '" + key + "' in " + where);
  }
}

template <typename Enum, typename Parse>
std::vector<Enum> enum_list(const Json& j, const std::string& key, Parse parse) {
  std::vector<Enum> out;
  for (const auto& s : json_get<std::vector<std::string>>(j, key)) out.push_back(parse(s));
  return out;
}

Json stage_list(const std::vector<PruneStage>& stages) {
  Json a = Json::array();
  for (PruneStage s : stages) a.push_back(to_string(s));
  return a;
}

// Keeps the per-driver calibration and seed fields in step with the top level.
void sync(RunConfig& c) {
  c.prune.calib_samples_depth = c.calib_samples;
  c.prune.calib_samples_width = c.calib_samples_width;
  c.prune.seed = c.seed;
  c.prune.workers = c.workers;
  c.prune.verbose = c.verbose;
  c.search.calib_samples_depth = c.calib_samples;
  c.search.calib_samples_width = c.calib_samples_width;
  c.search.seed = c.seed;
  c.search.workers = c.workers;
  c.search.verbose = c.verbose;
  c.search.g_mlp = c.prune.g_mlp;
  c.search.reorder_metric = c.prune.reorder_metric;
}

}  // namespace

RunConfig run_config_from_json(const Json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw InputError("run config must be a JSON object");
  reject_unknown_keys(j,
                      {"checkpoint", "calibration", "heldout", "output", "calib_samples",
                       "calib_samples_width", "max_seq_len", "heldout_samples", "seed", "workers",
                       "verbose", "target_ratio", "ratio_weights", "g_mlp", "g_attn",
                       "stage_order", "stages_enabled", "reorder_metric", "search"},
                      "run config");
  RunConfig c;
  c.checkpoint = resolve_path(json_get_or<std::string>(j, "checkpoint", ""), base_dir);
  c.calibration = resolve_path(json_get_or<std::string>(j, "calibration", ""), base_dir);
  c.heldout = resolve_path(json_get_or<std::string>(j, "heldout", ""), base_dir);
  c.output = resolve_path(json_get_or<std::string>(j, "output", ""), base_dir);
  c.calib_samples = json_get_or(j, "calib_samples", c.calib_samples);
  c.calib_samples_width = json_get_or(j, "calib_samples_width", c.calib_samples_width);
  c.max_seq_len = json_get_or(j, "max_seq_len", c.max_seq_len);
  c.heldout_samples = json_get_or(j, "heldout_samples", c.heldout_samples);
  c.seed = json_get_or<std::uint64_t>(j, "seed", c.seed);
  c.workers = json_get_or(j, "workers", c.workers);
  c.verbose = json_get_or(j, "verbose", c.verbose);

  PruneConfig& p = c.prune;
  p.target_ratio = json_get_or(j, "target_ratio", p.target_ratio);
  if (j.contains("ratio_weights")) {
    const auto w = json_get<std::vector<double>>(j, "ratio_weights");
    if (w.size() != 3) throw InputError("ratio_weights must have three entries (block, MLP, attention)");
    p.ratio_weights = {w[0], w[1], w[2]};
  }
  p.g_mlp = json_get_or(j, "g_mlp", p.g_mlp);
  p.g_attn = json_get_or(j, "g_attn", p.g_attn);
  if (j.contains("stage_order")) {
    p.stage_order = enum_list<PruneStage>(j, "stage_order", prune_stage_from_string);
  }
  if (j.contains("stages_enabled")) {
    p.stages_enabled = enum_list<PruneStage>(j, "stages_enabled", prune_stage_from_string);
  }
  if (j.contains("reorder_metric")) {
    p.reorder_metric = reorder_metric_from_string(json_get<std::string>(j, "reorder_metric"));
  }

  if (j.contains("search")) {
    const Json& s = j.at("search");
    reject_unknown_keys(s, {"evaluations", "population_size", "mutation_rate", "crossover_rate",
                            "ratio_tolerance"},
                        "search config");
    c.search.evaluations = json_get_or(s, "evaluations", c.search.evaluations);
    c.search.population_size = json_get_or(s, "population_size", c.search.population_size);
    c.search.mutation_rate = json_get_or(s, "mutation_rate", c.search.mutation_rate);
    c.search.crossover_rate = json_get_or(s, "crossover_rate", c.search.crossover_rate);
    c.search.ratio_tolerance = json_get_or(s, "ratio_tolerance", c.search.ratio_tolerance);
  }
  if (c.calib_samples < 1 || c.calib_samples_width < 1) throw InputError("calibration sample counts must be >= 1");
  if (c.max_seq_len < 2) throw InputError("max_seq_len must be >= 2");
  sync(c);
  return c;
}

Json to_json(const RunConfig& c) {
  const PruneConfig& p = c.prune;
  const SearchConfig& s = c.search;
  return Json{
      {"checkpoint", c.checkpoint.string()},
      {"calibration", c.calibration.string()},
      {"heldout", c.heldout.string()},
      {"output", c.output.string()},
      {"calib_samples", c.calib_samples},
      {"calib_samples_width", c.calib_samples_width},
      {"max_seq_len", c.max_seq_len},
      {"heldout_samples", c.heldout_samples},
      {"seed", c.seed},
      {"workers", c.workers},
      {"verbose", c.verbose},
      {"target_ratio", p.target_ratio},
      {"ratio_weights", {p.ratio_weights[0], p.ratio_weights[1], p.ratio_weights[2]}},
      {"g_mlp", p.g_mlp},
      {"g_attn", p.g_attn},
      {"stage_order", stage_list(p.stage_order)},
      {"stages_enabled", stage_list(p.stages_enabled)},
      {"reorder_metric", to_string(p.reorder_metric)},
      {"search",
       {{"evaluations", s.evaluations},
        {"population_size", s.population_size},
        {"mutation_rate", s.mutation_rate},
        {"crossover_rate", s.crossover_rate},
        {"ratio_tolerance", s.ratio_tolerance}}}};
}

Json to_json(const TraceStep& s) {
  return Json{{"stage", to_string(s.stage)},
              {"block", to_string(s.block)},
              {"layer", s.block.layer},
              {"kind", to_string(s.block.kind)},
              {"group", s.group},
              {"score", s.score},
              {"ratio_after", s.ratio_after}};
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct RunFlags {
  std::string config, checkpoint, calibration, heldout, output;
  std::optional<double> ratio;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> evaluations;
  bool verbose = false;
};

void add_run_flags(CLI::App* sub, RunFlags& f) {
  sub->add_option("-c,--config", f.config, "JSON run config");
  sub->add_option("--checkpoint", f.checkpoint, "Input checkpoint directory");
  sub->add_option("--calib", f.calibration, "Calibration token file");
  sub->add_option("--heldout", f.heldout, "Held-out token file");
  sub->add_option("-o,--out", f.output, "Output directory");
  sub->add_option("--ratio", f.ratio, "Target pruning ratio");
  sub->add_option("--seed", f.seed, "Seed");
  sub->add_option("--workers", f.workers, "Worker threads (0 = MP_THREADS or all cores)");
  sub->add_flag("-v,--verbose", f.verbose, "Log every pruning step");
}

RunConfig effective_config(const RunFlags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    const fs::path path(f.config);
    c = run_config_from_json(read_json_file(path), path.parent_path());
  }
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.calibration.empty()) c.calibration = f.calibration;
  if (!f.heldout.empty()) c.heldout = f.heldout;
  if (!f.output.empty()) c.output = f.output;
  if (f.ratio) c.prune.target_ratio = *f.ratio;
  if (f.seed) c.seed = *f.seed;
  if (f.workers) c.workers = *f.workers;
  if (f.evaluations) c.search.evaluations = *f.evaluations;
  if (f.verbose) c.verbose = true;
  sync(c);
  if (c.checkpoint.empty()) throw InputError("no checkpoint given (--checkpoint or \"checkpoint\")");
  if (c.calibration.empty()) throw InputError("no calibration file given (--calib or \"calibration\")");
  if (c.output.empty()) throw InputError("no output directory given (--out or \"output\")");
  return c;
}

CalibrationSet all_sequences(const fs::path& path, int max_seq_len) {
  CalibrationSet set;
  set.max_seq_len = max_seq_len;
  for (const auto& s : read_token_file(path)) {
    if (s.size() < 2) continue;
    const std::size_t len = std::min<std::size_t>(s.size(), static_cast<std::size_t>(max_seq_len));
    set.sequences.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(len));
  }
  if (set.sequences.empty()) throw InputError(path.string() + " holds no usable sequences");
  return set;
}

CalibrationSet load_sample(const fs::path& path, int n, int max_seq_len, std::uint64_t seed) {
  if (n <= 0) return all_sequences(path, max_seq_len);
  return load_calibration(path, static_cast<std::size_t>(n), max_seq_len, seed);
}

Json heldout_ppl(const RunConfig& c, const TransformerModel& model) {
  if (c.heldout.empty()) return nullptr;
  const CalibrationSet held = load_sample(c.heldout, c.heldout_samples, c.max_seq_len, c.seed);
  return perplexity(model, held, c.workers);
}

void write_trace(const fs::path& path, const std::vector<TraceStep>& steps) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    Json line = to_json(steps[i]);
    line["step"] = i;
    out << line.dump() << '\n';
  }
}

Json steps_per_stage(const std::vector<TraceStep>& steps) {
  Json j = {{"BLOCK", 0}, {"MLP", 0}, {"ATTN", 0}};
  for (const TraceStep& s : steps) j[to_string(s.stage)] = j[to_string(s.stage)].get<int>() + 1;
  return j;
}

struct PruneOutcome {
  PruneResult result;
  RunConfig config;
  Json heldout;
};

PruneOutcome run_prune(RunConfig c) {
  const TransformerModel model = load_checkpoint(c.checkpoint);
  c.prune = c.prune.resolved(model.config);
  sync(c);
  const CalibrationSet calib = load_calibration(c.calibration, static_cast<std::size_t>(c.calib_samples),
                                                c.max_seq_len, c.seed);
  PruneOutcome o{multipruner(model, c.prune, calib), c, nullptr};
  o.heldout = heldout_ppl(c, o.result.model);
  return o;
}

int cmd_prune(const RunFlags& flags) {
  const auto t0 = Clock::now();
  const PruneOutcome o = run_prune(effective_config(flags));
  const RunConfig& c = o.config;
  const PruneResult& r = o.result;
  fs::create_directories(c.output);
  const fs::path model_dir = c.output / "model";
  save_checkpoint(r.model, model_dir);
  write_trace(c.output / "trace.jsonl", r.trace.steps);

  Json thresholds = Json::object();
  for (std::size_t i = 0; i < c.prune.stage_order.size(); ++i) {
    thresholds[to_string(c.prune.stage_order[i])] = r.thresholds[i];
  }
  Json report = {{"command", "prune"},
                 {"config", to_json(c)},
                 {"thresholds", thresholds},
                 {"steps_per_stage", steps_per_stage(r.trace.steps)},
                 {"final_ratio", pruning_ratio(r.model)},
                 {"calib_ppl", r.trace.final_ppl},
                 {"heldout_ppl", o.heldout},
                 {"params", {{"dense", count_params(r.model.config, ArchDescriptor::dense(r.model.config))},
                             {"pruned", count_params(r.model)}}},
                 {"wall_time_seconds", elapsed(t0)},
                 {"artifacts",
                  {{"checkpoint", model_dir.string()},
                   {"trace", (c.output / "trace.jsonl").string()},
                   {"report", (c.output / "report.json").string()}}}};
  write_json_file(c.output / "report.json", report);
  std::cout << "final_ratio " << report["final_ratio"].get<double>() << "  calib_ppl "
            << r.trace.final_ppl << '\n';
  return 0;
}

int cmd_evolve(const RunFlags& flags) {
  const auto t0 = Clock::now();
  RunConfig c = effective_config(flags);
  const TransformerModel model = load_checkpoint(c.checkpoint);
  if (c.search.g_mlp == 0) c.search.g_mlp = std::max(1, model.config.hidden / 4);
  c.prune.g_mlp = c.search.g_mlp;
  const CalibrationSet calib = load_calibration(c.calibration, static_cast<std::size_t>(c.calib_samples),
                                                c.max_seq_len, c.seed);
  const EvolResult r = multipruner_evol(model, c.prune.target_ratio, calib, c.search);
  fs::create_directories(c.output);
  const fs::path model_dir = c.output / "model";
  save_checkpoint(r.model, model_dir);
  write_trace(c.output / "trace.jsonl", r.depth_steps);
  write_archive_csv(c.output / "archive.csv", r.archive);

  const double calib_ppl = perplexity(r.model, calib.head(static_cast<std::size_t>(c.calib_samples)), c.workers);
  Json selected = nullptr;
  if (r.selected) {
    selected = {{"genome", r.selected->genome},
                {"ratio", r.selected->ratio},
                {"search_ppl", r.selected->ppl},
                {"generation", r.selected->generation},
                {"index", r.selected->index}};
  }
  Json report = {{"command", "evolve"},
                 {"config", to_json(c)},
                 {"depth_threshold", c.prune.target_ratio / 2.0},
                 {"depth_ratio", r.depth_ratio},
                 {"steps_per_stage", steps_per_stage(r.depth_steps)},
                 {"epsilon", r.epsilon},
                 {"evaluations", r.archive.size()},
                 {"selected", selected},
                 {"final_ratio", pruning_ratio(r.model)},
                 {"calib_ppl", calib_ppl},
                 {"heldout_ppl", heldout_ppl(c, r.model)},
                 {"wall_time_seconds", elapsed(t0)},
                 {"artifacts",
                  {{"checkpoint", model_dir.string()},
                   {"trace", (c.output / "trace.jsonl").string()},
                   {"archive", (c.output / "archive.csv").string()},
                   {"report", (c.output / "report.json").string()}}}};
  write_json_file(c.output / "report.json", report);
  std::cout << "final_ratio " << report["final_ratio"].get<double>() << "  calib_ppl " << calib_ppl << '\n';
  return 0;
}

struct SweepFlags {
  RunFlags run;
  std::string axis;
  std::vector<double> values;
};

int cmd_sweep(const SweepFlags& flags) {
  const auto t0 = Clock::now();
  const RunConfig base = effective_config(flags.run);
  std::size_t axis = 0;
  if (flags.axis == "MLP_WEIGHT") {
    axis = 1;
  } else if (flags.axis == "ATTN_WEIGHT") {
    axis = 2;
  } else {
    throw InputError("sweep axis must be MLP_WEIGHT or ATTN_WEIGHT, got '" + flags.axis + "'");
  }
  if (flags.values.empty()) throw InputError("sweep needs at least one value");
  fs::create_directories(base.output);
  const fs::path csv_path = base.output / "sweep.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw InputError("cannot write " + csv_path.string());
  csv.precision(10);
  csv << "axis,weight,w_block,w_mlp,w_attn,final_ratio,final_ppl,heldout_ppl,avg_placeholder\n";
  Json runs = Json::array();
  for (double v : flags.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("sweep values must lie in [0, 1]");
    RunConfig c = base;
    auto& w = c.prune.ratio_weights;
    const std::size_t a = (axis + 1) % 3, b = (axis + 2) % 3;
    const double rest = w[a] + w[b];
    if (rest <= 0.0 && v < 1.0) throw InputError("cannot rescale: the other two weights are zero");
    const double scale = rest > 0.0 ? (1.0 - v) / rest : 0.0;
    w[a] *= scale;
    w[b] *= scale;
    w[axis] = v;
    const PruneOutcome o = run_prune(c);
    const double ratio = pruning_ratio(o.result.model);
    csv << flags.axis << ',' << v << ',' << w[0] << ',' << w[1] << ',' << w[2] << ',' << ratio << ','
        << o.result.trace.final_ppl << ',';
    if (!o.heldout.is_null()) csv << o.heldout.get<double>();
    csv << ",\n";
    runs.push_back({{"weight", v},
                    {"ratio_weights", {w[0], w[1], w[2]}},
                    {"final_ratio", ratio},
                    {"final_ppl", o.result.trace.final_ppl},
                    {"heldout_ppl", o.heldout}});
  }
  Json report = {{"command", "sweep"},
                 {"axis", flags.axis},
                 {"config", to_json(base)},
                 {"runs", runs},
                 {"wall_time_seconds", elapsed(t0)},
                 {"artifacts", {{"sweep", csv_path.string()}}}};
  write_json_file(base.output / "report.json", report);
  return 0;
}

struct ScoreFlags {
  std::string checkpoint, calibration, kind, output;
  int samples = 128;
  int max_seq_len = 128;
  int group = 0;
  std::uint64_t seed = 0;
  int workers = 0;
};

int cmd_score(const ScoreFlags& f) {
  const TransformerModel model = load_checkpoint(f.checkpoint);
  const CalibrationSet calib = load_sample(f.calibration, f.samples, f.max_seq_len, f.seed);
  std::vector<Candidate> candidates;
  Stage stage = Stage::Depth;
  if (f.kind.empty()) {
    for (BlockId b : model.descriptor.present_blocks()) candidates.push_back({b, std::nullopt});
  } else {
    if (f.group < 1) throw InputError("--group must be >= 1 with --kind");
    const BlockKind kind = block_kind_from_string(f.kind);
    stage = kind == BlockKind::Mlp ? Stage::MlpWidth : Stage::AttnWidth;
    for (BlockId b : model.descriptor.present_blocks()) {
      if (b.kind == kind) candidates.push_back({b, std::min(f.group, model.descriptor.width(b))});
    }
  }
  const auto scores = score_all(model, candidates, calib, {}, f.workers);
  std::ofstream file;
  if (!f.output.empty()) {
    file.open(f.output);
    if (!file) throw InputError("cannot write " + f.output);
  }
  std::ostream& out = f.output.empty() ? std::cout : file;
  out << "stage,layer,kind,score\n" << std::setprecision(17);
  for (const ImportanceScore& s : scores) {
    out << to_string(stage) << ',' << s.block.layer << ',' << to_string(s.block.kind) << ','
        << s.score << '\n';
  }
  return 0;
}

struct ReorderFlags {
  std::string checkpoint, calibration, output, metric = "L1_NORM";
  int samples = 128;
  int max_seq_len = 128;
  std::uint64_t seed = 0;
};

int cmd_reorder(const ReorderFlags& f) {
  TransformerModel model = load_checkpoint(f.checkpoint);
  const ReorderMetric metric = reorder_metric_from_string(f.metric);
  std::optional<CalibrationSet> calib;
  if (!f.calibration.empty()) calib = load_sample(f.calibration, f.samples, f.max_seq_len, f.seed);
  if (metric == ReorderMetric::Wanda && !calib) throw InputError("WANDA reordering needs --calib");
  const PermutationReport rep = apply_reordering(model, metric, calib ? &*calib : nullptr);
  save_checkpoint(model, f.output);
  Json layers = Json::array();
  for (const LayerPermutation& l : rep.layers) {
    layers.push_back({{"layer", l.layer}, {"channel_perm", l.channel_perm}, {"head_perm", l.head_perm}});
  }
  write_json_file(fs::path(f.output) / "permutation.json",
                  Json{{"metric", to_string(rep.metric)}, {"layers", layers}});
  return 0;
}

struct EvalFlags {
  std::string checkpoint, calibration;
  int samples = 0;
  int max_seq_len = 128;
  std::uint64_t seed = 0;
  int workers = 0;
};

int cmd_eval(const EvalFlags& f) {
  const TransformerModel model = load_checkpoint(f.checkpoint);
  const CalibrationSet calib = load_sample(f.calibration, f.samples, f.max_seq_len, f.seed);
  std::cout << std::setprecision(12) << perplexity(model, calib, f.workers) << '\n';
  return 0;
}

struct BenchFlags {
  std::string dense, pruned, output = "bench.csv";
  BenchConfig config;
};

int cmd_benchmark(BenchFlags f) {
  const TransformerModel dense = load_checkpoint(f.dense);
  const TransformerModel pruned = load_checkpoint(f.pruned);
  const BenchReport rep = run_benchmark(dense, pruned, f.config);
  write_bench_csv(f.output, rep, f.config);
  std::cout << "kv-cache max abs error: dense " << rep.dense_cache_error << ", pruned "
            << rep.pruned_cache_error << "\n"
            << "batch  prefill tok/s (dense -> pruned, speedup)   decode tok/s (dense -> pruned, speedup)\n";
  for (const BenchRow& r : rep.rows) {
    std::cout << std::setw(5) << r.batch << "  " << std::fixed << std::setprecision(1)
              << r.dense.prefill_tokens_per_s << " -> " << r.pruned.prefill_tokens_per_s << " ("
              << std::setprecision(3) << r.prefill_speedup << "x)   " << std::setprecision(1)
              << r.dense.decode_tokens_per_s << " -> " << r.pruned.decode_tokens_per_s << " ("
              << std::setprecision(3) << r.decode_speedup << "x)\n";
  }
  std::cout.unsetf(std::ios::floatfield);
  return 0;
}

struct TrainFlags {
  std::string config, corpus, output;
  std::optional<int> steps, batch, seq_len, log_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainFlags& f) {
  const auto t0 = Clock::now();
  TrainConfig c;
  if (!f.config.empty()) {
    const fs::path path(f.config);
    const Json j = read_json_file(path);
    reject_unknown_keys(j, {"model", "corpus", "steps", "batch", "seq_len", "lr", "warmup", "grad_clip",
                            "init_std", "seed", "log_every"},
                        "train config");
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.corpus = resolve_path(json_get_or<std::string>(j, "corpus", ""), path.parent_path());
    c.steps = json_get_or(j, "steps", c.steps);
    c.batch = json_get_or(j, "batch", c.batch);
    c.seq_len = json_get_or(j, "seq_len", c.seq_len);
    c.lr = json_get_or(j, "lr", c.lr);
    c.warmup = json_get_or(j, "warmup", c.warmup);
    c.grad_clip = json_get_or(j, "grad_clip", c.grad_clip);
    c.init_std = json_get_or(j, "init_std", c.init_std);
    c.seed = json_get_or<std::uint64_t>(j, "seed", c.seed);
    c.log_every = json_get_or(j, "log_every", c.log_every);
  }
  if (!f.corpus.empty()) c.corpus = f.corpus;
  if (f.steps) c.steps = *f.steps;
  if (f.batch) c.batch = *f.batch;
  if (f.seq_len) c.seq_len = *f.seq_len;
  if (f.log_every) c.log_every = *f.log_every;
  if (f.lr) c.lr = *f.lr;
  if (f.seed) c.seed = *f.seed;
  if (c.corpus.empty()) throw InputError("no corpus given (--corpus or \"corpus\")");
  if (f.output.empty()) throw InputError("no output directory given (--out)");

  const TrainResult r = train_toy(c);
  save_checkpoint(r.model, f.output);
  Json report = {{"command", "train-toy"},
                 {"config",
                  {{"model", to_json(c.model)},
                   {"corpus", c.corpus.string()},
                   {"steps", c.steps},
                   {"batch", c.batch},
                   {"seq_len", c.seq_len},
                   {"lr", c.lr},
                   {"warmup", c.warmup},
                   {"grad_clip", c.grad_clip},
                   {"init_std", c.init_std},
                   {"seed", c.seed}}},
                 {"initial_loss", r.initial_loss},
                 {"final_loss", r.final_loss},
                 {"final_train_ppl", r.final_train_ppl},
                 {"params", count_params(r.model)},
                 {"wall_time_seconds", elapsed(t0)},
                 {"artifacts", {{"checkpoint", f.output}}}};
  write_json_file(fs::path(f.output) / "train_report.json", report);
  std::cout << "final_train_ppl " << r.final_train_ppl << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Training-free multidimensional structured pruning for decoder-only transformers"};
  app.require_subcommand(1);
  std::function<int()> action;

  RunFlags prune_flags;
  auto* prune = app.add_subcommand("prune", "Fixed-threshold pruning: blocks, then MLP channels and heads");
  add_run_flags(prune, prune_flags);
  prune->callback([&] { action = [&] { return cmd_prune(prune_flags); }; });

  RunFlags evolve_flags;
  auto* evolve = app.add_subcommand("evolve", "Depth pruning to half the target, then NSGA-II width search");
  add_run_flags(evolve, evolve_flags);
  evolve->add_option("--evaluations", evolve_flags.evaluations, "Search budget N");
  evolve->callback([&] { action = [&] { return cmd_evolve(evolve_flags); }; });

  SweepFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Vary one ratio weight with the target held fixed");
  add_run_flags(sweep, sweep_flags.run);
  sweep->add_option("--axis", sweep_flags.axis, "MLP_WEIGHT or ATTN_WEIGHT")->required();
  sweep->add_option("--values", sweep_flags.values, "Comma-separated weights")->delimiter(',')->required();
  sweep->callback([&] { action = [&] { return cmd_sweep(sweep_flags); }; });

  ScoreFlags score_flags;
  auto* score = app.add_subcommand("score", "Masked-PPL importance of every present block");
  score->add_option("--checkpoint", score_flags.checkpoint)->required();
  score->add_option("--calib", score_flags.calibration)->required();
  score->add_option("--samples", score_flags.samples, "Sequences (0 = all)");
  score->add_option("--max-seq-len", score_flags.max_seq_len);
  score->add_option("--kind", score_flags.kind, "Score width trims of MLP or ATTN blocks instead");
  score->add_option("--group", score_flags.group, "Units per width trim");
  score->add_option("--seed", score_flags.seed);
  score->add_option("--workers", score_flags.workers);
  score->add_option("-o,--out", score_flags.output, "CSV output file (default stdout)");
  score->callback([&] { action = [&] { return cmd_score(score_flags); }; });

  ReorderFlags reorder_flags;
  auto* reorder = app.add_subcommand("reorder", "Permute channels and KV groups by importance");
  reorder->add_option("--checkpoint", reorder_flags.checkpoint)->required();
  reorder->add_option("-o,--out", reorder_flags.output, "Output checkpoint directory")->required();
  reorder->add_option("--metric", reorder_flags.metric, "L1_NORM, WANDA or NONE");
  reorder->add_option("--calib", reorder_flags.calibration, "Calibration tokens (WANDA)");
  reorder->add_option("--samples", reorder_flags.samples);
  reorder->add_option("--max-seq-len", reorder_flags.max_seq_len);
  reorder->add_option("--seed", reorder_flags.seed);
  reorder->callback([&] { action = [&] { return cmd_reorder(reorder_flags); }; });

  EvalFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "Print perplexity on a token file");
  eval->add_option("--checkpoint", eval_flags.checkpoint)->required();
  eval->add_option("--calib", eval_flags.calibration)->required();
  eval->add_option("--samples", eval_flags.samples, "Sequences (0 = all)");
  eval->add_option("--max-seq-len", eval_flags.max_seq_len);
  eval->add_option("--seed", eval_flags.seed);
  eval->add_option("--workers", eval_flags.workers);
  eval->callback([&] { action = [&] { return cmd_eval(eval_flags); }; });

  BenchFlags bench_flags;
  auto* bench = app.add_subcommand("benchmark", "Prefill and decode throughput, dense vs pruned");
  bench->add_option("--dense", bench_flags.dense)->required();
  bench->add_option("--pruned", bench_flags.pruned)->required();
  bench->add_option("--prompt-len", bench_flags.config.prompt_len);
  bench->add_option("--new-tokens", bench_flags.config.new_tokens);
  bench->add_option("--batch", bench_flags.config.batch_sizes, "Comma-separated batch sizes")->delimiter(',');
  bench->add_option("--repeats", bench_flags.config.repeats);
  bench->add_option("--warmup", bench_flags.config.warmup);
  bench->add_option("--seed", bench_flags.config.seed);
  bench->add_option("-o,--out", bench_flags.output, "CSV output");
  bench->callback([&] { action = [&] { return cmd_benchmark(bench_flags); }; });

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train-toy", "Train a small byte-level model");
  train->add_option("-c,--config", train_flags.config, "JSON train config");
  train->add_option("--corpus", train_flags.corpus, "Plain bytes file");
  train->add_option("-o,--out", train_flags.output, "Checkpoint directory")->required();
  train->add_option("--steps", train_flags.steps);
  train->add_option("--batch", train_flags.batch);
  train->add_option("--seq-len", train_flags.seq_len);
  train->add_option("--lr", train_flags.lr);
  train->add_option("--seed", train_flags.seed);
  train->add_option("--log-every", train_flags.log_every);
  train->callback([&] { action = [&] { return cmd_train(train_flags); }; });

  std::string corpus_out;
  std::size_t corpus_bytes = 1 << 20;
  std::uint64_t corpus_seed = 0;
  auto* make_corpus = app.add_subcommand("make-corpus", "Write a synthetic byte corpus");
  make_corpus->add_option("-o,--out", corpus_out)->required();
  make_corpus->add_option("--bytes", corpus_bytes);
  make_corpus->add_option("--seed", corpus_seed);
  make_corpus->callback([&] {
    action = [&] {
      write_bytes(corpus_out, synthetic_corpus(corpus_bytes, corpus_seed));
      return 0;
    };
  });

  std::string enc_in, enc_out;
  int enc_len = 128;
  int enc_stride = 0;
  auto* encode = app.add_subcommand("encode-bytes", "Cut a byte file into a token file of windows");
  encode->add_option("--in", enc_in)->required();
  encode->add_option("-o,--out", enc_out)->required();
  encode->add_option("--seq-len", enc_len);
  encode->add_option("--stride", enc_stride, "Window advance (default: seq-len)");
  encode->callback([&] {
    action = [&] {
      const auto bytes = read_bytes(enc_in);
      write_token_file(enc_out, bytes_to_sequences(bytes, enc_len, enc_stride > 0 ? enc_stride : enc_len));
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return action ? action() : 1;
  } catch (const ExhaustionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace multipruner
