#include "multipruner/evo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

namespace multipruner {

WidthSpace::WidthSpace(const TransformerModel& base, int g_mlp) : base_(&base) {
  if (g_mlp < 1) throw InputError("g_mlp must be >= 1");
  for (BlockId b : base.descriptor.present_blocks()) {
    WidthGene gene;
    gene.block = b;
    if (b.kind == BlockKind::Mlp) {
      gene.unit = g_mlp;
      const int kept = base.descriptor.width(b);
      gene.max_units = (kept + g_mlp - 1) / g_mlp;
    } else {
      gene.unit = 1;
      gene.max_units = base.descriptor.layers[static_cast<std::size_t>(b.layer)].kv_heads_kept;
    }
    genes_.push_back(gene);
  }
}

WidthGenome WidthSpace::identity() const {
  WidthGenome g;
  for (const WidthGene& gene : genes_) g.push_back(gene.max_units);
  return g;
}

void WidthSpace::validate(const WidthGenome& genome) const {
  if (genome.size() != genes_.size()) {
    throw InputError("genome has " + std::to_string(genome.size()) + " genes, space has " +
                     std::to_string(genes_.size()));
  }
  for (std::size_t i = 0; i < genome.size(); ++i) {
    if (genome[i] < 0 || genome[i] > genes_[i].max_units) {
      throw InputError("gene " + std::to_string(i) + " (" + to_string(genes_[i].block) +
                       ") out of range: " + std::to_string(genome[i]));
    }
  }
}

ArchDescriptor WidthSpace::descriptor(const WidthGenome& genome) const {
  validate(genome);
  ArchDescriptor arch = base_->descriptor;
  const int group = base_->config.group_size();
  for (std::size_t i = 0; i < genome.size(); ++i) {
    const WidthGene& gene = genes_[i];
    LayerArch& a = arch.layers[static_cast<std::size_t>(gene.block.layer)];
    if (gene.block.kind == BlockKind::Mlp) {
      a.mlp_channels_kept = std::min(genome[i] * gene.unit, base_->descriptor.width(gene.block));
      a.mlp_present = a.mlp_channels_kept > 0;
    } else {
      a.kv_heads_kept = genome[i];
      a.heads_kept = genome[i] * group;
      a.attn_present = a.kv_heads_kept > 0;
    }
  }
  return arch;
}

double WidthSpace::ratio_quantum() const {
  const ModelConfig& c = base_->config;
  std::int64_t smallest = 0;
  for (const WidthGene& gene : genes_) {
    const std::int64_t step = gene.block.kind == BlockKind::Mlp
                                  ? gene.unit * unit_params(c, BlockKind::Mlp)
                                  : unit_params(c, BlockKind::Attn);
    if (smallest == 0 || step < smallest) smallest = step;
  }
  if (smallest == 0) return 0.0;
  return static_cast<double>(smallest) /
         static_cast<double>(count_params(c, ArchDescriptor::dense(c)));
}

EvaluatedGenome evaluate_genome(const WidthSpace& space, const TransformerModel& base,
                                const WidthGenome& genome, const CalibrationSet& calib,
                                int workers) {
  const ArchDescriptor arch = space.descriptor(genome);
  EvaluatedGenome e;
  e.genome = genome;
  e.ppl = perplexity(base, arch, calib, workers);
  e.ratio = pruning_ratio(arch, ArchDescriptor::dense(base.config), base.config);
  return e;
}

WidthSearchProblem::WidthSearchProblem(const WidthSpace& space, const TransformerModel& base,
                                       const CalibrationSet& calib, double mutation_rate)
    : space_(&space), base_(&base), calib_(&calib), mutation_rate_(mutation_rate) {}

std::vector<WidthGenome> WidthSearchProblem::initial_population(std::size_t n,
                                                                std::uint64_t seed) const {
  std::vector<WidthGenome> pop;
  if (n == 0) return pop;
  pop.push_back(space_->identity());
  for (std::size_t i = 1; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    WidthGenome g;
    for (const WidthGene& gene : space_->genes()) {
      g.push_back(static_cast<int>(rng.between(0, gene.max_units)));
    }
    pop.push_back(std::move(g));
  }
  return pop;
}

WidthGenome WidthSearchProblem::crossover(const WidthGenome& a, const WidthGenome& b,
                                          Rng& rng) const {
  WidthGenome child(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) child[i] = rng.uniform() < 0.5 ? a[i] : b[i];
  return child;
}

void WidthSearchProblem::mutate(WidthGenome& g, Rng& rng) const {
  const auto& genes = space_->genes();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (rng.uniform() >= mutation_rate_) continue;
    const int step = rng.uniform() < 0.5 ? -1 : 1;
    g[i] = std::clamp(g[i] + step, 0, genes[i].max_units);
  }
}

ObjectiveVector WidthSearchProblem::evaluate(const WidthGenome& g) const {
  const EvaluatedGenome e = evaluate_genome(*space_, *base_, g, *calib_, 1);
  return {e.ppl, -e.ratio};
}

std::vector<TraceStep> depth_half(TransformerModel& model, double tau, const CalibrationSet& calib,
                                  const MetricSpec& metric, int workers, bool verbose) {
  return prune_depth(model, tau / 2.0, calib, metric, workers, verbose);
}

std::vector<EvaluatedGenome> nsga2_search(const WidthSpace& space, const TransformerModel& base,
                                          const CalibrationSet& calib,
                                          const SearchConfig& config) {
  if (space.genes().empty()) throw InputError("width search space is empty");
  const double rate = config.mutation_rate >= 0.0
                          ? config.mutation_rate
                          : 1.0 / static_cast<double>(space.genes().size());
  if (rate > 1.0) throw InputError("mutation_rate must lie in [0, 1]");
  const WidthSearchProblem problem(space, base, calib, rate);
  Nsga2Config nc;
  nc.evaluations = config.evaluations;
  nc.population_size = config.population_size;
  nc.crossover_rate = config.crossover_rate;
  nc.seed = config.seed;
  nc.workers = config.workers;
  const auto result = nsga2(problem, nc);

  std::vector<EvaluatedGenome> archive;
  archive.reserve(result.archive.size());
  for (const auto& ind : result.archive) {
    archive.push_back({ind.genome, ind.objectives[0], -ind.objectives[1], ind.generation, ind.index});
  }
  if (config.verbose) {
    std::cerr << "[EVOL] " << archive.size() << " evaluations, "
              << result.population.size() << " survivors\n";
  }
  return archive;
}

EvaluatedGenome select_final(const std::vector<EvaluatedGenome>& archive, double tau,
                             double epsilon) {
  if (archive.empty()) throw SearchError("select_final: empty archive");
  auto better = [](const EvaluatedGenome& a, const EvaluatedGenome& b) {
    if (a.ppl != b.ppl) return a.ppl < b.ppl;
    if (a.ratio != b.ratio) return a.ratio < b.ratio;
    return a.genome < b.genome;
  };
  auto best_of = [&](auto&& keep) -> const EvaluatedGenome* {
    const EvaluatedGenome* best = nullptr;
    for (const auto& e : archive) {
      if (keep(e) && (!best || better(e, *best))) best = &e;
    }
    return best;
  };
  const auto in_band = [&](const EvaluatedGenome& e) { return std::abs(e.ratio - tau) <= epsilon; };
  if (const auto* b = best_of([&](const EvaluatedGenome& e) { return in_band(e) && e.ratio >= tau; })) {
    return *b;
  }
  if (const auto* b = best_of(in_band)) return *b;
  if (const auto* b = best_of([&](const EvaluatedGenome& e) { return e.ratio >= tau; })) return *b;
  throw SearchError("no evaluated subnetwork reaches ratio " + std::to_string(tau) +
                    " - epsilon; increase the evaluation budget or widen the search space");
}

EvolResult multipruner_evol(TransformerModel model, double tau, const CalibrationSet& calib,
                            const SearchConfig& config) {
  if (!(tau >= 0.0 && tau < 1.0)) throw InputError("target ratio must lie in [0, 1)");
  if (calib.sequences.empty()) throw InputError("multipruner_evol: empty calibration set");
  EvolResult result;
  if (tau == 0.0) {
    result.model = materialize(model, model.descriptor);
    return result;
  }
  const int g_mlp = config.g_mlp > 0 ? config.g_mlp : std::max(1, model.config.hidden / 4);
  const CalibrationSet depth_calib = calib.head(static_cast<std::size_t>(config.calib_samples_depth));
  const CalibrationSet width_calib = calib.head(static_cast<std::size_t>(config.calib_samples_width));

  result.depth_steps = depth_half(model, tau, depth_calib, {}, config.workers, config.verbose);
  result.depth_ratio = pruning_ratio(model);
  result.reordering = apply_reordering(model, config.reorder_metric, &width_calib);

  const WidthSpace space(model, g_mlp);
  result.genes = space.genes();
  result.epsilon = config.ratio_tolerance >= 0.0 ? config.ratio_tolerance
                                                 : 0.5 * space.ratio_quantum();
  result.archive = nsga2_search(space, model, width_calib, config);
  result.selected = select_final(result.archive, tau, result.epsilon);
  result.model = materialize(model, space.descriptor(result.selected->genome));
  return result;
}

void write_archive_csv(const std::filesystem::path& path,
                       const std::vector<EvaluatedGenome>& archive) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  out << "gen,index,ratio,ppl,genome\n";
  for (const auto& e : archive) {
    out << e.generation << ',' << e.index << ',' << e.ratio << ',' << e.ppl << ',';
    for (std::size_t i = 0; i < e.genome.size(); ++i) out << (i ? " " : "") << e.genome[i];
    out << '\n';
  }
}

}  // namespace multipruner
