#pragma once

// Depth pruning to half the target, then an NSGA-II search over per-block
// widths (MLP channels in g_mlp steps, attention in whole KV groups) scored by
// (calibration PPL, pruning ratio). The final subnetwork is the lowest-PPL
// archive member on the target-ratio band.

#include <filesystem>
#include <optional>
#include <vector>

#include "multipruner/nsga2.hpp"
#include "multipruner/pruner.hpp"

namespace multipruner {

struct SearchConfig {
  int evaluations = 1000;  // N, including the initial population
  int population_size = 50;
  double mutation_rate = -1.0;  // per gene; < 0 selects 1 / number of genes
  double crossover_rate = 0.9;
  std::uint64_t seed = 0;
  double ratio_tolerance = -1.0;  // epsilon; < 0 selects half the smallest gene quantum
  int g_mlp = 0;                  // 0 selects hidden / 4
  ReorderMetric reorder_metric = ReorderMetric::L1Norm;
  int calib_samples_depth = 256;
  int calib_samples_width = 128;
  int workers = 0;
  bool verbose = false;
};

/// Kept units per searchable block: MLP channel groups or KV groups.
using WidthGenome = std::vector<int>;

struct WidthGene {
  BlockId block;
  int unit = 1;       // channels per step (MLP) or 1 KV group (ATTN)
  int max_units = 0;  // value of the identity genome
};

/// The search space S: one gene per block that survived depth pruning.
class WidthSpace {
 public:
  WidthSpace(const TransformerModel& base, int g_mlp);

  const std::vector<WidthGene>& genes() const { return genes_; }
  WidthGenome identity() const;
  /// Throws InputError when a gene is out of range or the length is wrong.
  void validate(const WidthGenome& genome) const;
  ArchDescriptor descriptor(const WidthGenome& genome) const;
  /// Smallest pruning-ratio change caused by one gene step.
  double ratio_quantum() const;

 private:
  const TransformerModel* base_;
  std::vector<WidthGene> genes_;
};

struct EvaluatedGenome {
  WidthGenome genome;
  double ppl = 0.0;
  double ratio = 0.0;
  int generation = 0;
  int index = 0;
};

/// Objectives of one genome on the depth-pruned base model (masked, no
/// materialization).
EvaluatedGenome evaluate_genome(const WidthSpace& space, const TransformerModel& base,
                                const WidthGenome& genome, const CalibrationSet& calib,
                                int workers = 1);

/// NSGA-II problem wrapper over the width space; objectives (ppl, -ratio).
class WidthSearchProblem {
 public:
  using Genome = WidthGenome;

  WidthSearchProblem(const WidthSpace& space, const TransformerModel& base,
                     const CalibrationSet& calib, double mutation_rate);

  std::vector<Genome> initial_population(std::size_t n, std::uint64_t seed) const;
  Genome crossover(const Genome& a, const Genome& b, Rng& rng) const;
  void mutate(Genome& g, Rng& rng) const;
  ObjectiveVector evaluate(const Genome& g) const;

 private:
  const WidthSpace* space_;
  const TransformerModel* base_;
  const CalibrationSet* calib_;
  double mutation_rate_;
};

/// Depth stage with threshold tau / 2.
std::vector<TraceStep> depth_half(TransformerModel& model, double tau, const CalibrationSet& calib,
                                  const MetricSpec& metric = {}, int workers = 0,
                                  bool verbose = false);

/// Runs NSGA-II over `space` on the (already reordered) base model and returns
/// every evaluated genome in evaluation order.
std::vector<EvaluatedGenome> nsga2_search(const WidthSpace& space, const TransformerModel& base,
                                          const CalibrationSet& calib, const SearchConfig& config);

/// Lowest-PPL member with |ratio - tau| <= epsilon, preferring ratio >= tau;
/// otherwise the lowest-PPL member with ratio >= tau. Ties: smaller ratio,
/// then lexicographically smaller genome. Throws SearchError if nothing
/// reaches tau - epsilon.
EvaluatedGenome select_final(const std::vector<EvaluatedGenome>& archive, double tau,
                             double epsilon);

struct EvolResult {
  TransformerModel model;  // materialized
  std::vector<TraceStep> depth_steps;
  std::optional<PermutationReport> reordering;
  std::vector<EvaluatedGenome> archive;
  std::optional<EvaluatedGenome> selected;
  std::vector<WidthGene> genes;
  double epsilon = 0.0;
  double depth_ratio = 0.0;
};

EvolResult multipruner_evol(TransformerModel model, double tau, const CalibrationSet& calib,
                            const SearchConfig& config);

/// `gen,index,ratio,ppl,genome` rows; the genome is space-separated integers.
void write_archive_csv(const std::filesystem::path& path,
                       const std::vector<EvaluatedGenome>& archive);

}  // namespace multipruner
