#pragma once

// Generic NSGA-II (all objectives minimized).
//
// A Problem supplies:
//   using Genome = ...;
//   std::vector<Genome> initial_population(std::size_t n, std::uint64_t seed) const;
//   Genome crossover(const Genome& a, const Genome& b, Rng& rng) const;
//   void mutate(Genome& g, Rng& rng) const;
//   std::vector<double> evaluate(const Genome& g) const;   // thread-safe

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "multipruner/errors.hpp"
#include "multipruner/parallel.hpp"
#include "multipruner/random.hpp"

namespace multipruner {

using ObjectiveVector = std::vector<double>;

/// a dominates b: no worse in every objective and strictly better in one.
inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  bool strictly = false;
  for (std::size_t m = 0; m < a.size(); ++m) {
    if (a[m] > b[m]) return false;
    if (a[m] < b[m]) strictly = true;
  }
  return strictly;
}

/// Fast non-dominated sort. Front 0 is the non-dominated set; indices inside
/// each front are ascending.
inline std::vector<std::vector<std::size_t>> non_dominated_sort(
    const std::vector<ObjectiveVector>& points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> dominated_by_me(n);
  std::vector<std::size_t> domination_count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(points[p], points[q])) {
        dominated_by_me[p].push_back(q);
      } else if (dominates(points[q], points[p])) {
        ++domination_count[p];
      }
    }
    if (domination_count[p] == 0) fronts[0].push_back(p);
  }
  while (!fronts.back().empty()) {
    std::vector<std::size_t> next;
    for (std::size_t p : fronts.back()) {
      for (std::size_t q : dominated_by_me[p]) {
        if (--domination_count[q] == 0) next.push_back(q);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

/// Crowding distance of each member of `front` (same order as `front`).
/// Extremes of every objective with a nonzero range get +infinity; an
/// objective that is constant over the front contributes nothing.
inline std::vector<double> crowding_distance(const std::vector<ObjectiveVector>& points,
                                             const std::vector<std::size_t>& front) {
  const std::size_t n = front.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, 0.0);
  if (n <= 2) {
    std::fill(dist.begin(), dist.end(), inf);
    return dist;
  }
  const std::size_t n_obj = points[front[0]].size();
  std::vector<std::size_t> order(n);
  for (std::size_t m = 0; m < n_obj; ++m) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return points[front[a]][m] < points[front[b]][m];
    });
    const double lo = points[front[order.front()]][m];
    const double hi = points[front[order.back()]][m];
    if (!(hi > lo)) continue;
    dist[order.front()] = inf;
    dist[order.back()] = inf;
    for (std::size_t k = 1; k + 1 < n; ++k) {
      const double gap = points[front[order[k + 1]]][m] - points[front[order[k - 1]]][m];
      dist[order[k]] += gap / (hi - lo);
    }
  }
  return dist;
}

/// Area dominated by `points` and bounded by `ref` (two minimized objectives).
inline double hypervolume_2d(std::vector<ObjectiveVector> points, const ObjectiveVector& ref) {
  std::erase_if(points, [&](const ObjectiveVector& p) { return !(p[0] < ref[0] && p[1] < ref[1]); });
  std::sort(points.begin(), points.end());
  double hv = 0.0;
  double level = ref[1];
  for (const auto& p : points) {
    if (p[1] < level) {
      hv += (ref[0] - p[0]) * (level - p[1]);
      level = p[1];
    }
  }
  return hv;
}

template <typename Genome>
struct Individual {
  Genome genome{};
  ObjectiveVector objectives;
  int rank = -1;
  double crowding = 0.0;
  int generation = 0;
  int index = 0;  // position within its generation
};

/// Fronts over evaluated individuals. Throws StateError if any individual
/// has no objectives yet.
template <typename Genome>
std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<Individual<Genome>>& pop) {
  std::vector<ObjectiveVector> pts;
  pts.reserve(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (pop[i].objectives.empty()) {
      throw StateError("non_dominated_sort: individual " + std::to_string(i) + " is not evaluated");
    }
    if (pop[i].objectives.size() != pop[0].objectives.size()) {
      throw StateError("non_dominated_sort: objective counts differ");
    }
    pts.push_back(pop[i].objectives);
  }
  return non_dominated_sort(pts);
}

struct Nsga2Config {
  int evaluations = 1000;
  int population_size = 50;
  double crossover_rate = 0.9;
  std::uint64_t seed = 0;
  int workers = 0;
};

template <typename Genome>
struct Nsga2Result {
  std::vector<Individual<Genome>> archive;     // every evaluation, in order
  std::vector<Individual<Genome>> population;  // survivors after the last generation
};

namespace detail {

template <typename Genome>
void assign_rank_and_crowding(std::vector<Individual<Genome>>& pop) {
  std::vector<ObjectiveVector> pts;
  pts.reserve(pop.size());
  for (const auto& ind : pop) pts.push_back(ind.objectives);
  const auto fronts = non_dominated_sort(pts);
  for (std::size_t r = 0; r < fronts.size(); ++r) {
    const auto cd = crowding_distance(pts, fronts[r]);
    for (std::size_t k = 0; k < fronts[r].size(); ++k) {
      pop[fronts[r][k]].rank = static_cast<int>(r);
      pop[fronts[r][k]].crowding = cd[k];
    }
  }
}

// Elitist truncation: whole fronts first, then the most crowded-apart members
// of the front that overflows.
template <typename Genome>
std::vector<Individual<Genome>> survivors(std::vector<Individual<Genome>> pool, std::size_t keep) {
  assign_rank_and_crowding(pool);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a].rank != pool[b].rank) return pool[a].rank < pool[b].rank;
    return pool[a].crowding > pool[b].crowding;
  });
  std::vector<Individual<Genome>> out;
  for (std::size_t i = 0; i < std::min(keep, order.size()); ++i) out.push_back(pool[order[i]]);
  // Ranks and crowding of the kept set are recomputed for tournament use.
  assign_rank_and_crowding(out);
  return out;
}

template <typename Genome>
const Individual<Genome>& tournament(const std::vector<Individual<Genome>>& pop, Rng& rng) {
  const auto a = static_cast<std::size_t>(rng.below(pop.size()));
  const auto b = static_cast<std::size_t>(rng.below(pop.size()));
  const auto& x = pop[a];
  const auto& y = pop[b];
  if (x.rank != y.rank) return x.rank < y.rank ? x : y;
  if (x.crowding != y.crowding) return x.crowding > y.crowding ? x : y;
  return a <= b ? x : y;
}

}  // namespace detail

/// Runs until `evaluations` genomes have been evaluated. Each offspring draws
/// from its own RNG stream keyed by (seed, generation, index), and
/// evaluations write to fixed slots, so results do not depend on threading.
template <typename Problem>
Nsga2Result<typename Problem::Genome> nsga2(const Problem& problem, const Nsga2Config& config) {
  using Genome = typename Problem::Genome;
  if (config.population_size < 1) throw InputError("population_size must be >= 1");
  if (config.evaluations < config.population_size) {
    throw InputError("evaluation budget (" + std::to_string(config.evaluations) +
                     ") is smaller than the population size (" +
                     std::to_string(config.population_size) + ")");
  }
  if (config.crossover_rate < 0.0 || config.crossover_rate > 1.0) {
    throw InputError("crossover_rate must lie in [0, 1]");
  }
  const auto pop_size = static_cast<std::size_t>(config.population_size);

  auto evaluate_all = [&](std::vector<Individual<Genome>>& batch) {
    parallel_for(
        batch.size(),
        [&](std::size_t i) { batch[i].objectives = problem.evaluate(batch[i].genome); },
        config.workers);
  };

  Nsga2Result<Genome> result;
  std::vector<Individual<Genome>> population;
  {
    auto genomes = problem.initial_population(pop_size, derive_seed(config.seed, 0));
    for (std::size_t i = 0; i < genomes.size(); ++i) {
      Individual<Genome> ind;
      ind.genome = std::move(genomes[i]);
      ind.generation = 0;
      ind.index = static_cast<int>(i);
      population.push_back(std::move(ind));
    }
    evaluate_all(population);
    result.archive.insert(result.archive.end(), population.begin(), population.end());
    detail::assign_rank_and_crowding(population);
  }

  for (int gen = 1; static_cast<int>(result.archive.size()) < config.evaluations; ++gen) {
    const std::size_t remaining = static_cast<std::size_t>(config.evaluations) - result.archive.size();
    const std::size_t n_children = std::min(pop_size, remaining);
    std::vector<Individual<Genome>> children(n_children);
    for (std::size_t i = 0; i < n_children; ++i) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(gen), i));
      const auto& p1 = detail::tournament(population, rng);
      const auto& p2 = detail::tournament(population, rng);
      Genome child = rng.uniform() < config.crossover_rate
                         ? problem.crossover(p1.genome, p2.genome, rng)
                         : p1.genome;
      problem.mutate(child, rng);
      children[i].genome = std::move(child);
      children[i].generation = gen;
      children[i].index = static_cast<int>(i);
    }
    evaluate_all(children);
    result.archive.insert(result.archive.end(), children.begin(), children.end());
    std::vector<Individual<Genome>> pool = population;
    pool.insert(pool.end(), children.begin(), children.end());
    population = detail::survivors(std::move(pool), pop_size);
  }
  result.population = std::move(population);
  return result;
}

}  // namespace multipruner
