#include "bfuse/gac.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bfuse/error.hpp"
#include "bfuse/parallel.hpp"
#include "bfuse/random.hpp"

namespace bfuse {
namespace {

using Chromosome = std::vector<double>;

std::vector<double> evaluate(const std::vector<Chromosome>& pop,
                             std::span<const LogitMatrix> logits,
                             const LabelVector& labels, const IndexSet& rows,
                             std::size_t threads) {
  std::vector<double> fitness(pop.size());
  parallel_for(pop.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      fitness[k] = fused_accuracy(logits, pop[k], labels, rows);
    }
  });
  return fitness;
}

std::size_t tournament(const std::vector<double>& fitness, std::size_t size,
                       Rng& rng) {
  std::size_t best = static_cast<std::size_t>(rng.below(fitness.size()));
  for (std::size_t k = 1; k < size; ++k) {
    const auto cand = static_cast<std::size_t>(rng.below(fitness.size()));
    if (fitness[cand] > fitness[best] ||
        (fitness[cand] == fitness[best] && cand < best)) {
      best = cand;
    }
  }
  return best;
}

}  // namespace

void validate(const GacConfig& cfg) {
  if (cfg.population < cfg.elitism + 2) {
    throw ConfigError("GAC population must be at least elitism + 2");
  }
  if (!(cfg.lower < cfg.upper) || !std::isfinite(cfg.lower) ||
      !std::isfinite(cfg.upper)) {
    throw ConfigError("GAC bounds must be finite with lower < upper");
  }
  if (!(cfg.mutation_rate >= 0.0 && cfg.mutation_rate <= 1.0)) {
    throw ConfigError("GAC mutation rate must lie in [0, 1]");
  }
  if (!(cfg.mutation_sigma > 0.0) || !std::isfinite(cfg.mutation_sigma)) {
    throw ConfigError("GAC mutation sigma must be positive");
  }
  if (cfg.tournament_size < 1) {
    throw ConfigError("GAC tournament size must be >= 1");
  }
}

GacResult gac_search(std::span<const LogitMatrix> logits,
                     const LabelVector& labels, const IndexSet& fit_split,
                     const GacConfig& cfg) {
  validate(cfg);
  check_aligned(logits);
  if (fit_split.empty()) throw ConfigError("GAC fit split is empty");
  const std::size_t B = logits.size();
  const std::size_t threads = resolve_threads(cfg.threads);
  Rng rng(cfg.seed);
  auto clamp = [&](double v) { return std::clamp(v, cfg.lower, cfg.upper); };

  std::vector<Chromosome> pop;
  pop.reserve(cfg.population);
  pop.emplace_back(B, clamp(1.0));
  for (std::size_t b = 0; b < B && pop.size() < cfg.population; ++b) {
    Chromosome unit(B, clamp(0.0));
    unit[b] = clamp(1.0);
    pop.push_back(std::move(unit));
  }
  while (pop.size() < cfg.population) {
    Chromosome c(B);
    for (double& g : c) g = rng.uniform(cfg.lower, cfg.upper);
    pop.push_back(std::move(c));
  }

  GacResult res;
  std::vector<double> fitness = evaluate(pop, logits, labels, fit_split, threads);
  auto record_best = [&] {
    for (std::size_t k = 0; k < pop.size(); ++k) {
      if (res.temperatures.empty() || fitness[k] > res.best_fitness) {
        res.best_fitness = fitness[k];
        res.temperatures = pop[k];
      }
    }
    res.fitness_trace.push_back(res.best_fitness);
  };
  record_best();

  std::vector<std::size_t> order(pop.size());
  for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return fitness[a] > fitness[b];
    });
    std::vector<Chromosome> next;
    next.reserve(cfg.population);
    for (std::size_t e = 0; e < cfg.elitism; ++e) next.push_back(pop[order[e]]);
    while (next.size() < cfg.population) {
      const auto& a = pop[tournament(fitness, cfg.tournament_size, rng)];
      const auto& b = pop[tournament(fitness, cfg.tournament_size, rng)];
      Chromosome child(B);
      for (std::size_t g = 0; g < B; ++g) {
        child[g] = rng.uniform() < 0.5 ? a[g] : b[g];
        if (rng.uniform() < cfg.mutation_rate) {
          child[g] = clamp(child[g] + cfg.mutation_sigma * rng.normal());
        }
      }
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    fitness = evaluate(pop, logits, labels, fit_split, threads);
    record_best();
  }
  return res;
}

}  // namespace bfuse
