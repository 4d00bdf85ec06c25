#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bfuse/combine.hpp"

namespace bfuse {

struct GacConfig {
  std::size_t population = 64;
  std::size_t generations = 200;
  double mutation_rate = 0.2;
  double mutation_sigma = 0.1;
  std::size_t tournament_size = 3;
  std::size_t elitism = 2;
  double lower = 0.0;
  double upper = 10.0;
  std::uint64_t seed = 0;
  /// Workers for fitness evaluation; 0 resolves via resolve_threads().
  std::size_t threads = 1;
};

/// Throws ConfigError when the configuration is unusable.
void validate(const GacConfig& cfg);

struct GacResult {
  std::vector<double> temperatures;
  double best_fitness = 0.0;
  /// Best fitness seen so far, one entry per generation (initial population
  /// included as generation 0).
  std::vector<double> fitness_trace;
};

/// Real-valued genetic search for global temperatures maximizing fused
/// accuracy on `fit_split`.
///
/// The initial population holds the uniform chromosome (all ones), each unit
/// vector e_b, and uniform random chromosomes in [lower, upper] for the rest
/// (clamped to the bounds). Each generation keeps the `elitism` fittest
/// unchanged, then fills the population with children of two
/// tournament-selected parents: uniform crossover (per-gene coin flip), then
/// per-gene Gaussian mutation with probability `mutation_rate`, clamped to
/// the bounds. Fitness ties in ranking and tournaments go to the lower
/// population index; the all-time best keeps the earliest chromosome.
GacResult gac_search(std::span<const LogitMatrix> logits,
                     const LabelVector& labels, const IndexSet& fit_split,
                     const GacConfig& cfg);

}  // namespace bfuse
