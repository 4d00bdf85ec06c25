#pragma once

#include <utility>
#include <vector>

#include "bfuse/zeroshot.hpp"

namespace bfuse {

struct CalibrationOptions {
  double t_min = 1e-2;
  double t_max = 1e2;
  std::size_t grid_points = 64;
  /// Golden-section stops once hi / lo - 1 drops below this.
  double rel_tol = 1e-4;
};

struct CalibrationResult {
  double temperature = 1.0;
  double final_nll = 0.0;
  double nll_at_one = 0.0;
  /// Every (t, nll) evaluated, in evaluation order.
  std::vector<std::pair<double, double>> search_trace;
};

/// Mean over `split` of -ln softmax(z_i / t)[label_i].
double nll(const LogitMatrix& logits, const LabelVector& labels,
           const IndexSet& split, double t);

/// Log-spaced grid over [t_min, t_max] plus t = 1, then golden-section
/// refinement in log t around the best grid point. Equal NLL resolves to the
/// t closest to 1 in log distance.
CalibrationResult fit_temperature(const LogitMatrix& logits,
                                  const LabelVector& labels,
                                  const IndexSet& split,
                                  const CalibrationOptions& opts = {});

/// Divides every logit by t. Throws ConfigError for t <= 0.
LogitMatrix apply_temperature(const LogitMatrix& logits, double t);

}  // namespace bfuse
