#include "bfuse/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "bfuse/error.hpp"

namespace bfuse {
namespace {

// -ln softmax(z / t)[label], summing the non-maximal terms through log1p so
// the loss stays strictly positive when the label dominates.
double sample_nll(std::span<const double> z, std::uint32_t label, double t) {
  const std::uint32_t top = argmax(z);
  const double m = z[top] / t;
  double rest = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    if (c != top) rest += std::exp(z[c] / t - m);
  }
  return (m - z[label] / t) + std::log1p(rest);
}

}  // namespace

double nll(const LogitMatrix& logits, const LabelVector& labels,
           const IndexSet& split, double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ConfigError("temperature must be positive and finite");
  }
  if (split.empty()) throw ConfigError("nll over an empty split");
  double acc = 0.0;
  for (std::size_t idx : split) {
    acc += sample_nll(logits.values.row(idx), labels.at(idx), t);
  }
  return acc / static_cast<double>(split.size());
}

CalibrationResult fit_temperature(const LogitMatrix& logits,
                                  const LabelVector& labels,
                                  const IndexSet& split,
                                  const CalibrationOptions& opts) {
  if (!(opts.t_min > 0.0) || !(opts.t_min < opts.t_max) ||
      opts.grid_points < 2) {
    throw ConfigError("invalid temperature search bounds");
  }
  CalibrationResult res;
  auto eval = [&](double t) {
    const double v = nll(logits, labels, split, t);
    res.search_trace.emplace_back(t, v);
    return v;
  };
  // Strictly lower NLL wins; equal NLL prefers t closer to 1.
  double best_t = 0.0;
  double best_v = 0.0;
  bool have_best = false;
  auto consider = [&](double t, double v) {
    if (!have_best || v < best_v ||
        (v == best_v && std::abs(std::log(t)) < std::abs(std::log(best_t)))) {
      best_t = t;
      best_v = v;
      have_best = true;
    }
  };

  const double lo_log = std::log(opts.t_min);
  const double hi_log = std::log(opts.t_max);
  const double step = (hi_log - lo_log) / static_cast<double>(opts.grid_points - 1);
  std::vector<double> grid(opts.grid_points);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid[k] = k + 1 == grid.size()
                  ? opts.t_max
                  : std::exp(lo_log + step * static_cast<double>(k));
  }
  grid.front() = opts.t_min;

  std::size_t best_k = 0;
  double best_grid_v = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double v = eval(grid[k]);
    if (k == 0 || v < best_grid_v) {
      best_grid_v = v;
      best_k = k;
    }
    consider(grid[k], v);
  }
  if (opts.t_min <= 1.0 && 1.0 <= opts.t_max) {
    res.nll_at_one = eval(1.0);
    consider(1.0, res.nll_at_one);
  } else {
    res.nll_at_one = nll(logits, labels, split, 1.0);
  }

  // Golden-section over log t on the bracket around the best grid point.
  double a = std::log(grid[best_k == 0 ? 0 : best_k - 1]);
  double b = std::log(grid[std::min(best_k + 1, grid.size() - 1)]);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  const double log_tol = std::log1p(opts.rel_tol);
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(std::exp(c));
  double fd = eval(std::exp(d));
  consider(std::exp(c), fc);
  consider(std::exp(d), fd);
  while (b - a > log_tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(std::exp(c));
      consider(std::exp(c), fc);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(std::exp(d));
      consider(std::exp(d), fd);
    }
  }

  res.temperature = std::clamp(best_t, opts.t_min, opts.t_max);
  res.final_nll = best_v;
  return res;
}

LogitMatrix apply_temperature(const LogitMatrix& logits, double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ConfigError("temperature must be positive and finite");
  }
  LogitMatrix out = logits;
  for (double& v : out.values.data()) v /= t;
  return out;
}

}  // namespace bfuse
