#include "bfuse/normalize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bfuse/error.hpp"
#include "bfuse/random.hpp"

namespace bfuse {
namespace {

std::vector<double> widen(std::span<const float> row) {
  return {row.begin(), row.end()};
}

MatrixD widen(const MatrixF& m) {
  MatrixD out(m.rows(), m.cols());
  std::copy(m.data().begin(), m.data().end(), out.data().begin());
  return out;
}

void l2_rows(MatrixD& m, const std::string& what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    if (sq == 0.0) {
      throw NumericalError("cannot L2-normalize zero row " +
                           std::to_string(r) + " of " + what);
    }
    const double norm = std::sqrt(sq);
    for (double& v : row) v /= norm;
  }
}

void subtract_half(MatrixD& m, const std::vector<double>& mu) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] -= 0.5 * mu[d];
  }
}

}  // namespace

NormMode parse_norm_mode(const std::string& text) {
  if (text == "un") return NormMode::kUN;
  if (text == "l2") return NormMode::kL2;
  if (text == "dn") return NormMode::kDN;
  if (text == "dn+l2") return NormMode::kDNL2;
  throw ConfigError("unknown normalization '" + text +
                    "' (expected un, l2, dn, dn+l2)");
}

const char* to_string(NormMode mode) noexcept {
  switch (mode) {
    case NormMode::kUN:
      return "un";
    case NormMode::kL2:
      return "l2";
    case NormMode::kDN:
      return "dn";
    case NormMode::kDNL2:
      return "dn+l2";
  }
  return "?";
}

bool uses_dn(NormMode mode) noexcept {
  return mode == NormMode::kDN || mode == NormMode::kDNL2;
}

DnOrder parse_dn_order(const std::string& text) {
  if (text == "l2-first") return DnOrder::kL2First;
  if (text == "dn-first") return DnOrder::kDnFirst;
  throw ConfigError("unknown DN order '" + text +
                    "' (expected l2-first, dn-first)");
}

const char* to_string(DnOrder order) noexcept {
  return order == DnOrder::kL2First ? "l2-first" : "dn-first";
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0 || !std::isfinite(sq)) {
    throw NumericalError("cannot L2-normalize a zero or non-finite vector");
  }
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

NormalizationStats compute_dn_stats(const BackboneRecord& backbone,
                                    const IndexSet& pool,
                                    std::size_t subset_size,
                                    std::uint64_t seed, bool pre_l2) {
  if (subset_size < 1) throw ConfigError("DN subset size must be >= 1");
  if (pool.empty()) throw ConfigError("DN sample pool is empty");
  const std::size_t D = backbone.dim();

  IndexSet chosen = pool;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(chosen));
  chosen.resize(std::min(subset_size, chosen.size()));

  NormalizationStats stats;
  stats.subset_size = chosen.size();
  stats.seed = seed;
  stats.pre_l2 = pre_l2;
  stats.mu_x.assign(D, 0.0);
  stats.mu_y.assign(D, 0.0);

  auto accumulate = [&](std::vector<double>& acc, std::span<const float> row) {
    std::vector<double> v = widen(row);
    if (pre_l2) v = l2_normalize(v);
    for (std::size_t d = 0; d < D; ++d) acc[d] += v[d];
  };
  for (std::size_t idx : chosen) {
    if (idx >= backbone.image.rows()) {
      throw ConfigError("DN pool index out of range");
    }
    accumulate(stats.mu_x, backbone.image.row(idx));
  }
  for (std::size_t c = 0; c < backbone.text.rows(); ++c) {
    accumulate(stats.mu_y, backbone.text.row(c));
  }
  for (double& v : stats.mu_x) v /= static_cast<double>(chosen.size());
  for (double& v : stats.mu_y) v /= static_cast<double>(backbone.text.rows());
  return stats;
}

double dn_score(std::span<const double> image, std::span<const double> text,
                const NormalizationStats& stats) {
  const std::size_t D = image.size();
  if (text.size() != D || stats.mu_x.size() != D || stats.mu_y.size() != D) {
    throw ConfigError("dn_score: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    acc += (text[d] - 0.5 * stats.mu_y[d]) * (image[d] - 0.5 * stats.mu_x[d]);
  }
  return acc;
}

TransformedBackbone apply_mode(const BackboneRecord& backbone, NormMode mode,
                               const std::optional<NormalizationStats>& stats,
                               DnOrder order) {
  if (uses_dn(mode) != stats.has_value()) {
    throw ConfigError(std::string("normalization '") + to_string(mode) +
                      (stats ? "' takes no DN statistics"
                             : "' requires DN statistics"));
  }
  if (stats && (stats->mu_x.size() != backbone.dim() ||
                stats->mu_y.size() != backbone.dim())) {
    throw ConfigError("DN statistics dimension mismatch for '" +
                      backbone.name + "'");
  }
  TransformedBackbone out;
  out.name = backbone.name;
  out.mode = mode;
  out.image = widen(backbone.image);
  out.text = widen(backbone.text);
  switch (mode) {
    case NormMode::kUN:
      break;
    case NormMode::kL2:
      l2_rows(out.image, backbone.name + " image");
      l2_rows(out.text, backbone.name + " text");
      break;
    case NormMode::kDN:
      subtract_half(out.image, stats->mu_x);
      subtract_half(out.text, stats->mu_y);
      break;
    case NormMode::kDNL2:
      if (order == DnOrder::kL2First) {
        if (!stats->pre_l2) {
          throw ConfigError("l2-first DN+L2 needs stats on L2-normalized rows");
        }
        l2_rows(out.image, backbone.name + " image");
        l2_rows(out.text, backbone.name + " text");
        subtract_half(out.image, stats->mu_x);
        subtract_half(out.text, stats->mu_y);
      } else {
        if (stats->pre_l2) {
          throw ConfigError("dn-first DN+L2 needs stats on raw rows");
        }
        subtract_half(out.image, stats->mu_x);
        subtract_half(out.text, stats->mu_y);
        l2_rows(out.image, backbone.name + " image");
        l2_rows(out.text, backbone.name + " text");
      }
      break;
  }
  return out;
}

TransformedBackbone prepare_backbone(const BackboneRecord& backbone,
                                     NormMode mode, const DnOptions& dn,
                                     const IndexSet& pool) {
  std::optional<NormalizationStats> stats;
  if (uses_dn(mode)) {
    const bool pre_l2 =
        mode == NormMode::kDNL2 && dn.order == DnOrder::kL2First;
    stats = compute_dn_stats(backbone, pool, dn.subset_size, dn.seed, pre_l2);
  }
  return apply_mode(backbone, mode, stats, dn.order);
}

}  // namespace bfuse
