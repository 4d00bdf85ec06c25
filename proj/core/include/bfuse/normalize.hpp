#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bfuse/embedstore.hpp"
#include "bfuse/matrix.hpp"

namespace bfuse {

/// Representation regimes applied to embeddings before scoring.
enum class NormMode { kUN, kL2, kDN, kDNL2 };

/// Accepts "un", "l2", "dn", "dn+l2".
NormMode parse_norm_mode(const std::string& text);
const char* to_string(NormMode mode) noexcept;
bool uses_dn(NormMode mode) noexcept;

/// Order of the two steps in DN+L2.
enum class DnOrder { kL2First, kDnFirst };

DnOrder parse_dn_order(const std::string& text);
const char* to_string(DnOrder order) noexcept;

struct NormalizationStats {
  std::vector<double> mu_x;
  std::vector<double> mu_y;
  std::size_t subset_size = 0;
  std::uint64_t seed = 0;
  bool pre_l2 = false;
};

/// A backbone's embeddings after a normalization regime, in 64-bit.
struct TransformedBackbone {
  std::string name;
  NormMode mode = NormMode::kUN;
  MatrixD image;
  MatrixD text;
};

/// Throws NumericalError for an all-zero vector.
std::vector<double> l2_normalize(std::span<const double> v);

/// mu_x averages a seeded random subset of `pool` (clamped to the pool size,
/// the effective size is recorded); mu_y averages every text row. With
/// `pre_l2` rows are L2-normalized before averaging.
NormalizationStats compute_dn_stats(const BackboneRecord& backbone,
                                    const IndexSet& pool,
                                    std::size_t subset_size,
                                    std::uint64_t seed, bool pre_l2);

/// (text - mu_y / 2) . (image - mu_x / 2)
double dn_score(std::span<const double> image, std::span<const double> text,
                const NormalizationStats& stats);

/// Applies a regime. `stats` must be present exactly when the mode uses DN.
/// For DN+L2 with kL2First the stats must have been computed with pre_l2.
TransformedBackbone apply_mode(const BackboneRecord& backbone, NormMode mode,
                               const std::optional<NormalizationStats>& stats,
                               DnOrder order = DnOrder::kL2First);

struct DnOptions {
  std::size_t subset_size = 100;
  std::uint64_t seed = 0;
  DnOrder order = DnOrder::kL2First;
};

/// Computes DN stats when needed (from `pool`) and applies the mode.
TransformedBackbone prepare_backbone(const BackboneRecord& backbone,
                                     NormMode mode, const DnOptions& dn,
                                     const IndexSet& pool);

}  // namespace bfuse
