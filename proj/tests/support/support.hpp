#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bfuse/analyze.hpp"
#include "bfuse/embedstore.hpp"
#include "bfuse/random.hpp"
#include "bfuse/zeroshot.hpp"

namespace bfuse::testing {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

IndexSet iota_set(std::size_t n);

struct RandomStoreShape {
  std::size_t min_samples = 1;
  std::size_t max_samples = 40;
  std::size_t min_backbones = 1;
  std::size_t max_backbones = 4;
  /// Guarantees every split has at least one index (needs N >= 3).
  bool nonempty_splits = false;
};

/// Valid store with random shape, extreme float values (signed zeros,
/// subnormals, float max) and random disjoint splits.
EmbeddingStore random_store(Rng& rng, const RandomStoreShape& shape = {});

/// Byte-level equality of every blob, which also separates -0 from +0.
bool bit_identical(const EmbeddingStore& a, const EmbeddingStore& b);

std::vector<char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<char>& b);

inline constexpr std::size_t kNumCorruptions = 20;

/// Applies corruption `kind` (0 <= kind < kNumCorruptions) to a saved store
/// with B >= 2 and nonempty splits. Returns a short description.
std::string corrupt_store(const std::filesystem::path& dir, std::size_t kind,
                          Rng& rng);

/// The default synthetic fixture (seed 7), generated once.
const EmbeddingStore& seed7();
/// Its L2 zero-shot logits, DN pool = test split.
const std::vector<LogitMatrix>& seed7_logits();

LogitMatrix random_logits(Rng& rng, std::size_t n, std::size_t c,
                          double scale, const std::string& name = "r");
LabelVector random_labels(Rng& rng, std::size_t n, std::size_t c);

/// Argmin of NLL over `points` log-spaced temperatures on [lo, hi].
double dense_grid_temperature(const LogitMatrix& logits,
                              const LabelVector& labels, const IndexSet& split,
                              std::size_t points, double lo = 1e-2,
                              double hi = 1e2);

struct GridOptimum {
  double accuracy = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;
};

/// Exhaustive search of fused accuracy over an n x n grid on [lo, hi]^2.
GridOptimum grid_search_b2(std::span<const LogitMatrix> logits,
                           const LabelVector& labels, const IndexSet& split,
                           std::size_t n = 200, double lo = 0.0,
                           double hi = 10.0);

struct ContrivedB2 {
  std::vector<LogitMatrix> logits;
  LabelVector labels;
};

/// Two backbones with complementary failures: where one is wrong, it is wrong
/// by a small margin while the other is right by a wide one, with magnitudes
/// varied so that no single weight ratio is trivially optimal.
ContrivedB2 contrived_b2(Rng& rng, std::size_t n = 200, std::size_t c = 4);

/// |a - b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor = 1e-6);

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to each entry of `params` (perturbed in place and
/// restored).
double max_gradient_error(std::span<double> params,
                          std::span<const double> analytic,
                          const std::function<double()>& loss, double h);

/// Per-sample subset enumeration: mask of correct backbones -> count.
std::map<std::uint32_t, std::size_t> brute_force_venn(
    const CorrectnessMatrix& cm, std::size_t* none);

CorrectnessMatrix random_correctness(Rng& rng, std::size_t b, std::size_t n,
                                     double p_correct);

/// FNV-1a 64 over the correctness bytes.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);

}  // namespace bfuse::testing
