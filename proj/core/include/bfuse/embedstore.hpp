#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bfuse/matrix.hpp"

namespace bfuse {

struct BackboneInfo {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const BackboneInfo&) const = default;
};

struct Manifest {
  int version = 1;
  std::string dataset_name;
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<BackboneInfo> backbones;

  bool operator==(const Manifest&) const = default;
};

/// Raw encoder outputs for one backbone: N x D image rows and C x D text rows.
struct BackboneRecord {
  std::string name;
  MatrixF image;
  MatrixF text;

  std::size_t dim() const noexcept { return image.cols(); }
  bool operator==(const BackboneRecord&) const = default;
};

using LabelVector = std::vector<std::uint32_t>;

struct SplitSpec {
  IndexSet train;
  IndexSet probe_holdout;
  IndexSet test;

  bool operator==(const SplitSpec&) const = default;
};

enum class SplitName { kTrain, kProbeHoldout, kTest };

SplitName parse_split_name(const std::string& name);
const char* to_string(SplitName name) noexcept;

struct EmbeddingStore {
  Manifest manifest;
  std::vector<BackboneRecord> backbones;
  LabelVector labels;
  SplitSpec splits;

  std::size_t num_samples() const noexcept { return manifest.num_samples; }
  std::size_t num_classes() const noexcept { return manifest.num_classes; }
  std::size_t num_backbones() const noexcept { return backbones.size(); }

  const IndexSet& split(SplitName name) const;
  /// Throws ConfigError for an unknown backbone.
  const BackboneRecord& backbone(const std::string& name) const;

  bool operator==(const EmbeddingStore&) const = default;
};

/// Checks every structural invariant; throws StoreError on the first failure.
///
/// Backbone names double as directory names, so they are restricted to
/// [A-Za-z0-9._+-] and may not be "." or "..".
void validate(const EmbeddingStore& store);

/// Reads a store directory (manifest.json, labels.u32le, splits.json and one
/// <name>/{image,text}.f32le pair per backbone) and validates it.
EmbeddingStore load_store(const std::filesystem::path& dir);

/// Writes the layout read by load_store. Refuses to write into an existing
/// non-empty directory unless `overwrite` is set.
void save_store(const EmbeddingStore& store, const std::filesystem::path& dir,
                bool overwrite = false);

struct SynthParams {
  std::uint64_t seed = 7;
  std::size_t num_backbones = 5;
  std::size_t num_samples = 2000;
  std::size_t num_classes = 10;
  std::size_t dim = 16;
  /// One entry per backbone, each >= 0. Empty means a linear ramp 0.8..1.2.
  std::vector<double> per_backbone_noise;
  double shared_noise = 0.3;
  /// Fraction of each class routed to the test split.
  double test_fraction = 0.5;
  /// Fraction of each class's non-test samples routed to probe_holdout.
  double holdout_fraction = 0.1;
};

/// Noise vectors have i.i.d. N(0, (kSynthNoiseScale^2)/D) entries, so a noise
/// level of 1 has expected norm close to kSynthNoiseScale against unit-norm
/// class prototypes.
inline constexpr double kSynthNoiseScale = 2.0;

/// Seeded synthetic store. Class prototypes P_c are shared by all backbones;
/// each backbone sees them through its own random rotation R_b, so its text
/// rows are C random unit vectors while the shared noise still pushes every
/// backbone toward the same wrong classes. Draw order from one Rng(seed):
///   1. prototypes, class-major, D normals each, L2-normalized
///   2. one rotation per backbone: D x D normals (row-major), rows
///      orthonormalized by modified Gram-Schmidt
///   3. shared noise g_i for every sample i (D normals each)
///   4. private noise h_{i,b}, backbone-major then sample-major
///   5. per-class Fisher-Yates shuffles (classes ascending) assigning test,
///      probe_holdout and train
/// Labels are i mod C. Text row c of backbone b is R_b P_c; image row i is
/// normalize(R_b (P_{label_i} + shared * g_i) + noise_b * h_{i,b}).
EmbeddingStore synth_generate(const SynthParams& params);

/// Ramp of `count` evenly spaced values from lo to hi inclusive.
std::vector<double> noise_ramp(std::size_t count, double lo, double hi);

/// Up to n indices per class from `split`, chosen by a seeded shuffle of each
/// class's members; classes with fewer than n members contribute all of them.
/// Output is sorted ascending.
IndexSet subsample_per_class(const IndexSet& split, const LabelVector& labels,
                             std::size_t num_classes, std::size_t n,
                             std::uint64_t seed);

}  // namespace bfuse
