#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "bfuse/embedstore.hpp"
#include "bfuse/zeroshot.hpp"

namespace bfuse {

/// B x n correctness flags over the samples of one split, in split order.
struct CorrectnessMatrix {
  std::vector<std::string> backbone_names;
  std::size_t num_samples = 0;
  std::vector<std::uint8_t> correct;

  std::size_t num_backbones() const noexcept { return backbone_names.size(); }
  bool at(std::size_t b, std::size_t i) const {
    return correct[b * num_samples + i] != 0;
  }
  std::size_t row_count(std::size_t b) const;
};

CorrectnessMatrix correctness(std::span<const PredictionVector> preds,
                              const std::vector<std::string>& names,
                              const LabelVector& labels, const IndexSet& split);

/// Fraction of samples that at least one backbone gets right.
double oracle_accuracy(const CorrectnessMatrix& cm);

inline constexpr std::size_t kMaxVennBackbones = 16;

/// Samples bucketed by the exact set of backbones correct on them. Only
/// non-empty subsets with a nonzero count appear in `counts`; bit b of the key
/// stands for backbone_names[b].
struct VennPartition {
  std::vector<std::string> backbone_names;
  std::size_t num_samples = 0;
  std::size_t none_correct = 0;
  std::map<std::uint32_t, std::size_t> counts;

  /// Sorted names of the backbones in `mask`.
  std::vector<std::string> subset_names(std::uint32_t mask) const;
  std::size_t backbone_total(std::size_t b) const;
};

VennPartition venn_partition(const CorrectnessMatrix& cm);

/// One fused-method result; accuracies in percent.
struct Report {
  std::string method;
  std::string norm;
  std::string source;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> backbone_accuracy;
  double fused_accuracy = 0.0;
  std::string best_backbone;
  double best_single = 0.0;
  double delta = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

/// Fills best_backbone, best_single and delta from the other fields. Ties for
/// best go to the earliest backbone.
void finalize(Report& report);

struct DeltaSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
};

DeltaSummary delta_table(std::span<const Report> reports);

enum class ReportFormat { kJson, kCsv };
ReportFormat parse_report_format(const std::string& text);

nlohmann::json to_json(const Report& report);
nlohmann::json to_json(const VennPartition& venn);
nlohmann::json to_json(const DeltaSummary& summary,
                       std::span<const Report> reports);
Report report_from_json(const nlohmann::json& j);

std::string to_csv(const Report& report);
std::string to_csv(const VennPartition& venn);
std::string to_csv(const DeltaSummary& summary, std::span<const Report> reports);

/// Serializes deterministically: sorted keys, two-space indent, trailing
/// newline for JSON; fixed column order for CSV.
std::string render(const nlohmann::json& j);

/// Writes `text` to `path` ("-" means stdout is handled by the caller).
void write_text(const std::filesystem::path& path, const std::string& text);

void emit_report(const Report& report, ReportFormat format,
                 const std::filesystem::path& path);
void emit_report(const VennPartition& venn, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace bfuse
