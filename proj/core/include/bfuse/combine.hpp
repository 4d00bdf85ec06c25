#pragma once

#include <span>
#include <vector>

#include "bfuse/matrix.hpp"
#include "bfuse/zeroshot.hpp"

namespace bfuse {

/// Backbone weights t_b: a single 1 x B row shared by every sample, or one
/// row per sample (N x B).
class TemperatureVector {
 public:
  TemperatureVector() = default;
  static TemperatureVector global(std::vector<double> t);
  static TemperatureVector per_sample(MatrixD t);

  std::size_t num_backbones() const noexcept { return values_.cols(); }
  bool is_per_sample() const noexcept { return per_sample_; }
  std::span<const double> for_sample(std::size_t i) const {
    return values_.row(per_sample_ ? i : 0);
  }
  const MatrixD& values() const noexcept { return values_; }

 private:
  MatrixD values_;
  bool per_sample_ = false;
};

struct FusedPrediction {
  PredictionVector preds;
  ProbMatrix probs;
};

/// Throws ConfigError unless every matrix has the same shape.
void check_aligned(std::span<const LogitMatrix> logits);

/// Majority of top-1 votes. Ties between labels go to the label backed by the
/// single most confident vote, then to the lowest class index. Confidence is
/// that of the most confident supporting backbone.
PredictionVector vote_top1(std::span<const PredictionVector> preds);

/// Each backbone gives weights 3, 2, 1 to its top-3 classes. Ties go to the
/// higher summed probability, then the lowest class. Confidence is the mean
/// probability of the winning class across backbones.
PredictionVector vote_top3(std::span<const ProbMatrix> probs);

/// Per sample, the prediction of the minimum-entropy backbone (ties to the
/// lowest backbone index). With `temps`, backbone b's logits are divided by
/// temps[b] first.
PredictionVector select_by_confidence(std::span<const LogitMatrix> logits,
                                      std::span<const double> temps = {});

/// Argmax of the mean of (optionally temperature-divided) logit rows.
PredictionVector average_logits(std::span<const LogitMatrix> logits,
                                std::span<const double> temps = {});

/// softmax(sum_b t_b z_b) per sample.
FusedPrediction combine_with_temperatures(std::span<const LogitMatrix> logits,
                                          const TemperatureVector& temps);

/// Accuracy of argmax(sum_b t_b z_b) over `rows`, without building the
/// probability matrix.
double fused_accuracy(std::span<const LogitMatrix> logits,
                      std::span<const double> temps, const LabelVector& labels,
                      const IndexSet& rows);

}  // namespace bfuse
