#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bfuse/embedstore.hpp"
#include "bfuse/matrix.hpp"
#include "bfuse/normalize.hpp"

namespace bfuse {

/// N x C logit-like scores of one backbone.
struct LogitMatrix {
  MatrixD values;
  std::string backbone;
  NormMode mode = NormMode::kUN;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t classes() const noexcept { return values.cols(); }
};

/// Row-stochastic N x C matrix.
using ProbMatrix = MatrixD;

struct PredictionVector {
  std::vector<std::uint32_t> preds;
  /// Probability of the predicted class.
  std::vector<double> confidence;

  std::size_t size() const noexcept { return preds.size(); }
};

/// Inner product of every image row with every text row, accumulated in
/// 64-bit. Throws ConfigError on a dimension mismatch.
LogitMatrix compute_logits(const TransformedBackbone& backbone);

/// Max-subtracted exponential normalization.
std::vector<double> softmax(std::span<const double> row);
void softmax_inplace(std::span<double> row);
ProbMatrix softmax_rows(const LogitMatrix& logits);

/// Lowest index achieving the maximum.
std::uint32_t argmax(std::span<const double> row) noexcept;

/// Indices of the k largest entries, descending, ties by lowest index.
std::vector<std::uint32_t> top_k(std::span<const double> row, std::size_t k);

PredictionVector predict(const LogitMatrix& logits);

/// Fraction of `split` where preds[i] == labels[i]. Throws on an empty split.
double accuracy(const PredictionVector& preds, const LabelVector& labels,
                const IndexSet& split);

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(std::span<const double> probs) noexcept;

}  // namespace bfuse
