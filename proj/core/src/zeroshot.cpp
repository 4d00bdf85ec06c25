#include "bfuse/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bfuse/error.hpp"

namespace bfuse {

LogitMatrix compute_logits(const TransformedBackbone& backbone) {
  const MatrixD& image = backbone.image;
  const MatrixD& text = backbone.text;
  if (image.cols() != text.cols()) {
    throw ConfigError("compute_logits: image dim " +
                      std::to_string(image.cols()) + " != text dim " +
                      std::to_string(text.cols()) + " for '" + backbone.name +
                      "'");
  }
  LogitMatrix out{MatrixD(image.rows(), text.rows()), backbone.name,
                  backbone.mode};
  for (std::size_t i = 0; i < image.rows(); ++i) {
    const auto x = image.row(i);
    auto z = out.values.row(i);
    for (std::size_t c = 0; c < text.rows(); ++c) {
      const auto t = text.row(c);
      double acc = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) acc += t[d] * x[d];
      z[c] = acc;
    }
  }
  return out;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double m = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

std::vector<double> softmax(std::span<const double> row) {
  std::vector<double> out(row.begin(), row.end());
  softmax_inplace(out);
  return out;
}

ProbMatrix softmax_rows(const LogitMatrix& logits) {
  ProbMatrix out = logits.values;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i));
  return out;
}

std::uint32_t argmax(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return static_cast<std::uint32_t>(best);
}

std::vector<std::uint32_t> top_k(std::span<const double> row, std::size_t k) {
  std::vector<std::uint32_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0u);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&](std::uint32_t a, std::uint32_t b) {
                      return row[a] > row[b] || (row[a] == row[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

PredictionVector predict(const LogitMatrix& logits) {
  PredictionVector out;
  out.preds.resize(logits.rows());
  out.confidence.resize(logits.rows());
  std::vector<double> probs;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.values.row(i);
    probs.assign(z.begin(), z.end());
    softmax_inplace(probs);
    out.preds[i] = argmax(z);
    out.confidence[i] = probs[out.preds[i]];
  }
  return out;
}

double accuracy(const PredictionVector& preds, const LabelVector& labels,
                const IndexSet& split) {
  if (split.empty()) throw ConfigError("accuracy over an empty split");
  std::size_t hits = 0;
  for (std::size_t idx : split) {
    if (idx >= preds.size() || idx >= labels.size()) {
      throw ConfigError("accuracy: split index out of range");
    }
    if (preds.preds[idx] == labels[idx]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.size());
}

double entropy(std::span<const double> probs) noexcept {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace bfuse
