#include "bfuse/combine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bfuse/error.hpp"

namespace bfuse {

TemperatureVector TemperatureVector::global(std::vector<double> t) {
  TemperatureVector out;
  out.values_ = MatrixD(1, t.size());
  std::copy(t.begin(), t.end(), out.values_.data().begin());
  out.per_sample_ = false;
  return out;
}

TemperatureVector TemperatureVector::per_sample(MatrixD t) {
  TemperatureVector out;
  out.values_ = std::move(t);
  out.per_sample_ = true;
  return out;
}

void check_aligned(std::span<const LogitMatrix> logits) {
  if (logits.empty()) throw ConfigError("no backbones to combine");
  for (const auto& l : logits) {
    if (l.rows() != logits[0].rows() || l.classes() != logits[0].classes()) {
      throw ConfigError("logit matrices of '" + logits[0].backbone + "' and '" +
                        l.backbone + "' have different shapes");
    }
  }
}

PredictionVector vote_top1(std::span<const PredictionVector> preds) {
  if (preds.empty()) throw ConfigError("no backbones to vote");
  const std::size_t n = preds[0].size();
  std::uint32_t num_classes = 0;
  for (const auto& p : preds) {
    if (p.size() != n) throw ConfigError("vote_top1: misaligned predictions");
    for (auto c : p.preds) num_classes = std::max(num_classes, c + 1);
  }
  PredictionVector out;
  out.preds.resize(n);
  out.confidence.resize(n);
  std::vector<std::size_t> votes(num_classes);
  std::vector<double> best_conf(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(best_conf.begin(), best_conf.end(), -1.0);
    for (const auto& p : preds) {
      const auto c = p.preds[i];
      ++votes[c];
      best_conf[c] = std::max(best_conf[c], p.confidence[i]);
    }
    std::uint32_t win = 0;
    for (std::uint32_t c = 1; c < num_classes; ++c) {
      if (votes[c] > votes[win] ||
          (votes[c] == votes[win] && best_conf[c] > best_conf[win])) {
        win = c;
      }
    }
    out.preds[i] = win;
    out.confidence[i] = best_conf[win];
  }
  return out;
}

PredictionVector vote_top3(std::span<const ProbMatrix> probs) {
  if (probs.empty()) throw ConfigError("no backbones to vote");
  const std::size_t n = probs[0].rows();
  const std::size_t num_classes = probs[0].cols();
  if (num_classes < 3) throw ConfigError("top-3 voting needs at least 3 classes");
  for (const auto& p : probs) {
    if (p.rows() != n || p.cols() != num_classes) {
      throw ConfigError("vote_top3: misaligned probabilities");
    }
  }
  constexpr int kWeights[3] = {3, 2, 1};
  PredictionVector out;
  out.preds.resize(n);
  out.confidence.resize(n);
  std::vector<int> score(num_classes);
  std::vector<double> mass(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(score.begin(), score.end(), 0);
    std::fill(mass.begin(), mass.end(), 0.0);
    for (const auto& p : probs) {
      const auto row = p.row(i);
      const auto top = top_k(row, 3);
      for (std::size_t r = 0; r < top.size(); ++r) score[top[r]] += kWeights[r];
      for (std::size_t c = 0; c < num_classes; ++c) mass[c] += row[c];
    }
    std::uint32_t win = 0;
    for (std::uint32_t c = 1; c < num_classes; ++c) {
      if (score[c] > score[win] ||
          (score[c] == score[win] && mass[c] > mass[win])) {
        win = c;
      }
    }
    out.preds[i] = win;
    out.confidence[i] = mass[win] / static_cast<double>(probs.size());
  }
  return out;
}

PredictionVector select_by_confidence(std::span<const LogitMatrix> logits,
                                      std::span<const double> temps) {
  check_aligned(logits);
  if (!temps.empty() && temps.size() != logits.size()) {
    throw ConfigError("select_by_confidence: temperature count mismatch");
  }
  const std::size_t n = logits[0].rows();
  PredictionVector out;
  out.preds.resize(n);
  out.confidence.resize(n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    double best_h = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < logits.size(); ++b) {
      const auto z = logits[b].values.row(i);
      row.assign(z.begin(), z.end());
      if (!temps.empty()) {
        for (double& v : row) v /= temps[b];
      }
      softmax_inplace(row);
      const double h = entropy(row);
      if (h < best_h) {
        best_h = h;
        out.preds[i] = argmax(row);
        out.confidence[i] = row[out.preds[i]];
      }
    }
  }
  return out;
}

PredictionVector average_logits(std::span<const LogitMatrix> logits,
                                std::span<const double> temps) {
  check_aligned(logits);
  if (!temps.empty() && temps.size() != logits.size()) {
    throw ConfigError("average_logits: temperature count mismatch");
  }
  const std::size_t n = logits[0].rows();
  const std::size_t num_classes = logits[0].classes();
  const auto B = static_cast<double>(logits.size());
  PredictionVector out;
  out.preds.resize(n);
  out.confidence.resize(n);
  std::vector<double> mean(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t b = 0; b < logits.size(); ++b) {
      const auto z = logits[b].values.row(i);
      const double scale = temps.empty() ? 1.0 : 1.0 / temps[b];
      for (std::size_t c = 0; c < num_classes; ++c) mean[c] += z[c] * scale;
    }
    for (double& v : mean) v /= B;
    out.preds[i] = argmax(mean);
    softmax_inplace(mean);
    out.confidence[i] = mean[out.preds[i]];
  }
  return out;
}

FusedPrediction combine_with_temperatures(std::span<const LogitMatrix> logits,
                                          const TemperatureVector& temps) {
  check_aligned(logits);
  const std::size_t n = logits[0].rows();
  const std::size_t num_classes = logits[0].classes();
  if (temps.num_backbones() != logits.size() ||
      (temps.is_per_sample() && temps.values().rows() != n)) {
    throw ConfigError("temperature vector shape does not match " +
                      std::to_string(logits.size()) + " backbones x " +
                      std::to_string(n) + " samples");
  }
  FusedPrediction out{{}, ProbMatrix(n, num_classes)};
  out.preds.preds.resize(n);
  out.preds.confidence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = temps.for_sample(i);
    auto s = out.probs.row(i);
    for (std::size_t b = 0; b < logits.size(); ++b) {
      const auto z = logits[b].values.row(i);
      for (std::size_t c = 0; c < num_classes; ++c) s[c] += t[b] * z[c];
    }
    out.preds.preds[i] = argmax(s);
    softmax_inplace(s);
    out.preds.confidence[i] = s[out.preds.preds[i]];
  }
  return out;
}

double fused_accuracy(std::span<const LogitMatrix> logits,
                      std::span<const double> temps, const LabelVector& labels,
                      const IndexSet& rows) {
  if (rows.empty()) throw ConfigError("fused accuracy over an empty split");
  const std::size_t num_classes = logits[0].classes();
  std::vector<double> s(num_classes);
  std::size_t hits = 0;
  for (std::size_t idx : rows) {
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t b = 0; b < logits.size(); ++b) {
      const auto z = logits[b].values.row(idx);
      for (std::size_t c = 0; c < num_classes; ++c) s[c] += temps[b] * z[c];
    }
    if (argmax(s) == labels[idx]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace bfuse
