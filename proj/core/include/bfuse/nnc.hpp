#pragma once

#include <span>
#include <vector>

#include "bfuse/adam.hpp"
#include "bfuse/combine.hpp"
#include "bfuse/embedstore.hpp"

namespace bfuse {

/// One linear layer from concatenated image embeddings to B temperatures.
/// With `nonneg` the outputs pass through softplus.
struct NncModel {
  MatrixD weight;             // B x sum(D_b)
  std::vector<double> bias;   // B
  std::vector<std::size_t> input_dims;
  bool nonneg = false;

  std::size_t num_backbones() const noexcept { return bias.size(); }
  std::size_t input_size() const noexcept { return weight.cols(); }
};

/// Zero weights and a bias giving temperatures 1/B for every backbone, which
/// reproduces plain logit averaging.
NncModel nnc_init(const std::vector<std::size_t>& input_dims, bool nonneg);

/// N x sum(D_b): each backbone's L2-normalized raw image row, concatenated in
/// store order.
MatrixD nnc_features(const EmbeddingStore& store);

/// Temperatures for one feature row.
std::vector<double> nnc_temperatures(const NncModel& model,
                                     std::span<const double> features);

struct NncLossGrad {
  double loss = 0.0;
  MatrixD grad_weight;
  std::vector<double> grad_bias;
};

/// Mean cross-entropy of softmax(sum_b t_b z_b) over `rows` and its gradient
/// with respect to every model parameter.
NncLossGrad nnc_loss_and_grad(const NncModel& model, const MatrixD& features,
                              std::span<const LogitMatrix> logits,
                              const LabelVector& labels, const IndexSet& rows);

struct NncTrainResult {
  NncModel model;
  /// Full-split loss before training, then after each epoch.
  std::vector<double> epoch_loss;
};

/// Adam on mini-batches drawn from a per-epoch seeded shuffle of `fit_split`.
/// Throws NumericalError if the loss becomes non-finite.
NncTrainResult nnc_train(const MatrixD& features,
                         std::span<const LogitMatrix> logits,
                         const LabelVector& labels, const IndexSet& fit_split,
                         const std::vector<std::size_t>& input_dims,
                         const TrainConfig& cfg, bool nonneg = false);

NncTrainResult nnc_train(const EmbeddingStore& store,
                         std::span<const LogitMatrix> logits,
                         const IndexSet& fit_split, const TrainConfig& cfg,
                         bool nonneg = false);

struct NncApplication {
  FusedPrediction fused;
  TemperatureVector temperatures;  // N x B
};

/// Per-sample temperatures and fused predictions for every sample.
NncApplication nnc_apply(const NncModel& model, const MatrixD& features,
                         std::span<const LogitMatrix> logits);
NncApplication nnc_apply(const NncModel& model, const EmbeddingStore& store,
                         std::span<const LogitMatrix> logits);

}  // namespace bfuse
