#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bfuse/adam.hpp"
#include "bfuse/embedstore.hpp"
#include "bfuse/zeroshot.hpp"

namespace bfuse {

/// Linear classifier over frozen, L2-normalized image embeddings.
struct LinearProbe {
  MatrixD weight;            // C x D
  std::vector<double> bias;  // C
  std::string backbone;
};

/// Weight rows are the L2-normalized text embeddings, bias is zero.
LinearProbe init_from_language_weights(const BackboneRecord& backbone);

/// N x D image rows, each L2-normalized.
MatrixD probe_inputs(const BackboneRecord& backbone);

struct ProbeLossGrad {
  double loss = 0.0;
  MatrixD grad_weight;
  std::vector<double> grad_bias;
};

/// Mean softmax cross-entropy over `rows` and its parameter gradient.
ProbeLossGrad probe_loss_and_grad(const LinearProbe& probe,
                                  const MatrixD& inputs,
                                  const LabelVector& labels,
                                  const IndexSet& rows);

struct ProbeTrainResult {
  LinearProbe probe;
  double train_accuracy = 0.0;
  /// Full train-split loss before training, then after each epoch.
  std::vector<double> epoch_loss;
};

/// Adam on seeded mini-batches of `train_rows`. Any overlap between
/// `train_rows` and `excluded` (the holdout and test indices) is a
/// ConfigError. Throws NumericalError on a non-finite loss.
ProbeTrainResult train_probe(const LinearProbe& init,
                             const BackboneRecord& backbone,
                             const LabelVector& labels,
                             const IndexSet& train_rows, const TrainConfig& cfg,
                             const IndexSet& excluded = {});

/// W x + b for every L2-normalized image row.
LogitMatrix probe_logits(const LinearProbe& probe,
                         const BackboneRecord& backbone);

/// Writes <dir>/<backbone>.probe.f32le (weight rows then bias, float32 LE)
/// and a <backbone>.probe.json sidecar carrying the shape plus `extra`.
void save_probe(const LinearProbe& probe, const std::filesystem::path& dir,
                const std::string& extra_json = "{}");
LinearProbe load_probe(const std::filesystem::path& dir,
                       const std::string& backbone);

}  // namespace bfuse
