#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bfuse/adam.hpp"
#include "bfuse/analyze.hpp"
#include "bfuse/calibrate.hpp"
#include "bfuse/combine.hpp"
#include "bfuse/gac.hpp"
#include "bfuse/nnc.hpp"
#include "bfuse/normalize.hpp"
#include "bfuse/probe.hpp"

namespace bfuse {

/// Where per-backbone logits come from.
enum class Source { kZeroShot, kProbe };
Source parse_source(const std::string& text);
const char* to_string(Source source) noexcept;

enum class Method { kVote1, kVote3, kConf, kLogAvg, kCConf, kCLogAvg, kGac, kNnc };
Method parse_method(const std::string& text);
const char* to_string(Method method) noexcept;

/// Zero-shot logits for every backbone. DN statistics draw from `dn_pool`.
std::vector<LogitMatrix> zeroshot_logits(const EmbeddingStore& store,
                                         NormMode norm, const DnOptions& dn,
                                         const IndexSet& dn_pool);

/// Language-initialized probes trained on the store's train split, with the
/// holdout and test splits excluded.
std::vector<ProbeTrainResult> train_probes(const EmbeddingStore& store,
                                           const TrainConfig& cfg);

std::vector<LogitMatrix> probe_logit_set(const EmbeddingStore& store,
                                         const std::vector<LinearProbe>& probes);

/// train for zero-shot fusion, probe_holdout for probe fusion.
const IndexSet& default_fit_split(const EmbeddingStore& store, Source source);

std::vector<std::string> backbone_names(const EmbeddingStore& store);

struct FusionOptions {
  Source source = Source::kZeroShot;
  NormMode norm = NormMode::kL2;
  Method method = Method::kLogAvg;
  /// Samples per class drawn from the fit split, if set.
  std::optional<std::size_t> shots;
  std::uint64_t seed = 0;
  GacConfig gac;
  TrainConfig nnc;
  bool nnc_nonneg = false;
  CalibrationOptions calibration;
};

struct FusionOutcome {
  Report report;
  PredictionVector fused;
  std::vector<PredictionVector> singles;
  /// Method-specific details (fitted temperatures, traces, ...).
  nlohmann::json details = nlohmann::json::object();
};

/// Fits the method on the (optionally subsampled) fit split and evaluates
/// every backbone and the fused prediction on `eval_split`. The GAC, NNC and
/// shot-subsampling seeds are all taken from `opts.seed`.
FusionOutcome run_fusion(const EmbeddingStore& store,
                         const std::vector<LogitMatrix>& logits,
                         const IndexSet& fit_split, const IndexSet& eval_split,
                         const FusionOptions& opts);

}  // namespace bfuse
