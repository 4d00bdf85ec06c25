#include "bfuse/pipeline.hpp"

#include <algorithm>

#include "bfuse/error.hpp"

namespace bfuse {

using nlohmann::json;

Source parse_source(const std::string& text) {
  if (text == "zeroshot") return Source::kZeroShot;
  if (text == "probe") return Source::kProbe;
  throw ConfigError("unknown source '" + text + "' (expected zeroshot, probe)");
}

const char* to_string(Source source) noexcept {
  return source == Source::kZeroShot ? "zeroshot" : "probe";
}

Method parse_method(const std::string& text) {
  if (text == "vote1") return Method::kVote1;
  if (text == "vote3") return Method::kVote3;
  if (text == "conf") return Method::kConf;
  if (text == "logavg") return Method::kLogAvg;
  if (text == "cconf") return Method::kCConf;
  if (text == "clogavg") return Method::kCLogAvg;
  if (text == "gac") return Method::kGac;
  if (text == "nnc") return Method::kNnc;
  throw ConfigError("unknown method '" + text +
                    "' (expected vote1, vote3, conf, logavg, cconf, clogavg, "
                    "gac, nnc)");
}

const char* to_string(Method method) noexcept {
  switch (method) {
    case Method::kVote1:
      return "vote1";
    case Method::kVote3:
      return "vote3";
    case Method::kConf:
      return "conf";
    case Method::kLogAvg:
      return "logavg";
    case Method::kCConf:
      return "cconf";
    case Method::kCLogAvg:
      return "clogavg";
    case Method::kGac:
      return "gac";
    case Method::kNnc:
      return "nnc";
  }
  return "?";
}

std::vector<LogitMatrix> zeroshot_logits(const EmbeddingStore& store,
                                         NormMode norm, const DnOptions& dn,
                                         const IndexSet& dn_pool) {
  std::vector<LogitMatrix> out;
  out.reserve(store.num_backbones());
  for (const auto& b : store.backbones) {
    out.push_back(compute_logits(prepare_backbone(b, norm, dn, dn_pool)));
  }
  return out;
}

std::vector<ProbeTrainResult> train_probes(const EmbeddingStore& store,
                                           const TrainConfig& cfg) {
  IndexSet excluded = store.splits.probe_holdout;
  excluded.insert(excluded.end(), store.splits.test.begin(),
                  store.splits.test.end());
  std::vector<ProbeTrainResult> out;
  for (const auto& b : store.backbones) {
    out.push_back(train_probe(init_from_language_weights(b), b, store.labels,
                              store.splits.train, cfg, excluded));
  }
  return out;
}

std::vector<LogitMatrix> probe_logit_set(const EmbeddingStore& store,
                                         const std::vector<LinearProbe>& probes) {
  if (probes.size() != store.num_backbones()) {
    throw ConfigError("need one probe per backbone");
  }
  std::vector<LogitMatrix> out;
  for (std::size_t b = 0; b < probes.size(); ++b) {
    out.push_back(probe_logits(probes[b], store.backbones[b]));
  }
  return out;
}

const IndexSet& default_fit_split(const EmbeddingStore& store, Source source) {
  return source == Source::kZeroShot ? store.splits.train
                                     : store.splits.probe_holdout;
}

std::vector<std::string> backbone_names(const EmbeddingStore& store) {
  std::vector<std::string> names;
  for (const auto& b : store.backbones) names.push_back(b.name);
  return names;
}

FusionOutcome run_fusion(const EmbeddingStore& store,
                         const std::vector<LogitMatrix>& logits,
                         const IndexSet& fit_split, const IndexSet& eval_split,
                         const FusionOptions& opts) {
  check_aligned(logits);
  if (logits.size() != store.num_backbones()) {
    throw ConfigError("one logit matrix per backbone required");
  }
  if (eval_split.empty()) throw ConfigError("evaluation split is empty");

  IndexSet fit = fit_split;
  if (opts.shots) {
    fit = subsample_per_class(fit_split, store.labels, store.num_classes(),
                              *opts.shots, opts.seed);
  }
  const bool needs_fit = opts.method == Method::kCConf ||
                         opts.method == Method::kCLogAvg ||
                         opts.method == Method::kGac ||
                         opts.method == Method::kNnc;
  if (needs_fit && fit.empty()) throw ConfigError("fit split is empty");

  FusionOutcome out;
  for (const auto& l : logits) out.singles.push_back(predict(l));

  auto calibrated = [&] {
    std::vector<double> temps;
    json fitted = json::object();
    for (const auto& l : logits) {
      const auto res = fit_temperature(l, store.labels, fit, opts.calibration);
      temps.push_back(res.temperature);
      fitted[l.backbone] = {{"temperature", res.temperature},
                            {"nll", res.final_nll},
                            {"nll_at_one", res.nll_at_one}};
    }
    out.details["calibration"] = fitted;
    return temps;
  };

  switch (opts.method) {
    case Method::kVote1:
      out.fused = vote_top1(out.singles);
      break;
    case Method::kVote3: {
      std::vector<ProbMatrix> probs;
      for (const auto& l : logits) probs.push_back(softmax_rows(l));
      out.fused = vote_top3(probs);
      break;
    }
    case Method::kConf:
      out.fused = select_by_confidence(logits);
      break;
    case Method::kLogAvg:
      out.fused = average_logits(logits);
      break;
    case Method::kCConf: {
      const auto temps = calibrated();
      out.fused = select_by_confidence(logits, temps);
      break;
    }
    case Method::kCLogAvg: {
      const auto temps = calibrated();
      out.fused = average_logits(logits, temps);
      break;
    }
    case Method::kGac: {
      GacConfig cfg = opts.gac;
      cfg.seed = opts.seed;
      const GacResult res = gac_search(logits, store.labels, fit, cfg);
      out.fused = combine_with_temperatures(
                      logits, TemperatureVector::global(res.temperatures))
                      .preds;
      out.details["temperatures"] = res.temperatures;
      out.details["fit_fitness"] = res.best_fitness;
      out.details["fitness_trace"] = res.fitness_trace;
      break;
    }
    case Method::kNnc: {
      TrainConfig cfg = opts.nnc;
      cfg.seed = opts.seed;
      const MatrixD features = nnc_features(store);
      std::vector<std::size_t> dims;
      for (const auto& b : store.backbones) dims.push_back(b.dim());
      const NncTrainResult res = nnc_train(features, logits, store.labels, fit,
                                           dims, cfg, opts.nnc_nonneg);
      out.fused = nnc_apply(res.model, features, logits).fused.preds;
      out.details["epoch_loss"] = res.epoch_loss;
      break;
    }
  }

  Report& r = out.report;
  r.method = to_string(opts.method);
  r.norm = opts.source == Source::kProbe ? "l2" : to_string(opts.norm);
  r.source = to_string(opts.source);
  r.seed = opts.seed;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    r.backbone_accuracy.emplace_back(
        store.backbones[b].name,
        100.0 * accuracy(out.singles[b], store.labels, eval_split));
  }
  r.fused_accuracy = 100.0 * accuracy(out.fused, store.labels, eval_split);
  finalize(r);
  r.config = {{"fit_samples", fit.size()},
              {"eval_samples", eval_split.size()},
              {"shots", opts.shots ? json(*opts.shots) : json(nullptr)}};
  if (opts.method == Method::kGac) {
    r.config["gac"] = {{"population", opts.gac.population},
                       {"generations", opts.gac.generations},
                       {"mutation_rate", opts.gac.mutation_rate},
                       {"mutation_sigma", opts.gac.mutation_sigma},
                       {"tournament_size", opts.gac.tournament_size},
                       {"elitism", opts.gac.elitism},
                       {"bounds", {opts.gac.lower, opts.gac.upper}}};
  }
  if (opts.method == Method::kNnc) {
    r.config["nnc"] = {{"learning_rate", opts.nnc.learning_rate},
                       {"epochs", opts.nnc.epochs},
                       {"batch_size", opts.nnc.batch_size},
                       {"nonneg", opts.nnc_nonneg}};
  }
  return out;
}

}  // namespace bfuse
