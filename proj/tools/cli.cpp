#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "bfuse/analyze.hpp"
#include "bfuse/embedstore.hpp"
#include "bfuse/error.hpp"
#include "bfuse/parallel.hpp"
#include "bfuse/pipeline.hpp"

namespace bfuse::cli {

using nlohmann::json;

namespace {

/// Flags shared by every subcommand that reads a store.
struct StoreFlags {
  std::string store;
  std::string norm = "l2";
  std::string split = "test";
  std::size_t dn_subset = 100;
  std::uint64_t dn_seed = 0;
  std::string dn_order = "l2-first";
  std::string out;
  std::string format = "json";
  std::string source = "zeroshot";
  std::string probes;

  CLI::Option* dn_subset_opt = nullptr;
  CLI::Option* dn_seed_opt = nullptr;
  CLI::Option* dn_order_opt = nullptr;
};

struct ProbeFlags {
  TrainConfig train;
};

void add_store_flags(CLI::App* app, StoreFlags& f, const std::string& split) {
  f.split = split;
  app->add_option("--store", f.store, "Embedding store directory")->required();
  app->add_option("--norm", f.norm, "Normalization: un, l2, dn, dn+l2")
      ->capture_default_str();
  app->add_option("--split", f.split, "Split: train, probe_holdout, test")
      ->capture_default_str();
  f.dn_subset_opt =
      app->add_option("--dn-subset", f.dn_subset, "DN mean subset size")
          ->capture_default_str();
  f.dn_seed_opt = app->add_option("--dn-seed", f.dn_seed, "DN subset seed")
                      ->capture_default_str();
  f.dn_order_opt =
      app->add_option("--dn-order", f.dn_order, "DN+L2 order: l2-first, dn-first")
          ->capture_default_str();
  app->add_option("--out", f.out, "Output path (stdout when omitted)");
  app->add_option("--format", f.format, "Output format: json, csv")
      ->capture_default_str();
}

void add_source_flags(CLI::App* app, StoreFlags& f, ProbeFlags& p) {
  app->add_option("--source", f.source, "Logit source: zeroshot, probe")
      ->capture_default_str();
  app->add_option("--probes", f.probes,
                  "Directory of trained probes (trained on the fly if omitted)");
  app->add_option("--probe-lr", p.train.learning_rate)->capture_default_str();
  app->add_option("--probe-epochs", p.train.epochs)->capture_default_str();
  app->add_option("--probe-batch", p.train.batch_size)->capture_default_str();
  app->add_option("--probe-seed", p.train.seed)->capture_default_str();
}

DnOptions dn_options(const StoreFlags& f, NormMode norm) {
  const bool dn_flag =
      f.dn_subset_opt->count() + f.dn_seed_opt->count() +
          f.dn_order_opt->count() >
      0;
  if (dn_flag && !uses_dn(norm)) {
    throw ConfigError("--dn-subset/--dn-seed/--dn-order only apply to "
                      "--norm dn or dn+l2");
  }
  DnOptions dn;
  dn.subset_size = f.dn_subset;
  dn.seed = f.dn_seed;
  dn.order = parse_dn_order(f.dn_order);
  return dn;
}

json dn_echo(const DnOptions& dn) {
  return {{"subset", dn.subset_size},
          {"seed", dn.seed},
          {"order", to_string(dn.order)}};
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::vector<LinearProbe> obtain_probes(const EmbeddingStore& store,
                                       const StoreFlags& f,
                                       const ProbeFlags& p) {
  std::vector<LinearProbe> probes;
  if (!f.probes.empty()) {
    for (const auto& b : store.backbones) {
      probes.push_back(load_probe(f.probes, b.name));
    }
  } else {
    for (auto& res : train_probes(store, p.train)) {
      probes.push_back(std::move(res.probe));
    }
  }
  return probes;
}

/// Logits for the requested source. Zero-shot DN statistics draw from the
/// evaluation split.
std::vector<LogitMatrix> source_logits(const EmbeddingStore& store,
                                       const StoreFlags& f, const ProbeFlags& p,
                                       Source source, NormMode norm,
                                       const DnOptions& dn,
                                       const IndexSet& eval) {
  if (source == Source::kProbe) {
    return probe_logit_set(store, obtain_probes(store, f, p));
  }
  return zeroshot_logits(store, norm, dn, eval);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number '" + item + "' in list");
    }
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Fuse zero-shot and linear-probe predictions of several "
               "vision backbones",
               "bfuse"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 std::string("Worker cap (default: $") + kThreadsEnvVar +
                     " or all cores)");

  // synth
  SynthParams synth;
  std::string synth_out;
  std::string synth_noise;
  double noise_min = 0.8;
  double noise_max = 1.2;
  bool overwrite = false;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic store");
  synth_cmd->add_option("--out", synth_out, "Store directory")->required();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--backbones", synth.num_backbones)->capture_default_str();
  synth_cmd->add_option("--samples", synth.num_samples)->capture_default_str();
  synth_cmd->add_option("--classes", synth.num_classes)->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim)->capture_default_str();
  synth_cmd->add_option("--shared-noise", synth.shared_noise)->capture_default_str();
  synth_cmd->add_option("--noise", synth_noise,
                        "Comma-separated per-backbone noise levels");
  synth_cmd->add_option("--noise-min", noise_min, "Ramp start")->capture_default_str();
  synth_cmd->add_option("--noise-max", noise_max, "Ramp end")->capture_default_str();
  synth_cmd->add_option("--test-fraction", synth.test_fraction)->capture_default_str();
  synth_cmd->add_option("--holdout-fraction", synth.holdout_fraction)
      ->capture_default_str();
  synth_cmd->add_flag("--overwrite", overwrite, "Replace a non-empty directory");

  // zeroshot
  StoreFlags zs;
  std::string zs_backbone = "all";
  auto* zs_cmd = app.add_subcommand("zeroshot", "Per-backbone zero-shot accuracy");
  add_store_flags(zs_cmd, zs, "test");
  zs_cmd->add_option("--backbone", zs_backbone, "Backbone name or 'all'")
      ->capture_default_str();

  // calibrate
  StoreFlags cal;
  ProbeFlags cal_probe;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit per-backbone temperatures");
  add_store_flags(cal_cmd, cal, "train");
  add_source_flags(cal_cmd, cal, cal_probe);

  // probe
  StoreFlags pr;
  ProbeFlags pr_probe;
  std::string pr_backbone = "all";
  auto* pr_cmd = app.add_subcommand("probe", "Train language-initialized linear probes");
  pr_cmd->add_option("--store", pr.store)->required();
  pr_cmd->add_option("--backbone", pr_backbone)->capture_default_str();
  pr_cmd->add_option("--out", pr.out, "Probe output directory")->required();
  pr_cmd->add_option("--lr", pr_probe.train.learning_rate)->capture_default_str();
  pr_cmd->add_option("--epochs", pr_probe.train.epochs)->capture_default_str();
  pr_cmd->add_option("--batch", pr_probe.train.batch_size)->capture_default_str();
  pr_cmd->add_option("--seed", pr_probe.train.seed)->capture_default_str();

  // combine
  StoreFlags cb;
  ProbeFlags cb_probe;
  FusionOptions fusion;
  std::string method;
  std::optional<std::size_t> shots;
  auto* cb_cmd = app.add_subcommand("combine", "Fuse backbones with one method");
  add_store_flags(cb_cmd, cb, "test");
  add_source_flags(cb_cmd, cb, cb_probe);
  cb_cmd->add_option("--method", method,
                     "vote1, vote3, conf, logavg, cconf, clogavg, gac, nnc")
      ->required();
  cb_cmd->add_option("--shots", shots, "Samples per class in the fit split");
  cb_cmd->add_option("--seed", fusion.seed)->capture_default_str();
  cb_cmd->add_option("--gac-population", fusion.gac.population)->capture_default_str();
  cb_cmd->add_option("--gac-generations", fusion.gac.generations)->capture_default_str();
  cb_cmd->add_option("--gac-mutation-rate", fusion.gac.mutation_rate)
      ->capture_default_str();
  cb_cmd->add_option("--gac-sigma", fusion.gac.mutation_sigma)->capture_default_str();
  cb_cmd->add_option("--gac-tournament", fusion.gac.tournament_size)
      ->capture_default_str();
  cb_cmd->add_option("--gac-elitism", fusion.gac.elitism)->capture_default_str();
  cb_cmd->add_option("--gac-lower", fusion.gac.lower)->capture_default_str();
  cb_cmd->add_option("--gac-upper", fusion.gac.upper)->capture_default_str();
  cb_cmd->add_option("--nnc-lr", fusion.nnc.learning_rate)->capture_default_str();
  cb_cmd->add_option("--nnc-epochs", fusion.nnc.epochs)->capture_default_str();
  cb_cmd->add_option("--nnc-batch", fusion.nnc.batch_size)->capture_default_str();
  cb_cmd->add_flag("--nnc-nonneg", fusion.nnc_nonneg,
                   "Pass NNC temperatures through softplus");

  // oracle / venn
  StoreFlags orc;
  ProbeFlags orc_probe;
  auto* orc_cmd = app.add_subcommand("oracle", "Oracle accuracy over backbones");
  add_store_flags(orc_cmd, orc, "test");
  add_source_flags(orc_cmd, orc, orc_probe);

  StoreFlags vn;
  ProbeFlags vn_probe;
  auto* vn_cmd = app.add_subcommand("venn", "Partition samples by correct backbones");
  add_store_flags(vn_cmd, vn, "test");
  add_source_flags(vn_cmd, vn, vn_probe);

  // report
  std::vector<std::string> report_inputs;
  std::string report_out;
  std::string report_format = "json";
  auto* rp_cmd = app.add_subcommand("report", "Aggregate deltas of combine reports");
  rp_cmd->add_option("--in", report_inputs, "combine report JSON files")
      ->required()
      ->expected(1, -1);
  rp_cmd->add_option("--out", report_out);
  rp_cmd->add_option("--format", report_format)->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kConfig;
  }

  try {
    const std::size_t workers = resolve_threads(threads);
    fusion.gac.threads = workers;

    if (*synth_cmd) {
      if (!synth_noise.empty()) {
        synth.per_backbone_noise = parse_list(synth_noise);
      } else {
        synth.per_backbone_noise =
            noise_ramp(synth.num_backbones, noise_min, noise_max);
      }
      const EmbeddingStore store = synth_generate(synth);
      save_store(store, synth_out, overwrite);
      err << "wrote " << store.num_backbones() << " backbones, "
          << store.num_samples() << " samples to " << synth_out << "\n";
      return kOk;
    }

    if (*zs_cmd) {
      const EmbeddingStore store = load_store(zs.store);
      const NormMode norm = parse_norm_mode(zs.norm);
      const DnOptions dn = dn_options(zs, norm);
      const auto format = parse_report_format(zs.format);
      const IndexSet& eval = store.split(parse_split_name(zs.split));
      if (eval.empty()) throw ConfigError("split '" + zs.split + "' is empty");
      std::vector<const BackboneRecord*> chosen;
      if (zs_backbone == "all") {
        for (const auto& b : store.backbones) chosen.push_back(&b);
      } else {
        chosen.push_back(&store.backbone(zs_backbone));
      }
      json acc = json::object();
      json order = json::array();
      std::vector<PredictionVector> preds;
      std::vector<std::string> names;
      std::string best;
      double best_acc = -1.0;
      std::ostringstream csv;
      csv << "backbone,accuracy\n";
      for (const auto* b : chosen) {
        const auto p = predict(compute_logits(prepare_backbone(*b, norm, dn, eval)));
        const double a = 100.0 * accuracy(p, store.labels, eval);
        acc[b->name] = a;
        order.push_back(b->name);
        csv << b->name << "," << json(a).dump() << "\n";
        if (a > best_acc) {
          best_acc = a;
          best = b->name;
        }
        preds.push_back(p);
        names.push_back(b->name);
      }
      const double oracle =
          100.0 * oracle_accuracy(correctness(preds, names, store.labels, eval));
      json report = {{"norm", to_string(norm)},
                     {"split", zs.split},
                     {"backbone_accuracy", acc},
                     {"backbone_order", order},
                     {"best_single", {{"backbone", best}, {"accuracy", best_acc}}},
                     {"oracle_accuracy", oracle}};
      if (uses_dn(norm)) report["dn"] = dn_echo(dn);
      csv << "oracle," << json(oracle).dump() << "\n";
      emit(zs.out, format == ReportFormat::kJson ? render(report) : csv.str(), out);
      return kOk;
    }

    if (*cal_cmd) {
      const EmbeddingStore store = load_store(cal.store);
      const NormMode norm = parse_norm_mode(cal.norm);
      const DnOptions dn = dn_options(cal, norm);
      const Source source = parse_source(cal.source);
      const auto format = parse_report_format(cal.format);
      const IndexSet& fit = store.split(parse_split_name(cal.split));
      const auto logits = source_logits(store, cal, cal_probe, source, norm, dn,
                                        store.splits.test);
      json temps = json::object();
      std::ostringstream csv;
      csv << "backbone,temperature,nll,nll_at_one\n";
      for (const auto& l : logits) {
        const auto res = fit_temperature(l, store.labels, fit);
        temps[l.backbone] = {{"temperature", res.temperature},
                             {"nll", res.final_nll},
                             {"nll_at_one", res.nll_at_one}};
        csv << l.backbone << "," << json(res.temperature).dump() << ","
            << json(res.final_nll).dump() << "," << json(res.nll_at_one).dump()
            << "\n";
      }
      json report = {{"norm", source == Source::kProbe ? "l2" : to_string(norm)},
                     {"source", to_string(source)},
                     {"split", cal.split},
                     {"temperatures", temps}};
      emit(cal.out, format == ReportFormat::kJson ? render(report) : csv.str(), out);
      return kOk;
    }

    if (*pr_cmd) {
      const EmbeddingStore store = load_store(pr.store);
      IndexSet excluded = store.splits.probe_holdout;
      excluded.insert(excluded.end(), store.splits.test.begin(),
                      store.splits.test.end());
      json summary = json::object();
      for (const auto& b : store.backbones) {
        if (pr_backbone != "all" && b.name != pr_backbone) continue;
        const auto res = train_probe(init_from_language_weights(b), b,
                                     store.labels, store.splits.train,
                                     pr_probe.train, excluded);
        const auto preds = predict(probe_logits(res.probe, b));
        const double test_acc =
            store.splits.test.empty()
                ? 0.0
                : 100.0 * accuracy(preds, store.labels, store.splits.test);
        json side = {{"train_accuracy", 100.0 * res.train_accuracy},
                     {"test_accuracy", test_acc},
                     {"final_loss", res.epoch_loss.back()},
                     {"learning_rate", pr_probe.train.learning_rate},
                     {"epochs", pr_probe.train.epochs},
                     {"batch_size", pr_probe.train.batch_size},
                     {"seed", pr_probe.train.seed}};
        save_probe(res.probe, pr.out, side.dump());
        summary[b.name] = side;
      }
      if (pr_backbone != "all" && summary.empty()) {
        throw ConfigError("unknown backbone '" + pr_backbone + "'");
      }
      out << render(summary);
      return kOk;
    }

    if (*cb_cmd) {
      const EmbeddingStore store = load_store(cb.store);
      fusion.norm = parse_norm_mode(cb.norm);
      fusion.source = parse_source(cb.source);
      fusion.method = parse_method(method);
      fusion.shots = shots;
      const DnOptions dn = dn_options(cb, fusion.norm);
      const auto format = parse_report_format(cb.format);
      validate(fusion.gac);
      const IndexSet& eval = store.split(parse_split_name(cb.split));
      const auto logits = source_logits(store, cb, cb_probe, fusion.source,
                                        fusion.norm, dn, eval);
      FusionOutcome res = run_fusion(store, logits,
                                     default_fit_split(store, fusion.source),
                                     eval, fusion);
      res.report.config["split"] = cb.split;
      res.report.config["details"] = res.details;
      if (uses_dn(fusion.norm) && fusion.source == Source::kZeroShot) {
        res.report.config["dn"] = dn_echo(dn);
      }
      emit(cb.out,
           format == ReportFormat::kJson ? render(to_json(res.report))
                                         : to_csv(res.report),
           out);
      return kOk;
    }

    if (*orc_cmd || *vn_cmd) {
      StoreFlags& f = *orc_cmd ? orc : vn;
      ProbeFlags& p = *orc_cmd ? orc_probe : vn_probe;
      const EmbeddingStore store = load_store(f.store);
      const NormMode norm = parse_norm_mode(f.norm);
      const DnOptions dn = dn_options(f, norm);
      const Source source = parse_source(f.source);
      const auto format = parse_report_format(f.format);
      const IndexSet& eval = store.split(parse_split_name(f.split));
      const auto logits = source_logits(store, f, p, source, norm, dn, eval);
      std::vector<PredictionVector> preds;
      for (const auto& l : logits) preds.push_back(predict(l));
      const auto cm = correctness(preds, backbone_names(store), store.labels, eval);
      if (*vn_cmd) {
        const VennPartition venn = venn_partition(cm);
        emit(f.out, format == ReportFormat::kJson ? render(to_json(venn)) : to_csv(venn),
             out);
        return kOk;
      }
      json acc = json::object();
      std::ostringstream csv;
      csv << "name,accuracy\n";
      double best = 0.0;
      std::string best_name;
      for (std::size_t b = 0; b < preds.size(); ++b) {
        const double a = 100.0 * accuracy(preds[b], store.labels, eval);
        acc[store.backbones[b].name] = a;
        csv << store.backbones[b].name << "," << json(a).dump() << "\n";
        if (best_name.empty() || a > best) {
          best = a;
          best_name = store.backbones[b].name;
        }
      }
      const double oracle = 100.0 * oracle_accuracy(cm);
      csv << "oracle," << json(oracle).dump() << "\n";
      json report = {{"norm", source == Source::kProbe ? "l2" : to_string(norm)},
                     {"source", to_string(source)},
                     {"split", f.split},
                     {"backbone_accuracy", acc},
                     {"best_single", {{"backbone", best_name}, {"accuracy", best}}},
                     {"oracle_accuracy", oracle},
                     {"oracle_gap", oracle - best}};
      emit(f.out, format == ReportFormat::kJson ? render(report) : csv.str(), out);
      return kOk;
    }

    if (*rp_cmd) {
      const auto format = parse_report_format(report_format);
      std::vector<Report> reports;
      for (const auto& path : report_inputs) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read report " + path);
        json j;
        try {
          in >> j;
        } catch (const json::exception& e) {
          throw ConfigError("report " + path + ": " + e.what());
        }
        reports.push_back(report_from_json(j));
      }
      const DeltaSummary summary = delta_table(reports);
      emit(report_out,
           format == ReportFormat::kJson ? render(to_json(summary, reports))
                                         : to_csv(summary, reports),
           out);
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    const auto active = app.get_subcommands();
    err << (active.empty() ? app.help() : active.front()->help());
    return e.exit_code();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace bfuse::cli
