#include "bfuse/analyze.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "bfuse/error.hpp"

namespace bfuse {

using nlohmann::json;

namespace {

std::string csv_number(double v) {
  // Shortest round-trip form, matching the JSON output.
  return json(v).dump();
}

std::string subset_key(const std::vector<std::string>& names) {
  std::string key;
  for (const auto& n : names) {
    if (!key.empty()) key += '|';
    key += n;
  }
  return key;
}

}  // namespace

std::size_t CorrectnessMatrix::row_count(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < num_samples; ++i) n += at(b, i) ? 1 : 0;
  return n;
}

CorrectnessMatrix correctness(std::span<const PredictionVector> preds,
                              const std::vector<std::string>& names,
                              const LabelVector& labels, const IndexSet& split) {
  if (preds.size() != names.size()) {
    throw ConfigError("correctness: one name per prediction vector required");
  }
  CorrectnessMatrix cm;
  cm.backbone_names = names;
  cm.num_samples = split.size();
  cm.correct.assign(preds.size() * split.size(), 0);
  for (std::size_t b = 0; b < preds.size(); ++b) {
    for (std::size_t k = 0; k < split.size(); ++k) {
      const std::size_t idx = split[k];
      if (idx >= preds[b].size() || idx >= labels.size()) {
        throw ConfigError("correctness: split index out of range");
      }
      cm.correct[b * split.size() + k] = preds[b].preds[idx] == labels[idx];
    }
  }
  return cm;
}

double oracle_accuracy(const CorrectnessMatrix& cm) {
  if (cm.num_samples == 0) throw ConfigError("oracle over zero samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cm.num_samples; ++i) {
    for (std::size_t b = 0; b < cm.num_backbones(); ++b) {
      if (cm.at(b, i)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(cm.num_samples);
}

std::vector<std::string> VennPartition::subset_names(std::uint32_t mask) const {
  std::vector<std::string> out;
  for (std::size_t b = 0; b < backbone_names.size(); ++b) {
    if (mask & (1u << b)) out.push_back(backbone_names[b]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t VennPartition::backbone_total(std::size_t b) const {
  std::size_t total = 0;
  for (const auto& [mask, count] : counts) {
    if (mask & (1u << b)) total += count;
  }
  return total;
}

VennPartition venn_partition(const CorrectnessMatrix& cm) {
  if (cm.num_backbones() > kMaxVennBackbones) {
    throw ConfigError("Venn partition supports at most " +
                      std::to_string(kMaxVennBackbones) + " backbones");
  }
  VennPartition v;
  v.backbone_names = cm.backbone_names;
  v.num_samples = cm.num_samples;
  for (std::size_t i = 0; i < cm.num_samples; ++i) {
    std::uint32_t mask = 0;
    for (std::size_t b = 0; b < cm.num_backbones(); ++b) {
      if (cm.at(b, i)) mask |= 1u << b;
    }
    if (mask == 0) {
      ++v.none_correct;
    } else {
      ++v.counts[mask];
    }
  }
  return v;
}

void finalize(Report& report) {
  report.best_backbone.clear();
  report.best_single = 0.0;
  for (const auto& [name, acc] : report.backbone_accuracy) {
    if (report.best_backbone.empty() || acc > report.best_single) {
      report.best_backbone = name;
      report.best_single = acc;
    }
  }
  report.delta = report.fused_accuracy - report.best_single;
}

DeltaSummary delta_table(std::span<const Report> reports) {
  if (reports.empty()) throw ConfigError("delta table needs at least one report");
  DeltaSummary s;
  s.count = reports.size();
  s.max = reports[0].delta;
  s.min = reports[0].delta;
  double sum = 0.0;
  for (const auto& r : reports) {
    sum += r.delta;
    s.max = std::max(s.max, r.delta);
    s.min = std::min(s.min, r.delta);
  }
  s.mean = sum / static_cast<double>(reports.size());
  return s;
}

ReportFormat parse_report_format(const std::string& text) {
  if (text == "json") return ReportFormat::kJson;
  if (text == "csv") return ReportFormat::kCsv;
  throw ConfigError("unknown format '" + text + "' (expected json, csv)");
}

json to_json(const Report& r) {
  json backbones = json::object();
  for (const auto& [name, acc] : r.backbone_accuracy) backbones[name] = acc;
  return {{"method", r.method},
          {"norm", r.norm},
          {"source", r.source},
          {"seed", r.seed},
          {"backbone_accuracy", backbones},
          {"backbone_order", [&] {
             json names = json::array();
             for (const auto& p : r.backbone_accuracy) names.push_back(p.first);
             return names;
           }()},
          {"fused_accuracy", r.fused_accuracy},
          {"best_single", {{"backbone", r.best_backbone},
                           {"accuracy", r.best_single}}},
          {"delta", r.delta},
          {"config", r.config}};
}

Report report_from_json(const json& j) {
  Report r;
  try {
    r.method = j.at("method").get<std::string>();
    r.norm = j.at("norm").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& acc = j.at("backbone_accuracy");
    for (const auto& name : j.at("backbone_order")) {
      const auto n = name.get<std::string>();
      r.backbone_accuracy.emplace_back(n, acc.at(n).get<double>());
    }
    r.fused_accuracy = j.at("fused_accuracy").get<double>();
    r.config = j.value("config", json::object());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
  finalize(r);
  return r;
}

json to_json(const VennPartition& v) {
  json subsets = json::object();
  for (const auto& [mask, count] : v.counts) {
    subsets[subset_key(v.subset_names(mask))] = count;
  }
  json totals = json::object();
  for (std::size_t b = 0; b < v.backbone_names.size(); ++b) {
    totals[v.backbone_names[b]] = v.backbone_total(b);
  }
  const double oracle =
      v.num_samples == 0
          ? 0.0
          : 1.0 - static_cast<double>(v.none_correct) /
                      static_cast<double>(v.num_samples);
  return {{"backbones", v.backbone_names},
          {"num_samples", v.num_samples},
          {"none_correct", v.none_correct},
          {"oracle_accuracy", 100.0 * oracle},
          {"per_backbone_correct", totals},
          {"subsets", subsets}};
}

json to_json(const DeltaSummary& s, std::span<const Report> reports) {
  json rows = json::array();
  for (const auto& r : reports) {
    rows.push_back({{"method", r.method},
                    {"norm", r.norm},
                    {"source", r.source},
                    {"fused_accuracy", r.fused_accuracy},
                    {"best_single", r.best_single},
                    {"delta", r.delta}});
  }
  return {{"count", s.count},
          {"mean_delta", s.mean},
          {"max_delta", s.max},
          {"min_delta", s.min},
          {"reports", rows}};
}

std::string to_csv(const Report& r) {
  std::ostringstream out;
  out << "method,norm,source,kind,name,accuracy\n";
  const std::string prefix = r.method + "," + r.norm + "," + r.source + ",";
  for (const auto& [name, acc] : r.backbone_accuracy) {
    out << prefix << "backbone," << name << "," << csv_number(acc) << "\n";
  }
  out << prefix << "fused," << r.method << "," << csv_number(r.fused_accuracy)
      << "\n";
  out << prefix << "best_single," << r.best_backbone << ","
      << csv_number(r.best_single) << "\n";
  out << prefix << "delta,," << csv_number(r.delta) << "\n";
  return out.str();
}

std::string to_csv(const VennPartition& v) {
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> rows;
  for (const auto& [mask, count] : v.counts) {
    rows.push_back({subset_key(v.subset_names(mask)),
                    {static_cast<std::size_t>(std::popcount(mask)), count}});
  }
  std::sort(rows.begin(), rows.end());
  std::ostringstream out;
  out << "subset,size,count\n";
  for (const auto& [key, sc] : rows) {
    out << key << "," << sc.first << "," << sc.second << "\n";
  }
  out << "none,0," << v.none_correct << "\n";
  return out.str();
}

std::string to_csv(const DeltaSummary& s, std::span<const Report> reports) {
  std::ostringstream out;
  out << "method,norm,source,fused_accuracy,best_single,delta\n";
  for (const auto& r : reports) {
    out << r.method << "," << r.norm << "," << r.source << ","
        << csv_number(r.fused_accuracy) << "," << csv_number(r.best_single)
        << "," << csv_number(r.delta) << "\n";
  }
  out << "mean,,,,," << csv_number(s.mean) << "\n";
  out << "max,,,,," << csv_number(s.max) << "\n";
  out << "min,,,,," << csv_number(s.min) << "\n";
  return out.str();
}

std::string render(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw StoreError("write failed: " + path.string());
}

void emit_report(const Report& report, ReportFormat format,
                 const std::filesystem::path& path) {
  write_text(path, format == ReportFormat::kJson ? render(to_json(report))
                                                 : to_csv(report));
}

void emit_report(const VennPartition& venn, ReportFormat format,
                 const std::filesystem::path& path) {
  write_text(path, format == ReportFormat::kJson ? render(to_json(venn))
                                                 : to_csv(venn));
}

}  // namespace bfuse
