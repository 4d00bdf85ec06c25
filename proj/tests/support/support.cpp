#include "support.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bfuse/calibrate.hpp"
#include "bfuse/combine.hpp"
#include "bfuse/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bfuse::testing {

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "bfuse-test-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) {
    throw std::runtime_error("mkdtemp failed");
  }
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

IndexSet iota_set(std::size_t n) {
  IndexSet out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

namespace {

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

float random_float(Rng& rng) {
  static constexpr float kSpecial[] = {
      -0.0f,
      0.0f,
      std::numeric_limits<float>::denorm_min(),
      -std::numeric_limits<float>::denorm_min(),
      std::numeric_limits<float>::min(),
      std::numeric_limits<float>::max(),
      -std::numeric_limits<float>::max(),
      1.0f / 3.0f,
  };
  if (rng.below(10) == 0) return kSpecial[rng.below(std::size(kSpecial))];
  return static_cast<float>(rng.normal());
}

std::string random_name(Rng& rng, std::size_t index) {
  static constexpr char kChars[] =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._+-";
  std::string name = "b" + std::to_string(index);
  const std::size_t extra = rng.below(6);
  for (std::size_t k = 0; k < extra; ++k) {
    name.push_back(kChars[rng.below(sizeof(kChars) - 1)]);
  }
  return name;
}

template <typename T>
bool same_bytes(const Matrix<T>& a, const Matrix<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(T)) == 0;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump();
}

void write_u32_at(const fs::path& path, std::size_t offset, std::uint32_t v) {
  auto bytes = read_bytes(path);
  for (int k = 0; k < 4; ++k) {
    bytes.at(offset + k) = static_cast<char>((v >> (8 * k)) & 0xffu);
  }
  write_bytes(path, bytes);
}

}  // namespace

EmbeddingStore random_store(Rng& rng, const RandomStoreShape& shape) {
  EmbeddingStore s;
  const std::size_t n = between(rng, shape.min_samples, shape.max_samples);
  const std::size_t c = between(rng, 2, 6);
  const std::size_t b = between(rng, shape.min_backbones, shape.max_backbones);
  s.manifest.dataset_name = "fuzz";
  s.manifest.num_samples = n;
  s.manifest.num_classes = c;
  for (std::size_t k = 0; k < c; ++k) {
    s.manifest.class_names.push_back("class " + std::to_string(k));
  }
  for (std::size_t k = 0; k < b; ++k) {
    BackboneRecord rec;
    rec.name = random_name(rng, k);
    const std::size_t d = between(rng, 1, 8);
    rec.image = MatrixF(n, d);
    rec.text = MatrixF(c, d);
    for (auto& v : rec.image.data()) v = random_float(rng);
    for (auto& v : rec.text.data()) v = random_float(rng);
    s.manifest.backbones.push_back({rec.name, d});
    s.backbones.push_back(std::move(rec));
  }
  s.labels.resize(n);
  for (auto& l : s.labels) l = static_cast<std::uint32_t>(rng.below(c));

  IndexSet perm = iota_set(n);
  rng.shuffle(std::span<std::size_t>(perm));
  std::size_t start = 0;
  if (shape.nonempty_splits) {
    s.splits.test.push_back(perm[0]);
    s.splits.probe_holdout.push_back(perm[1]);
    s.splits.train.push_back(perm[2]);
    start = 3;
  }
  for (std::size_t k = start; k < n; ++k) {
    switch (rng.below(4)) {
      case 0: s.splits.test.push_back(perm[k]); break;
      case 1: s.splits.probe_holdout.push_back(perm[k]); break;
      case 2: s.splits.train.push_back(perm[k]); break;
      default: break;
    }
  }
  return s;
}

bool bit_identical(const EmbeddingStore& a, const EmbeddingStore& b) {
  if (!(a.manifest == b.manifest) || a.labels != b.labels ||
      !(a.splits == b.splits) || a.backbones.size() != b.backbones.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.backbones.size(); ++k) {
    const auto& x = a.backbones[k];
    const auto& y = b.backbones[k];
    if (x.name != y.name || !same_bytes(x.image, y.image) ||
        !same_bytes(x.text, y.text)) {
      return false;
    }
  }
  return true;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::string corrupt_store(const fs::path& dir, std::size_t kind, Rng& rng) {
  json manifest = read_json(dir / "manifest.json");
  json splits = read_json(dir / "splits.json");
  const std::size_t n = manifest["num_samples"];
  const std::size_t c = manifest["num_classes"];
  const std::size_t nb = manifest["backbones"].size();
  const std::size_t b = rng.below(nb);
  const std::string name = manifest["backbones"][b]["name"];
  const std::size_t d = manifest["backbones"][b]["dim"];
  const fs::path image = dir / name / "image.f32le";
  const fs::path text = dir / name / "text.f32le";

  switch (kind) {
    case 0: {
      auto bytes = read_bytes(image);
      bytes.resize(bytes.size() - 4);
      write_bytes(image, bytes);
      return "image blob truncated by 4 bytes";
    }
    case 1: {
      auto bytes = read_bytes(text);
      bytes.insert(bytes.end(), 4, '\0');
      write_bytes(text, bytes);
      return "text blob extended by 4 bytes";
    }
    case 2: {
      const std::size_t i = rng.below(n);
      auto bytes = read_bytes(dir / "labels.u32le");
      bytes.at(4 * i + 3) = static_cast<char>(0x80);
      write_bytes(dir / "labels.u32le", bytes);
      return "label high byte flipped";
    }
    case 3:
      write_u32_at(image, 4 * rng.below(n * d), 0x7fc00000u);
      return "NaN in image";
    case 4:
      write_u32_at(text, 4 * rng.below(c * d), 0x7f800000u);
      return "+Inf in text";
    case 5:
      manifest["num_samples"] = n + 1;
      write_json(dir / "manifest.json", manifest);
      return "num_samples off by one";
    case 6:
      manifest["backbones"][b]["dim"] = d + 1;
      write_json(dir / "manifest.json", manifest);
      return "backbone dim off by one";
    case 7:
      manifest["num_classes"] = c + 1;
      write_json(dir / "manifest.json", manifest);
      return "num_classes off by one";
    case 8:
      splits["train"].push_back(splits["train"][0]);
      write_json(dir / "splits.json", splits);
      return "duplicate train index";
    case 9:
      splits["test"].push_back(n);
      write_json(dir / "splits.json", splits);
      return "split index out of range";
    case 10:
      fs::remove(text);
      return "text blob missing";
    case 11:
      splits["probe_holdout"].push_back(splits["test"][0]);
      write_json(dir / "splits.json", splits);
      return "test and probe_holdout overlap";
    case 12:
      splits["probe_holdout"].push_back(splits["train"][0]);
      write_json(dir / "splits.json", splits);
      return "train and probe_holdout overlap";
    case 13:
      manifest["backbones"][1]["name"] = manifest["backbones"][0]["name"];
      write_json(dir / "manifest.json", manifest);
      return "duplicate backbone name";
    case 14: {
      auto bytes = read_bytes(dir / "labels.u32le");
      bytes.resize(bytes.size() - 4);
      write_bytes(dir / "labels.u32le", bytes);
      return "labels truncated by 4 bytes";
    }
    case 15:
      manifest["class_names"].erase(manifest["class_names"].size() - 1);
      write_json(dir / "manifest.json", manifest);
      return "class_names too short";
    case 16:
      manifest["version"] = 2;
      write_json(dir / "manifest.json", manifest);
      return "unsupported version";
    case 17: {
      auto bytes = read_bytes(dir / "manifest.json");
      bytes.resize(bytes.size() / 2);
      write_bytes(dir / "manifest.json", bytes);
      return "manifest cut in half";
    }
    case 18:
      manifest["backbones"][b]["name"] = "../" + name;
      write_json(dir / "manifest.json", manifest);
      return "backbone name escapes the store";
    case 19:
      splits.erase("test");
      write_json(dir / "splits.json", splits);
      return "test split missing";
    default:
      throw std::out_of_range("corruption kind");
  }
}

const EmbeddingStore& seed7() {
  static const EmbeddingStore store = synth_generate(SynthParams{});
  return store;
}

const std::vector<LogitMatrix>& seed7_logits() {
  static const std::vector<LogitMatrix> logits = zeroshot_logits(
      seed7(), NormMode::kL2, DnOptions{}, seed7().splits.test);
  return logits;
}

LogitMatrix random_logits(Rng& rng, std::size_t n, std::size_t c,
                          double scale, const std::string& name) {
  LogitMatrix out;
  out.values = MatrixD(n, c);
  out.backbone = name;
  for (auto& v : out.values.data()) v = scale * rng.normal();
  return out;
}

LabelVector random_labels(Rng& rng, std::size_t n, std::size_t c) {
  LabelVector labels(n);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(c));
  return labels;
}

double dense_grid_temperature(const LogitMatrix& logits,
                              const LabelVector& labels, const IndexSet& split,
                              std::size_t points, double lo, double hi) {
  const double log_lo = std::log(lo);
  const double step = (std::log(hi) - log_lo) / static_cast<double>(points - 1);
  double best_t = lo;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < points; ++k) {
    const double t = std::exp(log_lo + step * static_cast<double>(k));
    // Direct log-sum-exp, independent of the library's NLL.
    double total = 0.0;
    for (std::size_t i : split) {
      const auto row = logits.values.row(i);
      const double m = *std::max_element(row.begin(), row.end()) / t;
      double z = 0.0;
      for (double v : row) z += std::exp(v / t - m);
      total += m + std::log(z) - row[labels[i]] / t;
    }
    const double value = total / static_cast<double>(split.size());
    if (value < best) {
      best = value;
      best_t = t;
    }
  }
  return best_t;
}

GridOptimum grid_search_b2(std::span<const LogitMatrix> logits,
                           const LabelVector& labels, const IndexSet& split,
                           std::size_t n, double lo, double hi) {
  GridOptimum best;
  best.accuracy = -1.0;
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double t0 = lo + step * static_cast<double>(a);
      const double t1 = lo + step * static_cast<double>(b);
      std::size_t hits = 0;
      for (std::size_t i : split) {
        const auto r0 = logits[0].values.row(i);
        const auto r1 = logits[1].values.row(i);
        std::size_t arg = 0;
        double top = t0 * r0[0] + t1 * r1[0];
        for (std::size_t c = 1; c < r0.size(); ++c) {
          const double v = t0 * r0[c] + t1 * r1[c];
          if (v > top) {
            top = v;
            arg = c;
          }
        }
        hits += arg == labels[i];
      }
      const double acc =
          static_cast<double>(hits) / static_cast<double>(split.size());
      if (acc > best.accuracy) best = {acc, t0, t1};
    }
  }
  return best;
}

ContrivedB2 contrived_b2(Rng& rng, std::size_t n, std::size_t c) {
  ContrivedB2 out;
  out.logits.resize(2);
  for (std::size_t b = 0; b < 2; ++b) {
    out.logits[b].values = MatrixD(n, c);
    out.logits[b].backbone = "contrived_" + std::to_string(b);
  }
  out.labels = random_labels(rng, n, c);
  // Backbone 1 lives on a larger logit scale than backbone 0.
  const double scale[2] = {1.0, 3.0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = out.labels[i];
    const auto w = static_cast<std::uint32_t>((y + 1 + rng.below(c - 1)) % c);
    const std::size_t kind = rng.below(5);  // 0, 1: one side wrong; else both right
    for (std::size_t b = 0; b < 2; ++b) {
      auto row = out.logits[b].values.row(i);
      for (std::size_t k = 0; k < c; ++k) row[k] = -rng.uniform(0.5, 1.5);
      const bool wrong = (kind == 0 && b == 1) || (kind == 1 && b == 0);
      const double margin = wrong ? rng.uniform(0.05, 1.0) : rng.uniform(0.2, 2.0);
      row[wrong ? w : y] = margin;
      row[wrong ? y : w] = 0.0;
      for (auto& v : row) v *= scale[b];
    }
  }
  return out;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_gradient_error(std::span<double> params,
                          std::span<const double> analytic,
                          const std::function<double()>& loss, double h) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + h;
    const double up = loss();
    params[k] = saved - h;
    const double down = loss();
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[k], numeric));
  }
  return worst;
}

std::map<std::uint32_t, std::size_t> brute_force_venn(
    const CorrectnessMatrix& cm, std::size_t* none) {
  std::map<std::uint32_t, std::size_t> counts;
  *none = 0;
  const std::size_t b = cm.num_backbones();
  for (std::size_t i = 0; i < cm.num_samples; ++i) {
    // Enumerate every subset and keep the one matching this column exactly.
    for (std::uint32_t mask = 0; mask < (1u << b); ++mask) {
      bool match = true;
      for (std::size_t k = 0; k < b && match; ++k) {
        match = cm.at(k, i) == (((mask >> k) & 1u) != 0);
      }
      if (!match) continue;
      if (mask == 0) {
        ++*none;
      } else {
        ++counts[mask];
      }
      break;
    }
  }
  return counts;
}

CorrectnessMatrix random_correctness(Rng& rng, std::size_t b, std::size_t n,
                                     double p_correct) {
  CorrectnessMatrix cm;
  for (std::size_t k = 0; k < b; ++k) {
    cm.backbone_names.push_back("m" + std::to_string(k));
  }
  cm.num_samples = n;
  cm.correct.resize(b * n);
  for (auto& v : cm.correct) v = rng.uniform() < p_correct ? 1 : 0;
  return cm;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto v : bytes) {
    h ^= v;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace bfuse::testing
