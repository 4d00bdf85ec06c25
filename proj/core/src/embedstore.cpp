#include "bfuse/embedstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "bfuse/error.hpp"
#include "bfuse/random.hpp"

namespace bfuse {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "store I/O assumes a little-endian host");

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLabelsFile = "labels.u32le";
constexpr const char* kSplitsFile = "splits.json";
constexpr const char* kImageFile = "image.f32le";
constexpr const char* kTextFile = "text.f32le";

bool valid_backbone_name(const std::string& name) {
  if (name.empty() || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    return (ch >= 'A' && ch <= 'Z') || (ch >= 'a' && ch <= 'z') ||
           (ch >= '0' && ch <= '9') || ch == '.' || ch == '_' || ch == '+' ||
           ch == '-';
  });
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("missing file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data),
            static_cast<std::streamsize>(bytes));
  if (!out) throw StoreError("write failed: " + path.string());
}

MatrixF read_f32(const fs::path& path, std::size_t rows, std::size_t cols) {
  const std::string bytes = read_file(path);
  const std::size_t expected = rows * cols * sizeof(float);
  if (bytes.size() != expected) {
    std::ostringstream msg;
    msg << "shape mismatch in " << path.string() << ": " << bytes.size()
        << " bytes, expected " << expected << " (" << rows << " x " << cols
        << " float32)";
    throw StoreError(msg.str());
  }
  MatrixF m(rows, cols);
  std::memcpy(m.data().data(), bytes.data(), expected);
  return m;
}

IndexSet json_indices(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw StoreError(std::string("splits.json: missing array '") + key + "'");
  }
  IndexSet out;
  out.reserve(j.at(key).size());
  for (const auto& v : j.at(key)) {
    if (!v.is_number_unsigned()) {
      throw StoreError(std::string("splits.json: non-integer index in '") +
                       key + "'");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

void check_split(const IndexSet& split, const char* name, std::size_t n) {
  std::vector<bool> seen(n, false);
  for (std::size_t idx : split) {
    if (idx >= n) {
      throw StoreError(std::string("split '") + name + "' index " +
                       std::to_string(idx) + " out of range");
    }
    if (seen[idx]) {
      throw StoreError(std::string("duplicate split index ") +
                       std::to_string(idx) + " in '" + name + "'");
    }
    seen[idx] = true;
  }
}

void check_disjoint(const IndexSet& a, const char* an, const IndexSet& b,
                    const char* bn) {
  const std::set<std::size_t> sa(a.begin(), a.end());
  for (std::size_t idx : b) {
    if (sa.count(idx)) {
      throw StoreError(std::string("splits '") + an + "' and '" + bn +
                       "' share index " + std::to_string(idx));
    }
  }
}

Manifest parse_manifest(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw StoreError(std::string("manifest.json: ") + e.what());
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.num_samples = j.at("num_samples").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& b : j.at("backbones")) {
      m.backbones.push_back(
          {b.at("name").get<std::string>(), b.at("dim").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw StoreError(std::string("manifest.json: ") + e.what());
  }
  return m;
}

json manifest_json(const Manifest& m) {
  json backbones = json::array();
  for (const auto& b : m.backbones) {
    backbones.push_back({{"name", b.name}, {"dim", b.dim}});
  }
  return {{"version", m.version},
          {"dataset_name", m.dataset_name},
          {"num_samples", m.num_samples},
          {"num_classes", m.num_classes},
          {"class_names", m.class_names},
          {"backbones", backbones}};
}

void validate_manifest(const Manifest& m) {
  if (m.version != 1) {
    throw StoreError("unsupported store version " + std::to_string(m.version));
  }
  if (m.num_samples < 1) throw StoreError("num_samples must be >= 1");
  if (m.num_classes < 2) throw StoreError("num_classes must be >= 2");
  if (m.class_names.size() != m.num_classes) {
    throw StoreError("class_names has " + std::to_string(m.class_names.size()) +
                     " entries, expected " + std::to_string(m.num_classes));
  }
  if (m.backbones.empty()) throw StoreError("store declares no backbones");
  std::set<std::string> names;
  for (const auto& b : m.backbones) {
    if (!valid_backbone_name(b.name)) {
      throw StoreError("invalid backbone name '" + b.name + "'");
    }
    if (!names.insert(b.name).second) {
      throw StoreError("duplicate backbone name '" + b.name + "'");
    }
    if (b.dim < 1) throw StoreError("backbone '" + b.name + "' has dim 0");
  }
}

void check_finite(const MatrixF& m, const std::string& what) {
  const auto data = m.data();
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!std::isfinite(data[k])) {
      throw StoreError("non-finite value in " + what + " at row " +
                       std::to_string(k / m.cols()) + ", col " +
                       std::to_string(k % m.cols()));
    }
  }
}

// Orthonormalizes the rows of a D x D standard normal matrix (modified
// Gram-Schmidt, rows in order), redrawing any row that collapses.
MatrixD random_rotation(std::size_t D, Rng& rng) {
  MatrixD q(D, D);
  for (std::size_t r = 0; r < D; ++r) {
    auto row = q.row(r);
    double norm = 0.0;
    while (norm < 1e-8) {
      for (auto& v : row) v = rng.normal();
      for (std::size_t k = 0; k < r; ++k) {
        const auto prev = q.row(k);
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += row[d] * prev[d];
        for (std::size_t d = 0; d < D; ++d) row[d] -= dot * prev[d];
      }
      norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
    }
    for (auto& v : row) v /= norm;
  }
  return q;
}

}  // namespace

SplitName parse_split_name(const std::string& name) {
  if (name == "train") return SplitName::kTrain;
  if (name == "probe_holdout") return SplitName::kProbeHoldout;
  if (name == "test") return SplitName::kTest;
  throw ConfigError("unknown split '" + name +
                    "' (expected train, probe_holdout or test)");
}

const char* to_string(SplitName name) noexcept {
  switch (name) {
    case SplitName::kTrain:
      return "train";
    case SplitName::kProbeHoldout:
      return "probe_holdout";
    case SplitName::kTest:
      return "test";
  }
  return "?";
}

const IndexSet& EmbeddingStore::split(SplitName name) const {
  switch (name) {
    case SplitName::kTrain:
      return splits.train;
    case SplitName::kProbeHoldout:
      return splits.probe_holdout;
    case SplitName::kTest:
      return splits.test;
  }
  throw ConfigError("unknown split");
}

const BackboneRecord& EmbeddingStore::backbone(const std::string& name) const {
  for (const auto& b : backbones) {
    if (b.name == name) return b;
  }
  throw ConfigError("unknown backbone '" + name + "'");
}

void validate(const EmbeddingStore& store) {
  const Manifest& m = store.manifest;
  validate_manifest(m);
  if (store.backbones.size() != m.backbones.size()) {
    throw StoreError("backbone record count does not match manifest");
  }
  for (std::size_t b = 0; b < store.backbones.size(); ++b) {
    const auto& rec = store.backbones[b];
    const auto& info = m.backbones[b];
    if (rec.name != info.name) {
      throw StoreError("backbone record '" + rec.name +
                       "' out of order with manifest entry '" + info.name +
                       "'");
    }
    if (rec.image.rows() != m.num_samples || rec.image.cols() != info.dim) {
      throw StoreError("backbone '" + rec.name + "' image shape mismatch");
    }
    if (rec.text.rows() != m.num_classes || rec.text.cols() != info.dim) {
      throw StoreError("backbone '" + rec.name + "' text shape mismatch");
    }
    check_finite(rec.image, rec.name + "/" + kImageFile);
    check_finite(rec.text, rec.name + "/" + kTextFile);
  }
  if (store.labels.size() != m.num_samples) {
    throw StoreError("label count does not match num_samples");
  }
  for (std::size_t i = 0; i < store.labels.size(); ++i) {
    if (store.labels[i] >= m.num_classes) {
      throw StoreError("label " + std::to_string(store.labels[i]) +
                       " out of range at sample " + std::to_string(i));
    }
  }
  const auto& s = store.splits;
  check_split(s.train, "train", m.num_samples);
  check_split(s.probe_holdout, "probe_holdout", m.num_samples);
  check_split(s.test, "test", m.num_samples);
  check_disjoint(s.train, "train", s.probe_holdout, "probe_holdout");
  check_disjoint(s.test, "test", s.probe_holdout, "probe_holdout");
}

EmbeddingStore load_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw StoreError("store directory not found: " + dir.string());
  }
  EmbeddingStore store;
  store.manifest = parse_manifest(read_file(dir / kManifestFile));
  validate_manifest(store.manifest);
  const Manifest& m = store.manifest;

  {
    const std::string bytes = read_file(dir / kLabelsFile);
    if (bytes.size() != m.num_samples * sizeof(std::uint32_t)) {
      throw StoreError("shape mismatch in labels.u32le: " +
                       std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(m.num_samples * sizeof(std::uint32_t)));
    }
    store.labels.resize(m.num_samples);
    std::memcpy(store.labels.data(), bytes.data(), bytes.size());
  }

  {
    json j;
    try {
      j = json::parse(read_file(dir / kSplitsFile));
    } catch (const json::exception& e) {
      throw StoreError(std::string("splits.json: ") + e.what());
    }
    store.splits.train = json_indices(j, "train");
    store.splits.probe_holdout = json_indices(j, "probe_holdout");
    store.splits.test = json_indices(j, "test");
  }

  for (const auto& info : m.backbones) {
    BackboneRecord rec;
    rec.name = info.name;
    rec.image = read_f32(dir / info.name / kImageFile, m.num_samples, info.dim);
    rec.text = read_f32(dir / info.name / kTextFile, m.num_classes, info.dim);
    store.backbones.push_back(std::move(rec));
  }
  validate(store);
  return store;
}

void save_store(const EmbeddingStore& store, const fs::path& dir,
                bool overwrite) {
  validate(store);
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) {
      throw StoreError("store path exists and is not a directory: " +
                       dir.string());
    }
    if (!fs::is_empty(dir) && !overwrite) {
      throw StoreError("refusing to write into non-empty directory " +
                       dir.string() + " (pass overwrite)");
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw StoreError("cannot create " + dir.string() + ": " + ec.message());

  const std::string manifest = manifest_json(store.manifest).dump(2) + "\n";
  write_file(dir / kManifestFile, manifest.data(), manifest.size());
  write_file(dir / kLabelsFile, store.labels.data(),
             store.labels.size() * sizeof(std::uint32_t));
  const json splits = {{"train", store.splits.train},
                       {"probe_holdout", store.splits.probe_holdout},
                       {"test", store.splits.test}};
  const std::string splits_text = splits.dump() + "\n";
  write_file(dir / kSplitsFile, splits_text.data(), splits_text.size());

  for (const auto& rec : store.backbones) {
    const fs::path sub = dir / rec.name;
    fs::create_directories(sub, ec);
    if (ec) throw StoreError("cannot create " + sub.string());
    write_file(sub / kImageFile, rec.image.data().data(),
               rec.image.size() * sizeof(float));
    write_file(sub / kTextFile, rec.text.data().data(),
               rec.text.size() * sizeof(float));
  }
}

std::vector<double> noise_ramp(std::size_t count, double lo, double hi) {
  std::vector<double> out(count, lo);
  if (count > 1) {
    for (std::size_t b = 0; b < count; ++b) {
      out[b] = lo + (hi - lo) * static_cast<double>(b) /
                        static_cast<double>(count - 1);
    }
  }
  return out;
}

EmbeddingStore synth_generate(const SynthParams& p) {
  if (p.num_backbones < 1 || p.num_samples < 1 || p.num_classes < 2 ||
      p.dim < 1) {
    throw ConfigError(
        "synth: need backbones >= 1, samples >= 1, classes >= 2, dim >= 1");
  }
  std::vector<double> noise = p.per_backbone_noise.empty()
                                  ? noise_ramp(p.num_backbones, 0.8, 1.2)
                                  : p.per_backbone_noise;
  if (noise.size() != p.num_backbones) {
    throw ConfigError("synth: per-backbone noise list has " +
                      std::to_string(noise.size()) + " entries, expected " +
                      std::to_string(p.num_backbones));
  }
  for (double v : noise) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError("synth: per-backbone noise must be finite and >= 0");
    }
  }
  if (!std::isfinite(p.shared_noise) || p.shared_noise < 0.0) {
    throw ConfigError("synth: shared noise must be finite and >= 0");
  }
  if (!(p.test_fraction >= 0.0 && p.test_fraction <= 1.0) ||
      !(p.holdout_fraction >= 0.0 && p.holdout_fraction <= 1.0)) {
    throw ConfigError("synth: split fractions must lie in [0, 1]");
  }

  const std::size_t B = p.num_backbones;
  const std::size_t N = p.num_samples;
  const std::size_t C = p.num_classes;
  const std::size_t D = p.dim;
  const double scale = kSynthNoiseScale / std::sqrt(static_cast<double>(D));
  Rng rng(p.seed);

  EmbeddingStore store;
  store.manifest.dataset_name = "synthetic";
  store.manifest.num_samples = N;
  store.manifest.num_classes = C;
  for (std::size_t c = 0; c < C; ++c) {
    store.manifest.class_names.push_back("class_" + std::to_string(c));
  }

  MatrixD prototypes(C, D);
  for (std::size_t c = 0; c < C; ++c) {
    auto row = prototypes.row(c);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : row) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : row) v /= norm;
  }
  std::vector<MatrixD> rotations;
  for (std::size_t b = 0; b < B; ++b) {
    rotations.push_back(random_rotation(D, rng));
  }
  store.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    store.labels[i] = static_cast<std::uint32_t>(i % C);
  }

  MatrixD shared(N, D);
  for (auto& v : shared.data()) v = rng.normal() * scale;

  for (std::size_t b = 0; b < B; ++b) {
    BackboneRecord rec;
    rec.name = "backbone_" + std::to_string(b);
    rec.text = MatrixF(C, D);
    rec.image = MatrixF(N, D);
    const MatrixD& rot = rotations[b];
    std::vector<double> x(D);
    auto rotate_into = [&](std::span<const double> v) {
      for (std::size_t r = 0; r < D; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < D; ++k) acc += rot(r, k) * v[k];
        x[r] = acc;
      }
    };
    for (std::size_t c = 0; c < C; ++c) {
      rotate_into(prototypes.row(c));
      for (std::size_t d = 0; d < D; ++d) {
        rec.text(c, d) = static_cast<float>(x[d]);
      }
    }
    std::vector<double> clean(D);
    for (std::size_t i = 0; i < N; ++i) {
      const auto proto = prototypes.row(store.labels[i]);
      for (std::size_t d = 0; d < D; ++d) {
        clean[d] = proto[d] + p.shared_noise * shared(i, d);
      }
      rotate_into(clean);
      double norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        x[d] += noise[b] * rng.normal() * scale;
        norm += x[d] * x[d];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        throw NumericalError("synth: degenerate zero image embedding");
      }
      for (std::size_t d = 0; d < D; ++d) {
        rec.image(i, d) = static_cast<float>(x[d] / norm);
      }
    }
    store.manifest.backbones.push_back({rec.name, D});
    store.backbones.push_back(std::move(rec));
  }

  std::vector<IndexSet> members(C);
  for (std::size_t i = 0; i < N; ++i) members[store.labels[i]].push_back(i);
  for (auto& cls : members) {
    rng.shuffle(std::span<std::size_t>(cls));
    const auto n_test = static_cast<std::size_t>(
        std::llround(p.test_fraction * static_cast<double>(cls.size())));
    const std::size_t rest = cls.size() - n_test;
    const auto n_hold = static_cast<std::size_t>(
        std::llround(p.holdout_fraction * static_cast<double>(rest)));
    for (std::size_t k = 0; k < cls.size(); ++k) {
      if (k < n_test) {
        store.splits.test.push_back(cls[k]);
      } else if (k < n_test + n_hold) {
        store.splits.probe_holdout.push_back(cls[k]);
      } else {
        store.splits.train.push_back(cls[k]);
      }
    }
  }
  std::sort(store.splits.train.begin(), store.splits.train.end());
  std::sort(store.splits.probe_holdout.begin(),
            store.splits.probe_holdout.end());
  std::sort(store.splits.test.begin(), store.splits.test.end());

  validate(store);
  return store;
}

IndexSet subsample_per_class(const IndexSet& split, const LabelVector& labels,
                             std::size_t num_classes, std::size_t n,
                             std::uint64_t seed) {
  if (n == 0) throw ConfigError("samples per class must be >= 1");
  if (split.empty()) throw ConfigError("cannot subsample an empty split");
  std::vector<IndexSet> members(num_classes);
  for (std::size_t idx : split) {
    if (idx >= labels.size() || labels[idx] >= num_classes) {
      throw ConfigError("split index " + std::to_string(idx) +
                        " has no valid label");
    }
    members[labels[idx]].push_back(idx);
  }
  Rng rng(seed);
  IndexSet out;
  for (auto& cls : members) {
    if (cls.size() > n) {
      rng.shuffle(std::span<std::size_t>(cls));
      cls.resize(n);
    }
    out.insert(out.end(), cls.begin(), cls.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bfuse
