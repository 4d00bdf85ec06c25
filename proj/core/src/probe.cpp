#include "bfuse/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "bfuse/error.hpp"
#include "bfuse/normalize.hpp"
#include "bfuse/random.hpp"

namespace bfuse {

namespace fs = std::filesystem;

namespace {

void check_probe(const LinearProbe& probe, std::size_t dim) {
  if (probe.weight.cols() != dim) {
    throw ConfigError("probe for '" + probe.backbone + "' expects dim " +
                      std::to_string(probe.weight.cols()) + ", got " +
                      std::to_string(dim));
  }
  if (probe.bias.size() != probe.weight.rows()) {
    throw ConfigError("probe bias length does not match class count");
  }
}

void probe_forward(const LinearProbe& probe, std::span<const double> x,
                   std::span<double> z) {
  for (std::size_t c = 0; c < probe.weight.rows(); ++c) {
    const auto w = probe.weight.row(c);
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) acc += w[d] * x[d];
    z[c] = acc + probe.bias[c];
  }
}

}  // namespace

LinearProbe init_from_language_weights(const BackboneRecord& backbone) {
  LinearProbe probe;
  probe.backbone = backbone.name;
  probe.weight = MatrixD(backbone.text.rows(), backbone.dim());
  for (std::size_t c = 0; c < backbone.text.rows(); ++c) {
    const auto raw = backbone.text.row(c);
    const auto unit = l2_normalize(std::vector<double>(raw.begin(), raw.end()));
    std::copy(unit.begin(), unit.end(), probe.weight.row(c).begin());
  }
  probe.bias.assign(backbone.text.rows(), 0.0);
  return probe;
}

MatrixD probe_inputs(const BackboneRecord& backbone) {
  MatrixD out(backbone.image.rows(), backbone.dim());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto raw = backbone.image.row(i);
    const auto unit = l2_normalize(std::vector<double>(raw.begin(), raw.end()));
    std::copy(unit.begin(), unit.end(), out.row(i).begin());
  }
  return out;
}

ProbeLossGrad probe_loss_and_grad(const LinearProbe& probe,
                                  const MatrixD& inputs,
                                  const LabelVector& labels,
                                  const IndexSet& rows) {
  check_probe(probe, inputs.cols());
  if (rows.empty()) throw ConfigError("probe loss over an empty split");
  const std::size_t C = probe.weight.rows();
  const std::size_t D = probe.weight.cols();
  ProbeLossGrad out;
  out.grad_weight = MatrixD(C, D, 0.0);
  out.grad_bias.assign(C, 0.0);
  std::vector<double> z(C);
  for (std::size_t idx : rows) {
    const auto x = inputs.row(idx);
    probe_forward(probe, x, z);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    const std::uint32_t y = labels.at(idx);
    out.loss += lse - z[y];
    for (std::size_t c = 0; c < C; ++c) {
      const double g = std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0);
      out.grad_bias[c] += g;
      auto gw = out.grad_weight.row(c);
      for (std::size_t d = 0; d < D; ++d) gw[d] += g * x[d];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  for (double& v : out.grad_bias) v *= inv;
  for (double& v : out.grad_weight.data()) v *= inv;
  return out;
}

ProbeTrainResult train_probe(const LinearProbe& init,
                             const BackboneRecord& backbone,
                             const LabelVector& labels,
                             const IndexSet& train_rows, const TrainConfig& cfg,
                             const IndexSet& excluded) {
  if (train_rows.empty()) throw ConfigError("probe training split is empty");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size < 1) {
    throw ConfigError("probe needs learning_rate > 0 and batch_size >= 1");
  }
  {
    const std::set<std::size_t> banned(excluded.begin(), excluded.end());
    for (std::size_t idx : train_rows) {
      if (banned.count(idx)) {
        throw ConfigError("probe training rows overlap held-out index " +
                          std::to_string(idx));
      }
    }
  }
  const MatrixD inputs = probe_inputs(backbone);
  check_probe(init, inputs.cols());

  ProbeTrainResult res{init, 0.0, {}};
  LinearProbe& probe = res.probe;
  const std::size_t C = probe.weight.rows();
  const std::size_t D = probe.weight.cols();
  std::vector<double> params(C * D + C);
  std::vector<double> grad(params.size());
  std::copy(probe.weight.data().begin(), probe.weight.data().end(),
            params.begin());
  std::copy(probe.bias.begin(), probe.bias.end(),
            params.begin() + static_cast<std::ptrdiff_t>(C * D));

  auto full_loss = [&](std::size_t epoch) {
    const double loss =
        probe_loss_and_grad(probe, inputs, labels, train_rows).loss;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "probe loss for '" << probe.backbone
          << "' became non-finite after epoch " << epoch;
      throw NumericalError(msg.str());
    }
    res.epoch_loss.push_back(loss);
  };

  Adam adam(params.size(), cfg);
  Rng rng(cfg.seed);
  IndexSet order = train_rows;
  full_loss(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const IndexSet batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      const ProbeLossGrad lg = probe_loss_and_grad(probe, inputs, labels, batch);
      std::copy(lg.grad_weight.data().begin(), lg.grad_weight.data().end(),
                grad.begin());
      std::copy(lg.grad_bias.begin(), lg.grad_bias.end(),
                grad.begin() + static_cast<std::ptrdiff_t>(C * D));
      adam.step(params, grad);
      std::copy(params.begin(),
                params.begin() + static_cast<std::ptrdiff_t>(C * D),
                probe.weight.data().begin());
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(C * D),
                params.end(), probe.bias.begin());
    }
    full_loss(epoch);
  }

  std::vector<double> z(C);
  std::size_t hits = 0;
  for (std::size_t idx : train_rows) {
    probe_forward(probe, inputs.row(idx), z);
    if (argmax(z) == labels[idx]) ++hits;
  }
  res.train_accuracy =
      static_cast<double>(hits) / static_cast<double>(train_rows.size());
  return res;
}

LogitMatrix probe_logits(const LinearProbe& probe,
                         const BackboneRecord& backbone) {
  check_probe(probe, backbone.dim());
  const MatrixD inputs = probe_inputs(backbone);
  LogitMatrix out{MatrixD(inputs.rows(), probe.weight.rows()), backbone.name,
                  NormMode::kL2};
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    probe_forward(probe, inputs.row(i), out.values.row(i));
  }
  return out;
}

void save_probe(const LinearProbe& probe, const fs::path& dir,
                const std::string& extra_json) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw StoreError("cannot create " + dir.string());
  std::vector<float> blob;
  blob.reserve(probe.weight.size() + probe.bias.size());
  for (double v : probe.weight.data()) blob.push_back(static_cast<float>(v));
  for (double v : probe.bias) blob.push_back(static_cast<float>(v));
  {
    std::ofstream out(dir / (probe.backbone + ".probe.f32le"),
                      std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw StoreError("failed writing probe for " + probe.backbone);
  }
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(extra_json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("probe sidecar extra: ") + e.what());
  }
  side["backbone"] = probe.backbone;
  side["num_classes"] = probe.weight.rows();
  side["dim"] = probe.weight.cols();
  side["layout"] = "weight C x D row-major float32 LE, then C bias";
  std::ofstream out(dir / (probe.backbone + ".probe.json"), std::ios::trunc);
  out << side.dump(2) << "\n";
  if (!out) throw StoreError("failed writing probe sidecar for " + probe.backbone);
}

LinearProbe load_probe(const fs::path& dir, const std::string& backbone) {
  nlohmann::json side;
  {
    std::ifstream in(dir / (backbone + ".probe.json"));
    if (!in) throw StoreError("missing probe sidecar for '" + backbone + "'");
    try {
      in >> side;
    } catch (const nlohmann::json::exception& e) {
      throw StoreError(std::string("probe sidecar: ") + e.what());
    }
  }
  const auto C = side.at("num_classes").get<std::size_t>();
  const auto D = side.at("dim").get<std::size_t>();
  std::ifstream in(dir / (backbone + ".probe.f32le"), std::ios::binary);
  if (!in) throw StoreError("missing probe weights for '" + backbone + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() != (C * D + C) * sizeof(float)) {
    throw StoreError("probe weights for '" + backbone + "' have wrong size");
  }
  std::vector<float> blob(C * D + C);
  std::memcpy(blob.data(), bytes.data(), bytes.size());
  LinearProbe probe;
  probe.backbone = backbone;
  probe.weight = MatrixD(C, D);
  std::copy(blob.begin(), blob.begin() + static_cast<std::ptrdiff_t>(C * D),
            probe.weight.data().begin());
  probe.bias.assign(blob.begin() + static_cast<std::ptrdiff_t>(C * D),
                    blob.end());
  for (double v : probe.weight.data()) {
    if (!std::isfinite(v)) throw StoreError("non-finite probe weight");
  }
  return probe;
}

}  // namespace bfuse
