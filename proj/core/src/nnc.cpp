#include "bfuse/nnc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bfuse/error.hpp"
#include "bfuse/normalize.hpp"
#include "bfuse/random.hpp"

namespace bfuse {
namespace {

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_model(const NncModel& model, const MatrixD& features,
                 std::span<const LogitMatrix> logits) {
  check_aligned(logits);
  if (model.num_backbones() != logits.size() ||
      model.weight.rows() != logits.size()) {
    throw ConfigError("NNC model has " +
                      std::to_string(model.num_backbones()) +
                      " outputs but there are " +
                      std::to_string(logits.size()) + " backbones");
  }
  if (features.cols() != model.input_size()) {
    throw ConfigError("NNC feature width " + std::to_string(features.cols()) +
                      " does not match model input " +
                      std::to_string(model.input_size()));
  }
  if (features.rows() != logits[0].rows()) {
    throw ConfigError("NNC features and logits disagree on sample count");
  }
}

// Raw layer outputs (pre-softplus) for one sample.
void forward_raw(const NncModel& model, std::span<const double> x,
                 std::span<double> raw) {
  for (std::size_t b = 0; b < model.num_backbones(); ++b) {
    const auto w = model.weight.row(b);
    double acc = model.bias[b];
    for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
    raw[b] = acc;
  }
}

}  // namespace

NncModel nnc_init(const std::vector<std::size_t>& input_dims, bool nonneg) {
  if (input_dims.empty()) throw ConfigError("NNC needs at least one backbone");
  const std::size_t B = input_dims.size();
  const std::size_t width =
      std::accumulate(input_dims.begin(), input_dims.end(), std::size_t{0});
  NncModel model;
  model.weight = MatrixD(B, width, 0.0);
  const double uniform = 1.0 / static_cast<double>(B);
  model.bias.assign(B, nonneg ? std::log(std::expm1(uniform)) : uniform);
  model.input_dims = input_dims;
  model.nonneg = nonneg;
  return model;
}

MatrixD nnc_features(const EmbeddingStore& store) {
  std::size_t width = 0;
  for (const auto& b : store.backbones) width += b.dim();
  MatrixD out(store.num_samples(), width);
  std::size_t offset = 0;
  for (const auto& b : store.backbones) {
    for (std::size_t i = 0; i < store.num_samples(); ++i) {
      const auto raw = b.image.row(i);
      const std::vector<double> wide(raw.begin(), raw.end());
      const auto unit = l2_normalize(wide);
      std::copy(unit.begin(), unit.end(), out.row(i).begin() +
                                              static_cast<std::ptrdiff_t>(offset));
    }
    offset += b.dim();
  }
  return out;
}

std::vector<double> nnc_temperatures(const NncModel& model,
                                     std::span<const double> features) {
  if (features.size() != model.input_size()) {
    throw ConfigError("NNC feature width mismatch");
  }
  std::vector<double> t(model.num_backbones());
  forward_raw(model, features, t);
  if (model.nonneg) {
    for (double& v : t) v = softplus(v);
  }
  return t;
}

NncLossGrad nnc_loss_and_grad(const NncModel& model, const MatrixD& features,
                              std::span<const LogitMatrix> logits,
                              const LabelVector& labels, const IndexSet& rows) {
  check_model(model, features, logits);
  if (rows.empty()) throw ConfigError("NNC loss over an empty split");
  const std::size_t B = model.num_backbones();
  const std::size_t C = logits[0].classes();
  const std::size_t F = model.input_size();

  NncLossGrad out;
  out.grad_weight = MatrixD(B, F, 0.0);
  out.grad_bias.assign(B, 0.0);
  std::vector<double> raw(B), t(B), s(C), g(B);
  for (std::size_t idx : rows) {
    const auto x = features.row(idx);
    forward_raw(model, x, raw);
    for (std::size_t b = 0; b < B; ++b) {
      t[b] = model.nonneg ? softplus(raw[b]) : raw[b];
    }
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto z = logits[b].values.row(idx);
      for (std::size_t c = 0; c < C; ++c) s[c] += t[b] * z[c];
    }
    const double m = *std::max_element(s.begin(), s.end());
    double sum = 0.0;
    for (double v : s) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    const std::uint32_t y = labels.at(idx);
    out.loss += lse - s[y];
    // d loss / d s_c = p_c - [c == y]
    for (double& v : s) v = std::exp(v - lse);
    s[y] -= 1.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto z = logits[b].values.row(idx);
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += z[c] * s[c];
      g[b] = model.nonneg ? acc * sigmoid(raw[b]) : acc;
      out.grad_bias[b] += g[b];
      auto gw = out.grad_weight.row(b);
      for (std::size_t k = 0; k < F; ++k) gw[k] += g[b] * x[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  for (double& v : out.grad_bias) v *= inv;
  for (double& v : out.grad_weight.data()) v *= inv;
  return out;
}

NncTrainResult nnc_train(const MatrixD& features,
                         std::span<const LogitMatrix> logits,
                         const LabelVector& labels, const IndexSet& fit_split,
                         const std::vector<std::size_t>& input_dims,
                         const TrainConfig& cfg, bool nonneg) {
  if (fit_split.empty()) throw ConfigError("NNC fit split is empty");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size < 1) {
    throw ConfigError("NNC needs learning_rate > 0 and batch_size >= 1");
  }
  NncTrainResult res{nnc_init(input_dims, nonneg), {}};
  NncModel& model = res.model;
  check_model(model, features, logits);

  const std::size_t B = model.num_backbones();
  const std::size_t F = model.input_size();
  std::vector<double> params(B * F + B);
  std::vector<double> grad(params.size());
  auto pack = [&] {
    std::copy(model.weight.data().begin(), model.weight.data().end(),
              params.begin());
    std::copy(model.bias.begin(), model.bias.end(),
              params.begin() + static_cast<std::ptrdiff_t>(B * F));
  };
  auto unpack = [&] {
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(B * F),
              model.weight.data().begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(B * F), params.end(),
              model.bias.begin());
  };
  auto full_loss = [&](std::size_t epoch) {
    const double loss =
        nnc_loss_and_grad(model, features, logits, labels, fit_split).loss;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "NNC loss became non-finite after epoch " << epoch
          << " (lr " << cfg.learning_rate << ", batch " << cfg.batch_size
          << ")";
      throw NumericalError(msg.str());
    }
    res.epoch_loss.push_back(loss);
  };

  pack();
  Adam adam(params.size(), cfg);
  Rng rng(cfg.seed);
  IndexSet order = fit_split;
  full_loss(0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const IndexSet batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      const NncLossGrad lg =
          nnc_loss_and_grad(model, features, logits, labels, batch);
      if (!std::isfinite(lg.loss)) {
        std::ostringstream msg;
        msg << "NNC batch loss non-finite at epoch " << epoch << ", batch "
            << start / cfg.batch_size;
        throw NumericalError(msg.str());
      }
      std::copy(lg.grad_weight.data().begin(), lg.grad_weight.data().end(),
                grad.begin());
      std::copy(lg.grad_bias.begin(), lg.grad_bias.end(),
                grad.begin() + static_cast<std::ptrdiff_t>(B * F));
      adam.step(params, grad);
      unpack();
    }
    full_loss(epoch);
  }
  return res;
}

NncTrainResult nnc_train(const EmbeddingStore& store,
                         std::span<const LogitMatrix> logits,
                         const IndexSet& fit_split, const TrainConfig& cfg,
                         bool nonneg) {
  std::vector<std::size_t> dims;
  for (const auto& b : store.backbones) dims.push_back(b.dim());
  return nnc_train(nnc_features(store), logits, store.labels, fit_split, dims,
                   cfg, nonneg);
}

NncApplication nnc_apply(const NncModel& model, const MatrixD& features,
                         std::span<const LogitMatrix> logits) {
  check_model(model, features, logits);
  MatrixD temps(features.rows(), model.num_backbones());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto t = nnc_temperatures(model, features.row(i));
    std::copy(t.begin(), t.end(), temps.row(i).begin());
  }
  NncApplication out;
  out.temperatures = TemperatureVector::per_sample(std::move(temps));
  out.fused = combine_with_temperatures(logits, out.temperatures);
  return out;
}

NncApplication nnc_apply(const NncModel& model, const EmbeddingStore& store,
                         std::span<const LogitMatrix> logits) {
  return nnc_apply(model, nnc_features(store), logits);
}

}  // namespace bfuse
