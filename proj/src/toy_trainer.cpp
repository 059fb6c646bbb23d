#include "tvmerge/toy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tvmerge {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

std::size_t Rng::below(std::size_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below needs a positive bound");
  const std::uint64_t b = bound;
  const std::uint64_t threshold = (0 - b) % b;
  while (true) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return static_cast<std::size_t>(r % b);
  }
}

TinyModel TinyModel::zeros(std::vector<std::size_t> dims) {
  if (dims.size() < 2 || dims.back() != 1) {
    throw std::invalid_argument("TinyModel needs dims {input, ..., 1}");
  }
  TinyModel m;
  m.dims = std::move(dims);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) n += m.dims[l + 1] * (m.dims[l] + 1);
  m.params.assign(n, 0.0);
  return m;
}

std::size_t TinyModel::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += dims[l + 1] * (dims[l] + 1);
  return off;
}

std::size_t TinyModel::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + dims[layer + 1] * dims[layer];
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Forward pass keeping every layer's activation; the last one holds p.
void forward(const TinyModel& model, std::span<const double> x,
             std::vector<std::vector<double>>& acts) {
  const std::size_t layers = model.layer_count();
  acts.resize(layers + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = model.dims[l];
    const std::size_t out = model.dims[l + 1];
    const double* w = model.params.data() + model.weight_offset(l);
    const double* b = model.params.data() + model.bias_offset(l);
    auto& a = acts[l + 1];
    a.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double z = b[o];
      for (std::size_t i = 0; i < in; ++i) z += w[o * in + i] * acts[l][i];
      a[o] = (l + 1 == layers) ? sigmoid(z) : std::tanh(z);
    }
  }
}

void check_same_arch(const TinyModel& a, const TinyModel& b) {
  if (a.dims != b.dims || a.params.size() != b.params.size()) {
    throw std::invalid_argument("models have different architectures");
  }
}

}  // namespace

double TinyModel::predict_proba(std::span<const double> features) const {
  if (features.size() != input_dim()) {
    throw std::invalid_argument("expected " + std::to_string(input_dim()) + " features, got " +
                                std::to_string(features.size()));
  }
  std::vector<std::vector<double>> acts;
  forward(*this, features, acts);
  return acts.back()[0];
}

Checkpoint TinyModel::to_checkpoint(DType dtype) const {
  Checkpoint ckpt;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const auto w = params.begin() + static_cast<std::ptrdiff_t>(weight_offset(l));
    const auto b = params.begin() + static_cast<std::ptrdiff_t>(bias_offset(l));
    const auto prefix = "l" + std::to_string(l);
    ckpt.insert(prefix + ".w", Tensor{dtype, {out, in}, std::vector<double>(w, w + out * in)});
    ckpt.insert(prefix + ".b", Tensor{dtype, {out}, std::vector<double>(b, b + out)});
  }
  return ckpt;
}

TinyModel TinyModel::from_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::size_t> dims;
  std::size_t layers = 0;
  while (ckpt.find("l" + std::to_string(layers) + ".w")) ++layers;
  if (layers == 0 || ckpt.size() != 2 * layers) {
    throw std::invalid_argument("checkpoint is not a tiny model (expected l<k>.w / l<k>.b pairs)");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const auto prefix = "l" + std::to_string(l);
    const auto* w = ckpt.find(prefix + ".w");
    const auto* b = ckpt.find(prefix + ".b");
    if (!b || w->shape.size() != 2 || b->shape.size() != 1 || b->shape[0] != w->shape[0]) {
      throw std::invalid_argument("bad shapes for layer " + prefix);
    }
    if (l == 0) dims.push_back(w->shape[1]);
    if (w->shape[1] != dims.back()) {
      throw std::invalid_argument("layer " + prefix + " input width does not chain");
    }
    dims.push_back(w->shape[0]);
  }
  TinyModel model = zeros(dims);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto prefix = "l" + std::to_string(l);
    const auto& w = ckpt.at(prefix + ".w").values;
    const auto& b = ckpt.at(prefix + ".b").values;
    std::copy(w.begin(), w.end(), model.params.begin() + model.weight_offset(l));
    std::copy(b.begin(), b.end(), model.params.begin() + model.bias_offset(l));
  }
  return model;
}

TinyModel make_tiny_model(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
  if (input_dim == 0) throw std::invalid_argument("input_dim must be positive");
  std::vector<std::size_t> dims{input_dim};
  if (hidden_dim > 0) dims.push_back(hidden_dim);
  dims.push_back(1);
  TinyModel model = TinyModel::zeros(dims);
  Rng rng(seed);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const std::size_t w0 = model.weight_offset(l);
    const std::size_t b0 = model.bias_offset(l);
    for (std::size_t i = w0; i < b0; ++i) model.params[i] = scale * rng.normal();
    for (std::size_t i = b0; i < b0 + dims[l + 1]; ++i) model.params[i] = 0.01 * rng.normal();
  }
  return model;
}

LossAndGrad sft_loss(const TinyModel& theta, const TinyModel& theta_pre,
                     std::span<const Example> batch, double reg_lambda) {
  check_same_arch(theta, theta_pre);
  if (batch.empty()) throw std::invalid_argument("sft_loss needs a non-empty batch");
  if (std::isnan(reg_lambda)) throw std::invalid_argument("reg_lambda is NaN");
  for (std::size_t i = 0; i < theta.params.size(); ++i) {
    if (std::isnan(theta.params[i]) || std::isnan(theta_pre.params[i])) {
      throw std::invalid_argument("NaN parameter at index " + std::to_string(i));
    }
  }

  const std::size_t layers = theta.layer_count();
  LossAndGrad out;
  out.grads.assign(theta.params.size(), 0.0);
  std::vector<std::vector<double>> acts;
  std::vector<double> delta, prev_delta;

  for (const auto& ex : batch) {
    if (ex.features.size() != theta.input_dim()) {
      throw std::invalid_argument("example has wrong feature count");
    }
    if (std::isnan(ex.label) || std::any_of(ex.features.begin(), ex.features.end(),
                                            [](double v) { return std::isnan(v); })) {
      throw std::invalid_argument("NaN in batch");
    }
    forward(theta, ex.features, acts);
    const double p = acts.back()[0];
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    const double y = ex.label;
    out.loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);

    // d loss / d logit of the output unit.
    delta.assign(1, p - y);
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = theta.dims[l];
      const std::size_t outw = theta.dims[l + 1];
      const double* w = theta.params.data() + theta.weight_offset(l);
      double* gw = out.grads.data() + theta.weight_offset(l);
      double* gb = out.grads.data() + theta.bias_offset(l);
      for (std::size_t o = 0; o < outw; ++o) {
        gb[o] += delta[o];
        for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += delta[o] * acts[l][i];
      }
      if (l == 0) break;
      prev_delta.assign(in, 0.0);
      for (std::size_t i = 0; i < in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < outw; ++o) s += w[o * in + i] * delta[o];
        const double a = acts[l][i];
        prev_delta[i] = s * (1.0 - a * a);
      }
      delta.swap(prev_delta);
    }
  }

  for (std::size_t i = 0; i < theta.params.size(); ++i) {
    const double d = theta.params[i] - theta_pre.params[i];
    out.loss += reg_lambda * d * d;
    out.grads[i] += 2.0 * reg_lambda * d;
  }
  return out;
}

void adamw_step(std::vector<double>& theta, std::span<const double> grads, OptimState& state) {
  if (grads.size() != theta.size()) throw std::invalid_argument("gradient layout mismatch");
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
  }
  if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw std::invalid_argument("optimizer state layout mismatch");
  }
  ++state.step;
  const double c1 = state.bias_correction
                        ? 1.0 - std::pow(state.beta1, static_cast<double>(state.step))
                        : 1.0;
  const double c2 = state.bias_correction
                        ? 1.0 - std::pow(state.beta2, static_cast<double>(state.step))
                        : 1.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m = state.m[i] / c1;
    const double v = state.v[i] / c2;
    const double old = theta[i];
    theta[i] = old - state.eta * m / (std::sqrt(v) + state.epsilon) -
               state.eta * state.weight_decay * old;
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("learning rate must be positive");
  if (!(reg_lambda >= 0.0) || !std::isfinite(reg_lambda)) {
    throw std::invalid_argument("reg_lambda must be non-negative");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("weight_decay must be non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

TrainResult train_model(const TinyModel& theta_pre, std::span<const Example> dataset,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training set is empty");

  TrainResult result{theta_pre, {}};
  OptimState state;
  state.beta1 = cfg.beta1;
  state.beta2 = cfg.beta2;
  state.epsilon = cfg.epsilon;
  state.eta = cfg.eta;
  state.weight_decay = cfg.weight_decay;
  state.bias_correction = cfg.bias_correction;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Example> batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      const auto lg = sft_loss(result.model, theta_pre, batch, cfg.reg_lambda);
      if (!std::isfinite(lg.loss)) {
        throw std::runtime_error("training diverged: non-finite loss in epoch " +
                                 std::to_string(epoch));
      }
      adamw_step(result.model.params, lg.grads, state);
    }
    const double full = sft_loss(result.model, theta_pre, dataset, cfg.reg_lambda).loss;
    if (!std::isfinite(full)) {
      throw std::runtime_error("training diverged: non-finite loss after epoch " +
                               std::to_string(epoch));
    }
    result.epoch_loss.push_back(full);
  }
  return result;
}

Checkpoint train(const TinyModel& theta_pre, std::span<const Example> dataset,
                 const TrainConfig& cfg, DType dtype) {
  return train_model(theta_pre, dataset, cfg).model.to_checkpoint(dtype);
}

std::vector<Example> make_task_dataset(Task task, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("dataset size must be positive");
  static constexpr double kPlaneA[4] = {1.0, -0.8, 0.6, 0.4};
  static constexpr double kPlaneB[4] = {-0.5, 0.9, 0.7, -1.0};
  const bool is_a = task == Task::A;
  const double* plane = is_a ? kPlaneA : kPlaneB;
  const std::size_t active = is_a ? 0 : 4;

  Rng rng(seed * 2 + (is_a ? 0 : 1));
  std::vector<Example> data(n);
  for (auto& ex : data) {
    ex.features.assign(kToyInputDim, 0.0);
    for (std::size_t i = 0; i < kToyInputDim; ++i) {
      const bool signal = i >= active && i < active + 4;
      ex.features[i] = (signal ? 1.0 : 0.1) * rng.normal();
    }
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += plane[i] * ex.features[active + i];
    ex.label = s > 0.0 ? 1.0 : 0.0;
  }
  return data;
}

double accuracy(const TinyModel& model, std::span<const Example> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const double p = model.predict_proba(ex.features);
    if ((p >= 0.5 ? 1.0 : 0.0) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace tvmerge
