#pragma once

// Desk-scale fine-tuning: tiny tanh MLPs with a logistic output, trained with
// binary cross-entropy plus an L2 pull toward the pre-trained weights and the
// AdamW update. Produces real fine-tuned checkpoints for the merger.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tvmerge/checkpoint.hpp"

namespace tvmerge {

inline constexpr std::size_t kToyInputDim = 8;
inline constexpr std::size_t kToyHiddenDim = 16;

// Deterministic draws on top of mt19937_64. The distributions are written out
// here because the standard library's are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                     // [0, 1)
  double normal();                      // N(0, 1), Box-Muller
  std::size_t below(std::size_t bound); // [0, bound), unbiased

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Dense net with layer widths dims = {input, hidden..., 1}. Parameters are
// stored flat, layer by layer: weight (out x in, row-major) then bias.
// Checkpoint names are "l<k>.w" and "l<k>.b".
struct TinyModel {
  std::vector<std::size_t> dims;
  std::vector<double> params;

  static TinyModel zeros(std::vector<std::size_t> dims);
  static TinyModel from_checkpoint(const Checkpoint& ckpt);

  std::size_t layer_count() const { return dims.size() - 1; }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;

  double predict_proba(std::span<const double> features) const;
  Checkpoint to_checkpoint(DType dtype = DType::F32) const;
};

// input -> hidden (tanh) -> 1 (logistic). hidden_dim == 0 gives plain
// logistic regression. Weights ~ N(0, 1/fan_in), biases ~ N(0, 0.01).
TinyModel make_tiny_model(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);

struct Example {
  std::vector<double> features;
  double label = 0.0;  // 0 or 1
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grads;  // same layout as TinyModel::params
};

inline constexpr double kProbClamp = 1e-12;

// -sum_i [y log p + (1-y) log(1-p)] + reg_lambda * ||theta - theta_pre||^2,
// with p clamped to [1e-12, 1 - 1e-12]. Throws std::invalid_argument on an
// empty batch, mismatched layouts, or NaN inputs.
LossAndGrad sft_loss(const TinyModel& theta, const TinyModel& theta_pre,
                     std::span<const Example> batch, double reg_lambda);

struct OptimState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double eta = 1e-2;
  double weight_decay = 0.01;
  // Off by default: the update is theta -= eta*m/(sqrt(v)+eps) + eta*wd*theta
  // on the raw moments. On divides m, v by (1 - beta^step) first.
  bool bias_correction = false;
};

// One update in place. Moments are refreshed with `grads` first, then the
// step uses the new moments and the pre-update theta for decay. Empty
// moments are zero-initialised on the first call.
void adamw_step(std::vector<double>& theta, std::span<const double> grads, OptimState& state);

struct TrainConfig {
  double reg_lambda = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double eta = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  bool bias_correction = false;

  void validate() const;
};

struct TrainResult {
  TinyModel model;
  std::vector<double> epoch_loss;  // full-dataset objective after each epoch
};

// Mini-batch training from theta_pre. Shuffling is seeded by cfg.seed.
// Throws std::runtime_error if the objective becomes non-finite.
TrainResult train_model(const TinyModel& theta_pre, std::span<const Example> dataset,
                        const TrainConfig& cfg);
Checkpoint train(const TinyModel& theta_pre, std::span<const Example> dataset,
                 const TrainConfig& cfg, DType dtype = DType::F32);

enum class Task { A, B };

// Two synthetic binary tasks over kToyInputDim features. Task A draws signal
// on features 0-3 and labels by one hyperplane; task B draws signal on
// features 4-7 and labels by another. The idle half carries small noise.
std::vector<Example> make_task_dataset(Task task, std::size_t n, std::uint64_t seed);

double accuracy(const TinyModel& model, std::span<const Example> data);

}  // namespace tvmerge
