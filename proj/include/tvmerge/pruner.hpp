#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/task_vector.hpp"

namespace tvmerge {

enum class LayerGrouping {
  kPerTensor,   // every named tensor is its own layer
  kNamePrefix,  // tensors sharing the name up to the last '.' form one layer
};

struct PruneConfig {
  double alpha = 20.0;  // % of largest magnitudes dropped per layer
  double beta = 20.0;   // % of smallest magnitudes dropped per layer
  LayerGrouping grouping = LayerGrouping::kPerTensor;

  // Throws std::invalid_argument unless alpha, beta >= 0 and alpha + beta <= 100.
  void validate() const;
};

struct LayerPruneStats {
  std::size_t n = 0;
  std::size_t dropped_top = 0;
  std::size_t dropped_bottom = 0;
};

// Masked task vector with its sign and magnitude split out.
// tau_hat == gamma_hat * mu_hat holds exactly on every element.
struct PrunedTaskVector {
  std::string source_label;
  ParamMap tau_hat;
  ParamMap gamma_hat;
  ParamMap mu_hat;
  std::map<std::string, LayerPruneStats, std::less<>> layers;
};

// Number of elements a tail of `percent` claims out of n: floor(percent*n/100).
std::size_t tail_count(double percent, std::size_t n);

// Keep mask for one layer. Drops the floor(alpha*n/100) largest-magnitude and
// floor(beta*n/100) smallest-magnitude entries. Among equal magnitudes the
// lower flat index is dropped first; the top tail is claimed before the
// bottom tail so the two never share an element.
std::vector<bool> layer_mask(std::span<const double> values, double alpha, double beta);

// Layer key for a tensor name under `grouping`.
std::string layer_key(const std::string& tensor_name, LayerGrouping grouping);

PrunedTaskVector prune_task_vector(const TaskVector& tau, const PruneConfig& cfg);

}  // namespace tvmerge
