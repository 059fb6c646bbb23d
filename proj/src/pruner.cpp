#include "tvmerge/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tvmerge {

void PruneConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("alpha and beta must be non-negative percentages");
  }
  if (alpha + beta > 100.0) {
    throw std::invalid_argument("alpha + beta must not exceed 100 (got " +
                                std::to_string(alpha + beta) + ")");
  }
}

std::size_t tail_count(double percent, std::size_t n) {
  return static_cast<std::size_t>(std::floor(percent * static_cast<double>(n) / 100.0));
}

std::vector<bool> layer_mask(std::span<const double> values, double alpha, double beta) {
  PruneConfig{alpha, beta}.validate();
  const std::size_t n = values.size();
  std::vector<bool> keep(n, true);
  if (n == 0) return keep;
  for (const double v : values) {
    if (std::isnan(v)) throw std::invalid_argument("cannot rank NaN task-vector entries");
  }

  const std::size_t top = std::min(tail_count(alpha, n), n);
  const std::size_t bottom = std::min(tail_count(beta, n), n - top);

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  if (top > 0) {
    const auto larger_first = [&](std::size_t a, std::size_t b) {
      const double ma = std::fabs(values[a]);
      const double mb = std::fabs(values[b]);
      return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top - 1), idx.end(),
                     larger_first);
    for (std::size_t i = 0; i < top; ++i) keep[idx[i]] = false;
  }

  if (bottom > 0) {
    // Only the survivors of the top tail compete for the bottom tail.
    idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top));
    const auto smaller_first = [&](std::size_t a, std::size_t b) {
      const double ma = std::fabs(values[a]);
      const double mb = std::fabs(values[b]);
      return ma != mb ? ma < mb : a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(bottom - 1),
                     idx.end(), smaller_first);
    for (std::size_t i = 0; i < bottom; ++i) keep[idx[i]] = false;
  }
  return keep;
}

std::string layer_key(const std::string& tensor_name, LayerGrouping grouping) {
  if (grouping == LayerGrouping::kPerTensor) return tensor_name;
  const auto dot = tensor_name.rfind('.');
  return dot == std::string::npos ? tensor_name : tensor_name.substr(0, dot);
}

PrunedTaskVector prune_task_vector(const TaskVector& tau, const PruneConfig& cfg) {
  cfg.validate();

  std::map<std::string, std::vector<const std::string*>, std::less<>> groups;
  for (const auto& [name, _] : tau.deltas) groups[layer_key(name, cfg.grouping)].push_back(&name);

  PrunedTaskVector out;
  out.source_label = tau.source_label;
  std::vector<double> flat;
  for (const auto& [key, members] : groups) {
    flat.clear();
    for (const auto* name : members) {
      const auto& d = tau.deltas.find(*name)->second;
      flat.insert(flat.end(), d.begin(), d.end());
    }
    const auto keep = layer_mask(flat, cfg.alpha, cfg.beta);

    LayerPruneStats stats;
    stats.n = flat.size();
    stats.dropped_top = std::min(tail_count(cfg.alpha, stats.n), stats.n);
    stats.dropped_bottom = std::min(tail_count(cfg.beta, stats.n), stats.n - stats.dropped_top);
    out.layers.emplace(key, stats);

    std::size_t pos = 0;
    for (const auto* name : members) {
      const auto& d = tau.deltas.find(*name)->second;
      std::vector<double> tau_hat(d.size()), gamma(d.size()), mu(d.size());
      for (std::size_t i = 0; i < d.size(); ++i, ++pos) {
        const double v = keep[pos] ? d[i] : 0.0;
        tau_hat[i] = v;
        gamma[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        mu[i] = std::fabs(v);
      }
      out.tau_hat.emplace(*name, std::move(tau_hat));
      out.gamma_hat.emplace(*name, std::move(gamma));
      out.mu_hat.emplace(*name, std::move(mu));
    }
  }
  return out;
}

}  // namespace tvmerge
