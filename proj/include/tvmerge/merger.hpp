#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/checkpoint.hpp"
#include "tvmerge/pruner.hpp"
#include "tvmerge/sign_consensus.hpp"
#include "tvmerge/task_vector.hpp"

namespace tvmerge {

struct MergeConfig {
  PruneConfig prune;
  double lambda = 1.0;  // scale applied to the merged task vector
  bool report_stats = false;

  void validate() const;
};

// Per-layer diagnostics. Drop counts are summed over the input models;
// agreement_rate is the fraction of surviving (non-zero) pruned entries whose
// sign equals the elected sign, 0 when nothing survived.
struct LayerMergeStats {
  std::size_t n = 0;
  std::size_t models = 0;
  std::size_t dropped_top = 0;
  std::size_t dropped_bottom = 0;
  double mean_abs_tau_hat = 0.0;
  double agreement_rate = 0.0;
};

using MergeStats = std::map<std::string, LayerMergeStats, std::less<>>;

struct MergeResult {
  Checkpoint merged;
  MergeStats stats;
};

// Averages, per parameter, the pruned entries whose sign matches the elected
// sign. Pruned-out entries never count; an empty set yields 0.
TaskVector merge_task_vectors(std::span<const PrunedTaskVector> pruned,
                              const ConsensusSigns& signs);

// Full pipeline: task vectors -> prune -> elect -> merge -> base + lambda * tau_m.
Checkpoint merge_models(const Checkpoint& base, std::span<const Checkpoint> models,
                        const MergeConfig& cfg);

// Same as merge_models; stats are filled only when cfg.report_stats is set.
MergeResult merge_models_with_stats(const Checkpoint& base, std::span<const Checkpoint> models,
                                    const MergeConfig& cfg);

// {layer: {n, models, dropped_top, dropped_bottom, mean_abs_tau_hat, agreement_rate}}
std::string merge_stats_json(const MergeStats& stats);

}  // namespace tvmerge
