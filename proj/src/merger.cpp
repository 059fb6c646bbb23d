#include "tvmerge/merger.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace tvmerge {

void MergeConfig::validate() const {
  prune.validate();
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
}

TaskVector merge_task_vectors(std::span<const PrunedTaskVector> pruned,
                              const ConsensusSigns& signs) {
  if (pruned.empty()) throw std::invalid_argument("nothing to merge");
  for (const auto& p : pruned) {
    check_same_layout(signs.gamma_m, p.tau_hat);
    check_same_layout(signs.gamma_m, p.gamma_hat);
  }

  TaskVector merged;
  merged.source_label = "merged";
  std::vector<double> chosen;
  chosen.reserve(pruned.size());
  for (const auto& [name, elected] : signs.gamma_m) {
    std::vector<const std::vector<double>*> taus, gammas;
    for (const auto& p : pruned) {
      taus.push_back(&p.tau_hat.find(name)->second);
      gammas.push_back(&p.gamma_hat.find(name)->second);
    }
    std::vector<double> out(elected.size(), 0.0);
    for (std::size_t i = 0; i < elected.size(); ++i) {
      if (elected[i] == 0.0) continue;
      chosen.clear();
      for (std::size_t t = 0; t < pruned.size(); ++t) {
        const double g = (*gammas[t])[i];
        if (g != 0.0 && g == elected[i]) chosen.push_back((*taus[t])[i]);
      }
      if (chosen.empty()) continue;
      // Summing in value order makes the result independent of model order.
      std::sort(chosen.begin(), chosen.end());
      double sum = 0.0;
      for (const double v : chosen) sum += v;
      out[i] = sum / static_cast<double>(chosen.size());
    }
    merged.deltas.emplace(name, std::move(out));
  }
  return merged;
}

namespace {

MergeStats collect_stats(std::span<const PrunedTaskVector> pruned, const ConsensusSigns& signs,
                         LayerGrouping grouping) {
  MergeStats stats;
  for (const auto& p : pruned) {
    for (const auto& [key, ls] : p.layers) {
      auto& s = stats[key];
      s.n = ls.n;
      s.models += 1;
      s.dropped_top += ls.dropped_top;
      s.dropped_bottom += ls.dropped_bottom;
    }
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> agreement;
  std::map<std::string, double, std::less<>> abs_sum;
  for (const auto& [name, elected] : signs.gamma_m) {
    const auto key = layer_key(name, grouping);
    auto& [agree, survive] = agreement[key];
    auto& total = abs_sum[key];
    for (const auto& p : pruned) {
      const auto& g = p.gamma_hat.find(name)->second;
      const auto& mu = p.mu_hat.find(name)->second;
      for (std::size_t i = 0; i < g.size(); ++i) {
        total += mu[i];
        if (g[i] != 0.0) {
          ++survive;
          if (g[i] == elected[i]) ++agree;
        }
      }
    }
  }
  for (auto& [key, s] : stats) {
    const auto [agree, survive] = agreement[key];
    s.agreement_rate = survive == 0 ? 0.0 : static_cast<double>(agree) / survive;
    const double denom = static_cast<double>(s.n * s.models);
    s.mean_abs_tau_hat = denom == 0.0 ? 0.0 : abs_sum[key] / denom;
  }
  return stats;
}

}  // namespace

MergeResult merge_models_with_stats(const Checkpoint& base, std::span<const Checkpoint> models,
                                    const MergeConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw std::invalid_argument("merge needs at least one fine-tuned model");

  std::vector<PrunedTaskVector> pruned;
  pruned.reserve(models.size());
  for (std::size_t t = 0; t < models.size(); ++t) {
    const auto tau = build_task_vector(models[t], base, "model" + std::to_string(t));
    pruned.push_back(prune_task_vector(tau, cfg.prune));
  }
  const auto signs = elect_sign(pruned);
  const auto merged_tau = merge_task_vectors(pruned, signs);

  MergeResult result{apply_task_vector(base, merged_tau, cfg.lambda), {}};
  if (cfg.report_stats) result.stats = collect_stats(pruned, signs, cfg.prune.grouping);
  return result;
}

Checkpoint merge_models(const Checkpoint& base, std::span<const Checkpoint> models,
                        const MergeConfig& cfg) {
  MergeConfig quiet = cfg;
  quiet.report_stats = false;
  return merge_models_with_stats(base, models, quiet).merged;
}

std::string merge_stats_json(const MergeStats& stats) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [key, s] : stats) {
    out[key] = {{"n", s.n},
                {"models", s.models},
                {"dropped_top", s.dropped_top},
                {"dropped_bottom", s.dropped_bottom},
                {"mean_abs_tau_hat", s.mean_abs_tau_hat},
                {"agreement_rate", s.agreement_rate}};
  }
  return out.dump(2) + "\n";
}

}  // namespace tvmerge
