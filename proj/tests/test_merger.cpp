#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "merge_fixtures.hpp"
#include "oracles/oracles.hpp"
#include "tvmerge/merger.hpp"

using namespace tvmerge;

namespace {

Checkpoint single(std::vector<double> w) {
  Checkpoint c;
  const auto n = static_cast<std::uint64_t>(w.size());
  c.insert("w", Tensor{DType::F64, {n}, std::move(w)});
  return c;
}

PrunedTaskVector unpruned(std::vector<double> values) {
  TaskVector tau;
  tau.deltas["w"] = std::move(values);
  return prune_task_vector(tau, {0, 0});
}

double max_abs_diff(const Checkpoint& a, const Checkpoint& b) {
  double worst = 0.0;
  for (const auto& [name, t] : a.tensors()) {
    const auto& u = b.at(name).values;
    for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::fabs(t.values[i] - u[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("disjoint mean over agreeing entries") {
  const std::vector<PrunedTaskVector> p{unpruned({0.4, 0.3, 0.3}), unpruned({-0.2, -0.5, -0.3}),
                                        unpruned({0.6, 0.0, 0.0})};
  const auto signs = elect_sign(p);
  CHECK(signs.gamma_m.at("w") == std::vector<double>{1, -1, 0});
  const auto merged = merge_task_vectors(p, signs);
  const auto& w = merged.deltas.at("w");
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(w[1] == -0.5);
  CHECK(w[2] == 0.0);
}

TEST_CASE("unanimous value is kept; pruned-out entries never vote") {
  const std::vector<PrunedTaskVector> p{unpruned({0.7, 0.0}), unpruned({0.7, 0.2}),
                                        unpruned({0.7, 0.0})};
  const auto merged = merge_task_vectors(p, elect_sign(p));
  const auto& w = merged.deltas.at("w");
  CHECK(w[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(w[1] == 0.2);
}

TEST_CASE("identity: one model, no pruning, unit scale") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto fam = merge_fixtures::random_family(rng, 1);
    MergeConfig cfg;
    cfg.prune = {0, 0};
    cfg.lambda = 1.0;
    const auto merged = merge_models(fam.base, fam.models, cfg);
    CHECK(max_abs_diff(merged, fam.models[0]) <= 1e-12);

    const std::vector<Checkpoint> twice{fam.models[0], fam.models[0]};
    CHECK(max_abs_diff(merge_models(fam.base, twice, cfg), fam.models[0]) <= 1e-12);
  }
}

TEST_CASE("all models equal to base yield base exactly") {
  std::mt19937_64 rng(43);
  const auto fam = merge_fixtures::random_family(rng, 0);
  const std::vector<Checkpoint> copies(3, fam.base);
  MergeConfig cfg;
  cfg.lambda = 1.7;
  CHECK(merge_models(fam.base, copies, cfg) == fam.base);
}

TEST_CASE("pipeline matches the scalar oracle") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 30; ++trial) {
    const auto fam = merge_fixtures::random_family(rng, 2 + rng() % 3);
    const double alpha = 20, beta = 20, lambda = 0.9;
    MergeConfig cfg;
    cfg.prune = {alpha, beta};
    cfg.lambda = lambda;
    const auto merged = merge_models(fam.base, fam.models, cfg);
    std::vector<oracle::Layers> models;
    for (const auto& m : fam.models) models.push_back(merge_fixtures::to_layers(m));
    const auto expect = oracle::merge(merge_fixtures::to_layers(fam.base), models, alpha, beta, lambda);
    for (const auto& [name, values] : expect) {
      const auto& got = merged.at(name).values;
      for (std::size_t i = 0; i < values.size(); ++i) CHECK(std::fabs(got[i] - values[i]) <= 1e-9);
    }
  }
}

TEST_CASE("model order does not change the result") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    auto fam = merge_fixtures::random_family(rng, 4);
    MergeConfig cfg;
    cfg.prune = {10, 20};
    cfg.lambda = 1.3;
    const auto a = merge_models(fam.base, fam.models, cfg);
    std::shuffle(fam.models.begin(), fam.models.end(), rng);
    CHECK(merge_models(fam.base, fam.models, cfg) == a);
  }
}

TEST_CASE("layout and dtypes mirror the base") {
  Checkpoint base;
  base.insert("a", Tensor{DType::F16, {2}, {1.0, 2.0}});
  base.insert("b", Tensor{DType::F32, {1, 1}, {3.0}});
  base.metadata()["k"] = "v";
  Checkpoint ft = base;
  ft.mutable_tensors().at("a").values = {1.5, 2.5};
  const std::vector<Checkpoint> models{ft};
  const auto merged = merge_models(base, models, MergeConfig{});
  CHECK(merged.metadata() == base.metadata());
  for (const auto& [name, t] : base.tensors()) {
    CHECK(merged.at(name).shape == t.shape);
    CHECK(merged.at(name).dtype == t.dtype);
  }
}

TEST_CASE("merge validates configuration and inputs") {
  const auto base = single({1.0, 2.0});
  const std::vector<Checkpoint> none;
  CHECK_THROWS_AS(merge_models(base, none, MergeConfig{}), std::invalid_argument);
  const std::vector<Checkpoint> bad{single({1.0})};
  CHECK_THROWS_AS(merge_models(base, bad, MergeConfig{}), IncompatibleError);
  MergeConfig cfg;
  cfg.lambda = NAN;
  const std::vector<Checkpoint> ok{base};
  CHECK_THROWS_AS(merge_models(base, ok, cfg), std::invalid_argument);
  cfg.lambda = 1.0;
  cfg.prune = {70, 40};
  CHECK_THROWS_AS(merge_models(base, ok, cfg), std::invalid_argument);
}

TEST_CASE("stats report drop counts and agreement") {
  const auto base = single({0, 0, 0, 0, 0});
  const std::vector<Checkpoint> models{single({0.1, 0.2, 0.3, 0.4, 5.0}),
                                       single({-0.1, 0.2, 0.3, 0.4, 5.0})};
  MergeConfig cfg;
  cfg.prune = {20, 20};
  cfg.report_stats = true;
  const auto r = merge_models_with_stats(base, models, cfg);
  const auto& s = r.stats.at("w");
  CHECK(s.n == 5);
  CHECK(s.models == 2);
  CHECK(s.dropped_top == 2);
  CHECK(s.dropped_bottom == 2);
  // Survivors per model: 0.2, 0.3, 0.4 -> all agree with the elected +1.
  CHECK(s.agreement_rate == 1.0);
  CHECK(s.mean_abs_tau_hat == doctest::Approx((0.9 * 2) / 10.0));
  const auto json = merge_stats_json(r.stats);
  CHECK(json.find("\"dropped_top\": 2") != std::string::npos);
  CHECK(json.find("\"agreement_rate\"") != std::string::npos);
}
