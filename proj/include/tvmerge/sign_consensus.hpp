#pragma once

#include <span>
#include <vector>

#include "tvmerge/pruner.hpp"

namespace tvmerge {

// Elected per-parameter direction in {-1, 0, +1}.
struct ConsensusSigns {
  ParamMap gamma_m;
};

// Sign of the exact real sum of `terms` (no rounding), so cancellation is
// detected exactly and the result does not depend on term order. Falls back
// to ordinary summation when a term is infinite; NaN sums give 0.
int exact_sum_sign(std::span<const double> terms);

// gamma_m = sign(sum_t gamma_hat_t * mu_hat_t) per parameter, sign(0) = 0.
// Throws std::invalid_argument on an empty list, IncompatibleError when the
// pruned vectors do not share one layout.
ConsensusSigns elect_sign(std::span<const PrunedTaskVector> pruned);

// Throws IncompatibleError unless every map has reference's names and sizes.
void check_same_layout(const ParamMap& reference, const ParamMap& other);

}  // namespace tvmerge
