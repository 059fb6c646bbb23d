#pragma once

#include <map>
#include <string>
#include <vector>

#include "tvmerge/checkpoint.hpp"

namespace tvmerge {

// Flat per-tensor buffers keyed by tensor name, in checkpoint layout.
using ParamMap = std::map<std::string, std::vector<double>, std::less<>>;

// Parameter delta of a fine-tuned model against its base: fine_tuned - base.
struct TaskVector {
  std::string source_label;
  ParamMap deltas;

  std::size_t parameter_count() const;
};

// Throws IncompatibleError when the layouts differ.
TaskVector build_task_vector(const Checkpoint& fine_tuned, const Checkpoint& base,
                             std::string source_label = {});

// base + scale * tau, element-wise. The result keeps base's dtype tags and
// metadata. Throws IncompatibleError when tau's names or buffer sizes do not
// match base, std::invalid_argument when scale is not finite.
Checkpoint apply_task_vector(const Checkpoint& base, const TaskVector& tau, double scale = 1.0);

// Checks that `params` has exactly base's names with matching element counts.
void check_layout(const Checkpoint& base, const ParamMap& params);

}  // namespace tvmerge
