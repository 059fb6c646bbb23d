#include "tvmerge/task_vector.hpp"

#include <cmath>
#include <stdexcept>

namespace tvmerge {

std::size_t TaskVector::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, d] : deltas) n += d.size();
  return n;
}

TaskVector build_task_vector(const Checkpoint& fine_tuned, const Checkpoint& base,
                             std::string source_label) {
  validate_compatible(fine_tuned, base);
  TaskVector tau;
  tau.source_label = std::move(source_label);
  for (const auto& [name, t] : fine_tuned.tensors()) {
    const auto& b = base.at(name).values;
    std::vector<double> delta(t.values.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = t.values[i] - b[i];
    tau.deltas.emplace(name, std::move(delta));
  }
  return tau;
}

void check_layout(const Checkpoint& base, const ParamMap& params) {
  for (const auto& [name, t] : base.tensors()) {
    const auto it = params.find(name);
    if (it == params.end()) {
      throw IncompatibleError(name, "tensor \"" + name + "\" missing from task vector");
    }
    if (it->second.size() != t.values.size()) {
      throw IncompatibleError(name, "tensor \"" + name + "\" has " +
                                        std::to_string(it->second.size()) +
                                        " task-vector elements, base has " +
                                        std::to_string(t.values.size()));
    }
  }
  for (const auto& [name, _] : params) {
    if (!base.find(name)) {
      throw IncompatibleError(name, "tensor \"" + name + "\" not present in base");
    }
  }
}

Checkpoint apply_task_vector(const Checkpoint& base, const TaskVector& tau, double scale) {
  if (!std::isfinite(scale)) throw std::invalid_argument("merge scale must be finite");
  check_layout(base, tau.deltas);
  Checkpoint out = base;
  for (auto& [name, t] : out.mutable_tensors()) {
    const auto& d = tau.deltas.find(name)->second;
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] += scale * d[i];
  }
  return out;
}

}  // namespace tvmerge
