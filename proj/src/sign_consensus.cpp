#include "tvmerge/sign_consensus.hpp"

#include <cmath>
#include <stdexcept>

namespace tvmerge {

namespace {

// Knuth's branch-free two-sum: a + b == s + err exactly.
inline void two_sum(double a, double b, double& s, double& err) {
  s = a + b;
  const double bv = s - a;
  const double av = s - bv;
  err = (a - av) + (b - bv);
}

}  // namespace

int exact_sum_sign(std::span<const double> terms) {
  for (const double t : terms) {
    if (!std::isfinite(t)) {
      double s = 0.0;
      for (const double u : terms) s += u;
      return s > 0.0 ? 1 : (s < 0.0 ? -1 : 0);
    }
  }
  // Nonoverlapping expansion, components ordered by increasing magnitude
  // (Shewchuk's grow-expansion with zero elimination).
  thread_local std::vector<double> expansion;
  thread_local std::vector<double> next;
  expansion.clear();
  for (const double x : terms) {
    if (x == 0.0) continue;
    next.clear();
    double q = x;
    for (const double e : expansion) {
      double s, err;
      two_sum(q, e, s, err);
      if (err != 0.0) next.push_back(err);
      q = s;
    }
    if (q != 0.0) next.push_back(q);
    expansion.swap(next);
  }
  if (expansion.empty()) return 0;
  const double top = expansion.back();
  return top > 0.0 ? 1 : -1;
}

void check_same_layout(const ParamMap& reference, const ParamMap& other) {
  if (reference.size() != other.size()) {
    for (const auto& [name, _] : reference) {
      if (!other.contains(name)) {
        throw IncompatibleError(name, "tensor \"" + name + "\" missing from a task vector");
      }
    }
    for (const auto& [name, _] : other) {
      if (!reference.contains(name)) {
        throw IncompatibleError(name, "unexpected tensor \"" + name + "\" in a task vector");
      }
    }
  }
  for (const auto& [name, values] : reference) {
    const auto it = other.find(name);
    if (it == other.end()) {
      throw IncompatibleError(name, "tensor \"" + name + "\" missing from a task vector");
    }
    if (it->second.size() != values.size()) {
      throw IncompatibleError(name, "tensor \"" + name + "\" size " +
                                        std::to_string(it->second.size()) + " vs " +
                                        std::to_string(values.size()));
    }
  }
}

ConsensusSigns elect_sign(std::span<const PrunedTaskVector> pruned) {
  if (pruned.empty()) throw std::invalid_argument("elect_sign needs at least one task vector");
  const auto& ref = pruned.front().tau_hat;
  for (const auto& p : pruned) {
    check_same_layout(ref, p.gamma_hat);
    check_same_layout(ref, p.mu_hat);
    check_same_layout(ref, p.tau_hat);
  }

  ConsensusSigns signs;
  std::vector<double> terms(pruned.size());
  for (const auto& [name, values] : ref) {
    std::vector<const std::vector<double>*> gammas, mus;
    for (const auto& p : pruned) {
      gammas.push_back(&p.gamma_hat.find(name)->second);
      mus.push_back(&p.mu_hat.find(name)->second);
    }
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      for (std::size_t t = 0; t < pruned.size(); ++t) terms[t] = (*gammas[t])[i] * (*mus[t])[i];
      out[i] = static_cast<double>(exact_sum_sign(terms));
    }
    signs.gamma_m.emplace(name, std::move(out));
  }
  return signs;
}

}  // namespace tvmerge
