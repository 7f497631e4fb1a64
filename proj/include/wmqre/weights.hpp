#pragma once

// Within-cluster scaling of the conditional level-1 weights w_{i|j}.

#include "wmqre/design.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wmqre {

enum class WeightScaling { None, Method1, Method2 };

inline const char* to_string(WeightScaling m) {
  switch (m) {
    case WeightScaling::None: return "none";
    case WeightScaling::Method1: return "method1";
    case WeightScaling::Method2: return "method2";
  }
  return "?";
}

inline std::optional<WeightScaling> parse_weight_scaling(std::string_view s) {
  if (s == "none") return WeightScaling::None;
  if (s == "method1") return WeightScaling::Method1;
  if (s == "method2") return WeightScaling::Method2;
  return std::nullopt;
}

// Method2: n_j w / sum(w), sums to n_j.
// Method1: w sum(w) / sum(w^2), sums to the effective sample size.
inline Vector scale_weights(const Vector& w, WeightScaling method) {
  if (!w.allFinite() || (w.array() <= 0.0).any()) {
    throw std::invalid_argument("scale_weights: weights must be finite and positive");
  }
  const double sum = w.sum();
  if (!(sum > 0.0)) throw std::invalid_argument("scale_weights: zero-sum weights");
  switch (method) {
    case WeightScaling::None: return w;
    case WeightScaling::Method2: return w * (static_cast<double>(w.size()) / sum);
    case WeightScaling::Method1: return w * (sum / w.squaredNorm());
  }
  return w;
}

inline Vector scale_weights(const ClusterBlock& block, WeightScaling method) {
  return scale_weights(block.w1, method);
}

inline GroupedDesign apply_weight_scaling(GroupedDesign design, WeightScaling method) {
  for (auto& c : design.clusters) c.w1 = scale_weights(c.w1, method);
  return design;
}

}  // namespace wmqre
