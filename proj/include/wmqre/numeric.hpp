#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace wmqre {

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

// median(|r|) / 0.6745, the usual M-quantile scale estimate.
inline double mad_scale(const Eigen::VectorXd& residuals, double floor = 1e-10) {
  std::vector<double> a(static_cast<std::size_t>(residuals.size()));
  for (Eigen::Index i = 0; i < residuals.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(residuals[i]);
  return std::max(median(std::move(a)) / 0.6745, floor);
}

// Largest absolute change relative to the current magnitude (at least 1).
inline double relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& prev) {
  const double scale = std::max(1.0, next.cwiseAbs().maxCoeff());
  return (next - prev).cwiseAbs().maxCoeff() / scale;
}

}  // namespace wmqre
