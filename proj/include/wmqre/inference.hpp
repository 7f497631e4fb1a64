#pragma once

// Sandwich covariance G^{-1} F G^{-T} for theta = (beta, sigma2_gamma, sigma2_eps).
//
// G is the central-difference Jacobian of the total weighted score and F the
// outer-product sum of the per-cluster weighted scores, both at theta-hat. The
// 1/n normalizations cancel and are omitted.

#include "wmqre/cluster.hpp"
#include "wmqre/design.hpp"
#include "wmqre/error.hpp"
#include "wmqre/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace wmqre {

// Parameter vector layout: [beta (p), sigma2_gamma, sigma2_eps].
inline Vector pack_theta(const Vector& beta, const VarianceComponents& vc) {
  Vector theta(beta.size() + 2);
  theta << beta, vc.sigma2_gamma, vc.sigma2_eps;
  return theta;
}

inline Vector theta_beta(const Vector& theta) { return theta.head(theta.size() - 2); }

inline VarianceComponents theta_varcomp(const Vector& theta) {
  return {theta[theta.size() - 2], theta[theta.size() - 1]};
}

// Phi_qj(theta) without the cluster weight.
inline Vector cluster_score(const ClusterBlock& block, const Vector& beta, const VarianceComponents& vc,
                            const InfluenceSpec& spec, double k2) {
  const ClusterTerms t = cluster_terms(block, beta, vc, spec);
  Vector phi(beta.size() + 2);
  phi.head(beta.size()) = t.score_beta;
  phi[beta.size()] = -0.5 * (k2 * t.trace_gamma - t.quad_gamma);
  phi[beta.size() + 1] = -0.5 * (k2 * t.trace_eps - t.quad_eps);
  return phi;
}

// w_j * Phi_qj(theta) for every cluster, in cluster order.
inline std::vector<Vector> per_cluster_scores(const GroupedDesign& design, const Vector& theta,
                                              const InfluenceSpec& spec) {
  const double k2 = variance_constant(spec);
  const Vector beta = theta_beta(theta);
  const VarianceComponents vc = theta_varcomp(theta);
  std::vector<Vector> out;
  out.reserve(design.clusters.size());
  for (const auto& c : design.clusters) out.push_back(c.w2 * cluster_score(c, beta, vc, spec, k2));
  return out;
}

inline Vector total_score(const GroupedDesign& design, const Vector& theta, const InfluenceSpec& spec) {
  Vector total = Vector::Zero(theta.size());
  for (const auto& s : per_cluster_scores(design, theta, spec)) total += s;
  return total;
}

struct JacobianOptions {
  double relative_step = 1e-5;
};

// d(total weighted score)/d(theta). Coordinates whose backward step would
// leave the parameter space (sigma2_gamma near 0) use the second-order
// forward formula instead of the central one.
inline Matrix estimate_G(const GroupedDesign& design, const Vector& theta, const InfluenceSpec& spec,
                         JacobianOptions opts = {}) {
  const auto k = theta.size();
  const auto p = k - 2;
  Matrix G(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double h = opts.relative_step * std::max(1.0, std::abs(theta[j]));
    const bool variance = j >= p;
    const bool forward = variance && theta[j] - h <= 0.0;
    Vector tp = theta;
    tp[j] += h;
    if (!forward) {
      Vector tm = theta;
      tm[j] -= h;
      G.col(j) = (total_score(design, tp, spec) - total_score(design, tm, spec)) / (2.0 * h);
    } else {
      Vector tpp = theta;
      tpp[j] += 2.0 * h;
      G.col(j) = (-3.0 * total_score(design, theta, spec) + 4.0 * total_score(design, tp, spec) -
                  total_score(design, tpp, spec)) /
                 (2.0 * h);
    }
  }
  return G;
}

struct SandwichParts {
  Matrix G;
  Matrix F;
  Matrix cov;
};

inline SandwichParts sandwich(const GroupedDesign& design, const Vector& theta, const InfluenceSpec& spec,
                              JacobianOptions opts = {}) {
  SandwichParts parts;
  parts.G = estimate_G(design, theta, spec, opts);
  parts.F = Matrix::Zero(theta.size(), theta.size());
  for (const auto& s : per_cluster_scores(design, theta, spec)) parts.F.noalias() += s * s.transpose();

  Eigen::FullPivLU<Matrix> lu(parts.G);
  if (!lu.isInvertible() || !parts.G.allFinite()) {
    throw InferenceUnavailableError("score Jacobian G is singular; sandwich covariance unavailable");
  }
  const Matrix Ginv = lu.inverse();
  const Matrix cov = Ginv * parts.F * Ginv.transpose();
  parts.cov = 0.5 * (cov + cov.transpose());
  return parts;
}

struct CoefficientInference {
  Vector se;
  Vector z;
  Vector p_value;
};

inline double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::numbers::sqrt2); }

inline CoefficientInference coefficient_inference(const Vector& beta, const Matrix& cov_beta) {
  CoefficientInference out;
  const auto p = beta.size();
  out.se.resize(p);
  out.z.resize(p);
  out.p_value.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    out.se[k] = std::sqrt(std::max(0.0, cov_beta(k, k)));
    out.z[k] = beta[k] / out.se[k];
    out.p_value[k] = two_sided_normal_p(out.z[k]);
  }
  return out;
}

}  // namespace wmqre
