#pragma once

// Per-cluster algebra for the random-intercept covariance
//
//   V_j = diag(sigma2_eps / w_{i|j}) + sigma2_gamma * 1 1^T
//
// V_j is diagonal plus rank one, so solves, traces and quadratic forms are
// all O(n_j) via the Sherman-Morrison identity. Nothing here materializes
// an n_j x n_j matrix except the dense() helpers used for cross-checks.

#include "wmqre/design.hpp"
#include "wmqre/error.hpp"
#include "wmqre/influence.hpp"

#include <cmath>
#include <string>

namespace wmqre {

class ClusterCovariance {
 public:
  ClusterCovariance(const Vector& unit_weights, const VarianceComponents& vc) : s_(vc.sigma2_gamma) {
    if (!(vc.sigma2_eps > 0.0) || !(vc.sigma2_gamma >= 0.0) || !std::isfinite(vc.sigma2_eps) ||
        !std::isfinite(vc.sigma2_gamma)) {
      throw NumericalError("cluster covariance is not positive definite (sigma2_eps=" +
                           std::to_string(vc.sigma2_eps) +
                           ", sigma2_gamma=" + std::to_string(vc.sigma2_gamma) + ")");
    }
    d_ = vc.sigma2_eps * unit_weights.cwiseInverse();
    g_ = d_.cwiseInverse();
    sum_g_ = g_.sum();
    kappa_ = s_ / (1.0 + s_ * sum_g_);
  }

  Eigen::Index size() const { return d_.size(); }

  // diag(V)
  Vector diagonal() const { return d_.array() + s_; }

  // V^{-1} v
  Vector solve(const Vector& v) const { return g_.cwiseProduct(v) - (kappa_ * g_.dot(v)) * g_; }

  Matrix solve(const Matrix& m) const {
    Matrix out = g_.asDiagonal() * m;
    const Eigen::RowVectorXd proj = g_.transpose() * m;
    out.noalias() -= kappa_ * g_ * proj;
    return out;
  }

  // 1^T V^{-1} 1 = tr(V^{-1} Z Z^T)
  double ones_quadratic() const { return sum_g_ / (1.0 + s_ * sum_g_); }

  // V^{-1} 1
  Vector solve_ones() const { return g_ / (1.0 + s_ * sum_g_); }

  // diag(V^{-1})
  Vector inverse_diagonal() const { return g_ - kappa_ * g_.cwiseProduct(g_); }

  // tr(V^{-1} W^{-1} V^{-1} W^{-1}) with h = 1/w.
  double trace_inv_h_inv_h(const Vector& h) const {
    const Vector gh = g_.cwiseProduct(h);
    const double t1 = gh.squaredNorm();
    const double t2 = (gh.array().square() * g_.array()).sum();
    const double t3 = g_.cwiseProduct(gh).sum();
    return t1 - 2.0 * kappa_ * t2 + kappa_ * kappa_ * t3 * t3;
  }

  Matrix dense() const {
    Matrix v = Matrix::Constant(size(), size(), s_);
    v.diagonal() += d_;
    return v;
  }

  Matrix dense_inverse() const {
    Matrix inv = -kappa_ * g_ * g_.transpose();
    inv.diagonal() += g_;
    return inv;
  }

 private:
  Vector d_;
  Vector g_;
  double s_ = 0.0;
  double sum_g_ = 0.0;
  double kappa_ = 0.0;
};

inline ClusterCovariance build_cluster_covariance(const ClusterBlock& block, const VarianceComponents& vc) {
  return ClusterCovariance(block.w1, vc);
}

// Unweighted (w_j excluded) contributions of one cluster to the estimating
// equations and to the fixed-point system.
struct ClusterTerms {
  Vector score_beta;      // X^T V^{-1} U^{1/2} psi_q(r)
  double quad_gamma = 0;  // psi^T U^{1/2} V^{-1} Z Z^T V^{-1} U^{1/2} psi
  double quad_eps = 0;    // psi^T U^{1/2} V^{-1} W^{-1} V^{-1} U^{1/2} psi
  double trace_gamma = 0; // tr(V^{-1} Z Z^T)
  double trace_eps = 0;   // tr(V^{-1} W^{-1})
  double a_gg = 0;        // tr(V^{-1} ZZ^T V^{-1} ZZ^T)
  double a_ge = 0;        // tr(V^{-1} ZZ^T V^{-1} W^{-1})
  double a_ee = 0;        // tr(V^{-1} W^{-1} V^{-1} W^{-1})
  Matrix jacobian_beta;   // X^T V^{-1} D X, with D = diag(psi_q'(r))
  bool saturated = false; // every psi_q'(r_i) is zero
};

enum class TermSet { Score, ScoreAndJacobian };

inline ClusterTerms cluster_terms(const ClusterBlock& block, const Vector& beta, const VarianceComponents& vc,
                                  const InfluenceSpec& spec, TermSet which = TermSet::Score) {
  const ClusterCovariance cov(block.w1, vc);
  const Vector resid = block.y - block.X * beta;
  const Vector sqrt_u = cov.diagonal().cwiseSqrt();
  const auto n = resid.size();

  Vector scaled_psi(n);  // U^{1/2} psi_q(r)
  Vector dpsi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = resid[i] / sqrt_u[i];
    scaled_psi[i] = sqrt_u[i] * asymmetric_psi(r, spec);
    dpsi[i] = asymmetric_psi_derivative(r, spec);
  }

  ClusterTerms t;
  const Vector u = cov.solve(scaled_psi);
  t.score_beta = block.X.transpose() * u;
  const double ones_u = u.sum();
  const Vector h = block.w1.cwiseInverse();
  t.quad_gamma = ones_u * ones_u;
  t.quad_eps = u.cwiseProduct(u).dot(h);
  t.trace_gamma = cov.ones_quadratic();
  t.trace_eps = cov.inverse_diagonal().dot(h);
  t.a_gg = t.trace_gamma * t.trace_gamma;
  const Vector v1 = cov.solve_ones();
  t.a_ge = v1.cwiseProduct(v1).dot(h);
  t.a_ee = cov.trace_inv_h_inv_h(h);
  t.saturated = (dpsi.array() == 0.0).all();

  if (which == TermSet::ScoreAndJacobian) {
    const Matrix dx = dpsi.asDiagonal() * block.X;
    t.jacobian_beta = block.X.transpose() * cov.solve(dx);
  }
  return t;
}

}  // namespace wmqre
