#pragma once

// Weighted M-quantile random-intercept regression.
//
// Outer iterations alternate one Newton-Raphson update of beta with one
// fixed-point update of (sigma2_gamma, sigma2_eps). With all weights equal to
// one this is the unweighted MQRE estimator; with the identity influence
// function at q = 0.5 it is the (pseudo) maximum likelihood random-intercept
// fit.

#include "wmqre/cluster.hpp"
#include "wmqre/design.hpp"
#include "wmqre/error.hpp"
#include "wmqre/inference.hpp"
#include "wmqre/influence.hpp"
#include "wmqre/mq.hpp"
#include "wmqre/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace wmqre {

struct WeightedScore {
  Vector beta;            // p entries
  Eigen::Vector2d var;    // (sigma2_gamma row, sigma2_eps row)

  double norm_inf() const { return std::max(beta.cwiseAbs().maxCoeff(), var.cwiseAbs().maxCoeff()); }
};

inline WeightedScore weighted_score(const GroupedDesign& design, const Vector& beta, const VarianceComponents& vc,
                                    const InfluenceSpec& spec) {
  const double k2 = variance_constant(spec);
  WeightedScore s{Vector::Zero(beta.size()), Eigen::Vector2d::Zero()};
  for (const auto& c : design.clusters) {
    const ClusterTerms t = cluster_terms(c, beta, vc, spec);
    s.beta += c.w2 * t.score_beta;
    s.var[0] += c.w2 * -0.5 * (k2 * t.trace_gamma - t.quad_gamma);
    s.var[1] += c.w2 * -0.5 * (k2 * t.trace_eps - t.quad_eps);
  }
  return s;
}

struct NewtonStep {
  Vector direction;   // H^{-1} score
  Vector score;       // weighted score in beta at the starting point
};

// H = sum_j w_j X_j^T V_j^{-1} D_j X_j is minus the Jacobian of the beta score.
inline NewtonStep newton_direction(const GroupedDesign& design, const Vector& beta, const VarianceComponents& vc,
                                   const InfluenceSpec& spec) {
  const auto p = beta.size();
  Matrix H = Matrix::Zero(p, p);
  Vector score = Vector::Zero(p);
  std::vector<std::string> saturated;
  for (const auto& c : design.clusters) {
    const ClusterTerms t = cluster_terms(c, beta, vc, spec, TermSet::ScoreAndJacobian);
    H.noalias() += c.w2 * t.jacobian_beta;
    score.noalias() += c.w2 * t.score_beta;
    if (t.saturated) saturated.push_back(c.id);
  }
  Eigen::FullPivLU<Matrix> lu(H);
  if (!lu.isInvertible() || !H.allFinite()) {
    std::string msg = "Newton matrix for the fixed effects is singular";
    if (!saturated.empty()) {
      msg += "; clusters with all residuals saturated:";
      for (std::size_t i = 0; i < saturated.size() && i < 20; ++i) msg += " " + saturated[i];
      if (saturated.size() > 20) msg += " ...";
    }
    throw StepSingularError(msg);
  }
  return {lu.solve(score), score};
}

inline Vector newton_step_beta(const GroupedDesign& design, const Vector& beta, const VarianceComponents& vc,
                               const InfluenceSpec& spec) {
  return beta + newton_direction(design, beta, vc, spec).direction;
}

struct VarianceFloors {
  double sigma2_gamma = 0.0;
  double sigma2_eps = 1e-12;

  static VarianceFloors for_design(const GroupedDesign& design) {
    return {0.0, std::max(1e-8 * design.response_variance(), 1e-12)};
  }
};

// Solves A(vc_t) vc_{t+1} = a(vc_t), where A holds the K_2q-scaled traces and
// a the weighted quadratic forms of the scaled influence vector.
inline VarianceComponents fixed_point_variance(const GroupedDesign& design, const Vector& beta,
                                               const VarianceComponents& vc, const InfluenceSpec& spec,
                                               const VarianceFloors& floors) {
  const double k2 = variance_constant(spec);
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  for (const auto& c : design.clusters) {
    const ClusterTerms t = cluster_terms(c, beta, vc, spec);
    A(0, 0) += c.w2 * t.a_gg;
    A(0, 1) += c.w2 * t.a_ge;
    A(1, 1) += c.w2 * t.a_ee;
    a[0] += c.w2 * t.quad_gamma;
    a[1] += c.w2 * t.quad_eps;
  }
  A(1, 0) = A(0, 1);
  A *= k2;
  const double det = A.determinant();
  const double scale = A.cwiseAbs().maxCoeff();
  if (!std::isfinite(det) || std::abs(det) <= 1e-12 * scale * scale) {
    throw DegenerateDesignError(
        "variance-component system is singular (between- and within-cluster variation are not "
        "separable, e.g. every cluster has a single unit)");
  }
  const Eigen::Vector2d next = A.inverse() * a;
  // a component that falls below its floor is fixed there and the other
  // equation is re-solved on its own
  if (next[0] < floors.sigma2_gamma) {
    const double g = floors.sigma2_gamma;
    return {g, std::max((a[1] - A(1, 0) * g) / A(1, 1), floors.sigma2_eps)};
  }
  if (next[1] < floors.sigma2_eps) {
    const double e = floors.sigma2_eps;
    return {std::max((a[0] - A(0, 1) * e) / A(0, 0), floors.sigma2_gamma), e};
  }
  return {next[0], next[1]};
}

// Starting values: beta from a single-level M-quantile fit with row weights
// w_j w_{i|j}; sigma2_eps from the MAD of within-cluster residuals;
// sigma2_gamma from the MAD of cluster-mean residuals minus the within share.
struct StartingValues {
  Vector beta;
  VarianceComponents vc;
};

inline StartingValues initial_values(const GroupedDesign& design, const InfluenceSpec& spec,
                                     const VarianceFloors& floors) {
  StartingValues start;
  const MqFit mq = fit_mq(design.stacked_X(), design.stacked_y(), spec, design.stacked_row_weights());
  start.beta = mq.beta;

  std::vector<double> within;
  std::vector<double> means;
  std::vector<double> sizes;
  for (const auto& c : design.clusters) {
    const Vector r = c.y - c.X * start.beta;
    const double m = r.mean();
    means.push_back(m);
    sizes.push_back(static_cast<double>(c.size()));
    for (Eigen::Index i = 0; i < r.size(); ++i) within.push_back(r[i] - m);
  }
  const auto centered_mad2 = [](std::vector<double> v) {
    const double med = median(v);
    for (auto& x : v) x = std::abs(x - med);
    const double s = median(std::move(v)) / 0.6745;
    return s * s;
  };
  start.vc.sigma2_eps = std::max(centered_mad2(within), floors.sigma2_eps);
  const double between = centered_mad2(means) - start.vc.sigma2_eps / median(sizes);
  start.vc.sigma2_gamma = std::max(between, floors.sigma2_gamma);
  return start;
}

struct FitOptions {
  double tol = 1e-6;
  int max_iter = 200;
  int max_halvings = 10;
  bool compute_inference = true;
  std::optional<Vector> init_beta;
  std::optional<VarianceComponents> init_varcomp;
};

struct FitResult {
  Vector beta;
  VarianceComponents varcomp;
  Matrix cov_theta;    // (p+2) x (p+2), empty when inference is unavailable
  Matrix cov_beta;     // p x p
  Vector se;
  Vector z;
  Vector p_value;
  bool inference_available = false;
  double q = 0.5;
  double c = 1.345;
  InfluenceFamily family = InfluenceFamily::Huber;
  int iterations = 0;
  bool converged = false;
  // Infinity norm of the weighted score divided by sum_j w_j n_j; rows of
  // variance components sitting on their floor are left out.
  double score_norm = 0.0;
  std::string diagnostic;
};

inline double total_weight(const GroupedDesign& design) {
  double s = 0.0;
  for (const auto& c : design.clusters) s += c.w2 * static_cast<double>(c.size());
  return s;
}

inline FitResult fit_wmqre(const GroupedDesign& design, const InfluenceSpec& spec, const FitOptions& opts = {}) {
  design.validate();
  spec.validate();
  if (std::none_of(design.clusters.begin(), design.clusters.end(), [](const ClusterBlock& c) { return c.size() > 1; })) {
    throw DegenerateDesignError("every cluster has a single unit; the variance components are not separable");
  }
  const VarianceFloors floors = VarianceFloors::for_design(design);

  Vector beta;
  VarianceComponents vc;
  if (opts.init_beta && opts.init_varcomp) {
    beta = *opts.init_beta;
    vc = *opts.init_varcomp;
  } else {
    const StartingValues start = initial_values(design, spec, floors);
    beta = opts.init_beta.value_or(start.beta);
    vc = opts.init_varcomp.value_or(start.vc);
  }
  if (static_cast<std::size_t>(beta.size()) != design.p) {
    throw std::invalid_argument("initial beta has the wrong length");
  }
  vc.sigma2_eps = std::max(vc.sigma2_eps, floors.sigma2_eps);
  vc.sigma2_gamma = std::max(vc.sigma2_gamma, floors.sigma2_gamma);

  FitResult res;
  res.q = spec.q;
  res.c = spec.c;
  res.family = spec.family;

  for (int it = 1; it <= opts.max_iter; ++it) {
    const NewtonStep step = newton_direction(design, beta, vc, spec);
    const double start_norm = step.score.cwiseAbs().maxCoeff();
    Vector candidate = beta + step.direction;
    double factor = 1.0;
    for (int h = 0; h < opts.max_halvings; ++h) {
      const double norm = weighted_score(design, candidate, vc, spec).beta.cwiseAbs().maxCoeff();
      if (norm <= start_norm) break;
      factor *= 0.5;
      candidate = beta + factor * step.direction;
    }
    const VarianceComponents next_vc = fixed_point_variance(design, candidate, vc, spec, floors);

    const Eigen::Vector2d vc_old(vc.sigma2_gamma, vc.sigma2_eps);
    const Eigen::Vector2d vc_new(next_vc.sigma2_gamma, next_vc.sigma2_eps);
    const double change = std::max(relative_change(candidate, beta), relative_change(vc_new, vc_old));
    beta = candidate;
    vc = next_vc;
    res.iterations = it;
    if (change < opts.tol) {
      res.converged = true;
      break;
    }
  }

  res.beta = beta;
  res.varcomp = vc;
  WeightedScore final_score = weighted_score(design, beta, vc, spec);
  if (vc.sigma2_gamma <= floors.sigma2_gamma) final_score.var[0] = 0.0;
  if (vc.sigma2_eps <= floors.sigma2_eps) final_score.var[1] = 0.0;
  res.score_norm = final_score.norm_inf() / total_weight(design);
  if (!res.converged) {
    res.diagnostic = "no convergence after " + std::to_string(opts.max_iter) +
                     " iterations; normalized score " + std::to_string(res.score_norm);
  }

  const auto p = beta.size();
  res.se = Vector::Constant(p, std::numeric_limits<double>::quiet_NaN());
  res.z = res.se;
  res.p_value = res.se;
  if (opts.compute_inference) {
    try {
      const SandwichParts parts = sandwich(design, pack_theta(beta, vc), spec);
      res.cov_theta = parts.cov;
      res.cov_beta = parts.cov.topLeftCorner(p, p);
      const CoefficientInference inf = coefficient_inference(beta, res.cov_beta);
      res.se = inf.se;
      res.z = inf.z;
      res.p_value = inf.p_value;
      res.inference_available = true;
    } catch (const InferenceUnavailableError& e) {
      if (!res.diagnostic.empty()) res.diagnostic += "; ";
      res.diagnostic += e.what();
    }
  }
  return res;
}

}  // namespace wmqre
