#pragma once

// Single-level linear M-quantile regression fitted by iteratively
// re-weighted least squares, with the MAD scale refreshed every iteration.

#include "wmqre/design.hpp"
#include "wmqre/error.hpp"
#include "wmqre/influence.hpp"
#include "wmqre/numeric.hpp"

#include <optional>
#include <string>

namespace wmqre {

struct MqOptions {
  double tol = 1e-6;
  int max_iter = 200;
};

struct MqFit {
  Vector beta;
  double scale = 1.0;
  int iterations = 0;
  bool converged = false;
  std::string diagnostic;
};

namespace detail {

inline Vector weighted_least_squares(const Matrix& X, const Vector& y, const Vector& w) {
  const Vector sw = w.array().sqrt();
  const Matrix Xw = sw.asDiagonal() * X;
  Eigen::ColPivHouseholderQR<Matrix> qr(Xw);
  if (qr.rank() < X.cols()) {
    throw SingularDesignError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                              " < " + std::to_string(X.cols()) + ")");
  }
  return qr.solve(sw.cwiseProduct(y));
}

}  // namespace detail

inline MqFit fit_mq(const Matrix& X, const Vector& y, const InfluenceSpec& spec,
                    const std::optional<Vector>& row_weights = std::nullopt, MqOptions opts = {}) {
  spec.validate();
  const auto n = X.rows();
  if (y.size() != n) throw std::invalid_argument("fit_mq: X and y row counts differ");
  if (n <= X.cols()) throw std::invalid_argument("fit_mq: need n > p");
  if (!y.allFinite() || !X.allFinite()) throw std::invalid_argument("fit_mq: non-finite data");
  Vector w = Vector::Ones(n);
  if (row_weights) {
    if (row_weights->size() != n) throw std::invalid_argument("fit_mq: weight length mismatch");
    if (!row_weights->allFinite() || (row_weights->array() < 0.0).any()) {
      throw std::invalid_argument("fit_mq: row weights must be finite and nonnegative");
    }
    w = *row_weights;
  }

  MqFit fit;
  fit.beta = detail::weighted_least_squares(X, y, w);
  Vector iw(n);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vector resid = y - X * fit.beta;
    fit.scale = mad_scale(resid);
    for (Eigen::Index i = 0; i < n; ++i) iw[i] = w[i] * iwls_weight(resid[i] / fit.scale, spec);
    const Vector next = detail::weighted_least_squares(X, y, iw);
    const double change = relative_change(next, fit.beta);
    fit.beta = next;
    fit.iterations = it;
    if (change < opts.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.scale = mad_scale(y - X * fit.beta);
  if (!fit.converged) {
    fit.diagnostic = "IWLS did not reach relative change " + std::to_string(opts.tol) + " in " +
                     std::to_string(opts.max_iter) + " iterations";
  }
  return fit;
}

}  // namespace wmqre
