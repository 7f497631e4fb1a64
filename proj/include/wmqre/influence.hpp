#pragma once

// Huber loss and the asymmetric (M-quantile) influence function.
//
// Convention: rho(u) = u^2 on the quadratic branch, so psi = rho' carries a
// factor 2. The quadratic branch is closed (|u| <= c) and the asymmetric
// weight switches to 1-q only for strictly negative u; derivatives at the
// kinks follow the same branch choice.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace wmqre {

enum class InfluenceFamily { Huber, Identity };

// Reference point for the constant K_2q of the variance equations:
// Centered takes E[psi_q(Z)^2]; AtMQuantile takes E[psi_q(Z - t_q)^2] with t_q
// the q-th M-quantile of N(0,1). The two agree at q = 0.5.
enum class K2Reference { Centered, AtMQuantile };

struct InfluenceSpec {
  double q = 0.5;
  double c = 1.345;
  InfluenceFamily family = InfluenceFamily::Huber;
  K2Reference k2_reference = K2Reference::AtMQuantile;

  void validate() const {
    if (!(q > 0.0 && q < 1.0)) {
      throw std::invalid_argument("quantile q must lie in (0,1), got " + std::to_string(q));
    }
    if (family == InfluenceFamily::Huber && !(c > 0.0 && std::isfinite(c))) {
      throw std::invalid_argument("tuning constant c must be finite and > 0, got " +
                                  std::to_string(c));
    }
  }

  static InfluenceSpec huber(double q, double c = 1.345) {
    return {q, c, InfluenceFamily::Huber, K2Reference::AtMQuantile};
  }
  static InfluenceSpec identity(double q) {
    return {q, 1.345, InfluenceFamily::Identity, K2Reference::AtMQuantile};
  }
};

inline const char* to_string(InfluenceFamily f) {
  return f == InfluenceFamily::Huber ? "huber" : "identity";
}

namespace detail {

inline void check_huber_args(double u, double c) {
  if (!std::isfinite(u)) throw std::invalid_argument("non-finite residual passed to Huber function");
  if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("Huber tuning constant must be > 0");
}

inline double asym_weight(double u, double q) { return u < 0.0 ? 1.0 - q : q; }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace detail

inline double huber_rho(double u, double c) {
  detail::check_huber_args(u, c);
  const double a = std::abs(u);
  return a <= c ? u * u : 2.0 * c * a - c * c;
}

inline double huber_psi(double u, double c) {
  detail::check_huber_args(u, c);
  if (std::abs(u) <= c) return 2.0 * u;
  return u > 0.0 ? 2.0 * c : -2.0 * c;
}

// psi_q(u) = |q - I(u<0)| psi(u)
inline double asymmetric_psi(double u, const InfluenceSpec& spec) {
  if (spec.family == InfluenceFamily::Identity) {
    if (!std::isfinite(u)) throw std::invalid_argument("non-finite residual");
    return detail::asym_weight(u, spec.q) * 2.0 * u;
  }
  return detail::asym_weight(u, spec.q) * huber_psi(u, spec.c);
}

inline double asymmetric_psi_derivative(double u, const InfluenceSpec& spec) {
  if (!std::isfinite(u)) throw std::invalid_argument("non-finite residual");
  const double w = detail::asym_weight(u, spec.q);
  if (spec.family == InfluenceFamily::Identity) return 2.0 * w;
  return std::abs(u) <= spec.c ? 2.0 * w : 0.0;
}

// IWLS weight psi_q(u)/u; at u = 0 it takes the derivative value.
inline double iwls_weight(double u, const InfluenceSpec& spec) {
  if (u == 0.0) return asymmetric_psi_derivative(0.0, spec);
  return asymmetric_psi(u, spec) / u;
}

// E[psi_q(e)^2] for e ~ N(0,1). The elementwise expectation matrix K_2q of the
// variance equations is this scalar times the identity.
inline double k2q(const InfluenceSpec& spec) {
  spec.validate();
  const double asym = spec.q * spec.q + (1.0 - spec.q) * (1.0 - spec.q);
  if (spec.family == InfluenceFamily::Identity) return 2.0 * asym;
  const double c = spec.c;
  const double tail = 1.0 - detail::normal_cdf(c);
  const double inner = detail::normal_cdf(c) - 0.5 - c * detail::normal_pdf(c) + c * c * tail;
  return 4.0 * asym * inner;
}

namespace detail {

// Integral over z in [lo, hi] of z^k phi(z), k = 0, 1, 2.
inline double normal_partial_moment(int k, double lo, double hi) {
  const double P = normal_cdf(hi) - normal_cdf(lo);
  const auto lphi = [](double x) { return std::isfinite(x) ? x * normal_pdf(x) : 0.0; };
  switch (k) {
    case 0: return P;
    case 1: return normal_pdf(lo) - normal_pdf(hi);
    default: return P + lphi(lo) - lphi(hi);
  }
}

// E[psi_q(Z - t)^m] for Z ~ N(0,1), m = 1 or 2.
inline double shifted_psi_moment(const InfluenceSpec& spec, double t, int m) {
  const double q = spec.q;
  const double inf = std::numeric_limits<double>::infinity();
  const double c = spec.family == InfluenceFamily::Identity ? inf : spec.c;
  // integral over u in [a,b] of u^k phi(u + t) du
  const auto moment = [&](int k, double a, double b) {
    const double lo = a + t, hi = b + t;
    const double m0 = normal_partial_moment(0, lo, hi);
    if (k == 0) return m0;
    const double m1 = normal_partial_moment(1, lo, hi);
    if (k == 1) return m1 - t * m0;
    return normal_partial_moment(2, lo, hi) - 2.0 * t * m1 + t * t * m0;
  };
  const double wn = 1.0 - q;
  double s = 0.0;
  if (m == 1) {
    s += wn * 2.0 * moment(1, -c, 0.0) + q * 2.0 * moment(1, 0.0, c);
    if (std::isfinite(c)) s += -wn * 2.0 * c * moment(0, -inf, -c) + q * 2.0 * c * moment(0, c, inf);
  } else {
    s += wn * wn * 4.0 * moment(2, -c, 0.0) + q * q * 4.0 * moment(2, 0.0, c);
    if (std::isfinite(c)) s += 4.0 * c * c * (wn * wn * moment(0, -inf, -c) + q * q * moment(0, c, inf));
  }
  return s;
}

}  // namespace detail

// The q-th M-quantile of N(0,1): the root t of E[psi_q(Z - t)] = 0.
inline double standard_normal_mquantile(const InfluenceSpec& spec) {
  spec.validate();
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::shifted_psi_moment(spec, mid, 1) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// E[psi_q(Z - t_q)^2] with t_q the normal M-quantile: the value of
// E[psi_q(r)^2] at the true q-th M-quantile line of a Gaussian model.
inline double k2q_at_mquantile(const InfluenceSpec& spec) {
  return detail::shifted_psi_moment(spec, standard_normal_mquantile(spec), 2);
}

// The K_2q used by the estimating equations, per spec.k2_reference.
inline double variance_constant(const InfluenceSpec& spec) {
  return spec.k2_reference == K2Reference::Centered ? k2q(spec) : k2q_at_mquantile(spec);
}

}  // namespace wmqre
