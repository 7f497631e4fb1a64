#pragma once

// JSON and text renderings of fit results and Monte Carlo summaries.
// Needs the single-header nlohmann json.hpp on the include path.

#include "wmqre/core.hpp"
#include "wmqre/sim.hpp"
#include "wmqre/version.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace wmqre {

inline constexpr const char* kFitSchemaVersion = "1.0";
inline constexpr const char* kSimSchemaVersion = "1.0";

// *** p < 0.01, ** p < 0.05, * p < 0.1
inline std::string significance_stars(double p) {
  if (!std::isfinite(p)) return "";
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline std::string fmt(const char* f, double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

}  // namespace detail

// One entry per requested quantile; error is set when the fit threw.
struct QuantileFit {
  double q = 0.5;
  std::optional<FitResult> fit;
  std::string error;
};

struct FitRunInfo {
  std::string input;
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::size_t clusters = 0;
  std::size_t units = 0;
  double c = 1.345;
  std::string scaling;
  double tol = 1e-6;
  int max_iter = 200;
};

inline nlohmann::json fit_report_json(const std::vector<std::string>& names, const std::vector<QuantileFit>& fits,
                                      const FitRunInfo& info) {
  using nlohmann::json;
  json out;
  out["schema_version"] = kFitSchemaVersion;
  out["tool"] = "wmqre";
  out["version"] = kVersion;
  out["input"] = {{"path", info.input},
                  {"rows_read", info.rows_read},
                  {"rows_dropped", info.rows_dropped},
                  {"clusters", info.clusters},
                  {"units", info.units}};
  out["settings"] = {{"c", info.c}, {"scaling", info.scaling}, {"tol", info.tol}, {"max_iter", info.max_iter}};
  json arr = json::array();
  for (const auto& qf : fits) {
    json f;
    f["q"] = qf.q;
    if (!qf.fit) {
      f["status"] = "error";
      f["error"] = qf.error;
      arr.push_back(f);
      continue;
    }
    const FitResult& r = *qf.fit;
    f["status"] = r.converged ? "converged" : "not_converged";
    f["iterations"] = r.iterations;
    f["score_norm"] = detail::number_or_null(r.score_norm);
    f["inference_available"] = r.inference_available;
    f["diagnostic"] = r.diagnostic;
    f["variance_components"] = {{"sigma2_gamma", r.varcomp.sigma2_gamma}, {"sigma2_eps", r.varcomp.sigma2_eps}};
    json coefs = json::array();
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      coefs.push_back({{"name", names[k]},
                       {"estimate", r.beta[i]},
                       {"se", detail::number_or_null(r.se[i])},
                       {"z", detail::number_or_null(r.z[i])},
                       {"p_value", detail::number_or_null(r.p_value[i])},
                       {"stars", significance_stars(r.p_value[i])}});
    }
    f["coefficients"] = coefs;
    arr.push_back(f);
  }
  out["fits"] = arr;
  return out;
}

inline void write_fit_csv(std::ostream& out, const std::vector<std::string>& names,
                          const std::vector<QuantileFit>& fits) {
  out << "q,coefficient,estimate,se,z,p_value,stars\n";
  for (const auto& qf : fits) {
    if (!qf.fit) continue;
    const FitResult& r = *qf.fit;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      out << detail::fmt("%g", qf.q) << ',' << names[k] << ',' << detail::fmt("%.10g", r.beta[i]) << ','
          << detail::fmt("%.10g", r.se[i]) << ',' << detail::fmt("%.6g", r.z[i]) << ','
          << detail::fmt("%.6g", r.p_value[i]) << ',' << significance_stars(r.p_value[i]) << '\n';
    }
  }
}

inline void write_fit_table(std::ostream& out, const std::vector<std::string>& names,
                            const std::vector<QuantileFit>& fits) {
  std::size_t w = 11;
  for (const auto& n : names) w = std::max(w, n.size() + 2);
  for (const auto& qf : fits) {
    out << "q = " << detail::fmt("%g", qf.q);
    if (!qf.fit) {
      out << "  FAILED: " << qf.error << "\n\n";
      continue;
    }
    const FitResult& r = *qf.fit;
    out << (r.converged ? "  converged" : "  NOT converged") << " in " << r.iterations << " iterations\n";
    out << detail::pad("coefficient", w, true) << detail::pad("estimate", 12) << detail::pad("SE", 11)
        << detail::pad("z", 9) << detail::pad("p-value", 10) << '\n';
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      out << detail::pad(names[k], w, true) << detail::pad(detail::fmt("%.4f", r.beta[i]), 12)
          << detail::pad(detail::fmt("%.4f", r.se[i]), 11) << detail::pad(detail::fmt("%.3f", r.z[i]), 9)
          << detail::pad(detail::fmt("%.4f", r.p_value[i]), 10) << ' ' << significance_stars(r.p_value[i]) << '\n';
    }
    out << "sigma2_gamma " << detail::fmt("%.4f", r.varcomp.sigma2_gamma) << "   sigma2_eps "
        << detail::fmt("%.4f", r.varcomp.sigma2_eps) << '\n';
    if (!r.diagnostic.empty()) out << "note: " << r.diagnostic << '\n';
    out << '\n';
  }
  out << "*** p<0.01; ** p<0.05; * p<0.1\n";
}

inline nlohmann::json sim_report_json(const sim::SimReport& rep) {
  using nlohmann::json;
  const auto& cfg = rep.config;
  json out;
  out["schema_version"] = kSimSchemaVersion;
  out["tool"] = "wmqre";
  out["version"] = kVersion;
  out["rng"] = rep.rng;
  out["seed"] = cfg.seed;
  out["config"] = {{"population_clusters", cfg.population_clusters},
                   {"cluster_size", cfg.cluster_size},
                   {"sampled_clusters", cfg.sampled_clusters},
                   {"sampled_units_per_cluster", cfg.sampled_units_per_cluster()},
                   {"replications", cfg.replications},
                   {"quantiles", cfg.quantiles},
                   {"c", cfg.c},
                   {"scaling", to_string(cfg.scaling)},
                   {"informative", cfg.informative},
                   {"fixed_population", cfg.fixed_population},
                   {"spread_is_sd", cfg.spread_is_sd},
                   {"gamma_contamination", cfg.gamma.contamination},
                   {"eps_contamination", cfg.eps.contamination}};
  out["replications"] = rep.replications;
  out["shortfall_events"] = rep.shortfall_events;
  out["mean_cluster_weight_sum"] = rep.mean_cluster_weight_sum;
  out["mean_unit_weight_sum"] = rep.mean_unit_weight_sum;
  out["mean_sample_size"] = rep.mean_sample_size;
  out["failed"] = rep.failed;
  out["failure_reason"] = rep.failure_reason;
  json fails = json::array();
  for (const auto& f : rep.failures) fails.push_back({{"method", f.method}, {"q", f.q}, {"failures", f.failures}});
  out["failures"] = fails;
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"method", r.method},
                    {"q", r.q},
                    {"parameter", r.parameter == 0 ? "beta0" : "beta1"},
                    {"replications", r.replications},
                    {"model_target", r.model_target},
                    {"mean_census_target", r.mean_census_target},
                    {"mean_estimate", r.mean_estimate},
                    {"arb_model", r.arb_model},
                    {"arb_census", r.arb_census},
                    {"mean_abs_error_census", r.mean_abs_error_census},
                    {"empirical_se", r.empirical_se},
                    {"mean_estimated_se", detail::number_or_null(r.mean_estimated_se)}});
  }
  out["rows"] = rows;
  return out;
}

// Bias table (mean estimate and ARB % per coefficient) followed by the
// standard-error table (Monte Carlo SE against mean sandwich SE).
inline void write_sim_tables(std::ostream& out, const sim::SimReport& rep) {
  using detail::fmt;
  using detail::pad;
  const auto& cfg = rep.config;
  out << "replications " << rep.replications << "   seed " << cfg.seed << "   rng " << rep.rng << "   version "
      << kVersion << '\n';
  out << "M " << cfg.population_clusters << "  N_j " << cfg.cluster_size << "  m " << cfg.sampled_clusters
      << "  n_j " << cfg.sampled_units_per_cluster() << "  scaling " << to_string(cfg.scaling) << "  c "
      << fmt("%g", cfg.c) << '\n';
  out << "mean sample size " << fmt("%.1f", rep.mean_sample_size) << "   mean sum w_j "
      << fmt("%.2f", rep.mean_cluster_weight_sum) << "   mean sum_i w_i|j " << fmt("%.2f", rep.mean_unit_weight_sum)
      << "   stratum shortfalls " << rep.shortfall_events << "\n\n";

  out << "Bias (ARB in %, against the clean-model coefficient; census ARB alongside)\n";
  out << pad("method", 15, true) << pad("q", 6) << pad("b0", 10) << pad("ARB b0", 9) << pad("cens", 9)
      << pad("b1", 9) << pad("ARB b1", 9) << pad("cens", 9) << '\n';
  for (std::size_t k = 0; k + 1 < rep.rows.size(); k += 2) {
    const auto& a = rep.rows[k];
    const auto& b = rep.rows[k + 1];
    out << pad(a.method, 15, true) << pad(fmt("%g", a.q), 6) << pad(fmt("%.3f", a.mean_estimate), 10)
        << pad(fmt("%.3f", a.arb_model), 9) << pad(fmt("%.3f", a.arb_census), 9)
        << pad(fmt("%.4f", b.mean_estimate), 9) << pad(fmt("%.3f", b.arb_model), 9)
        << pad(fmt("%.3f", b.arb_census), 9) << '\n';
  }
  out << "\nStandard errors (Monte Carlo SE / mean estimated SE)\n";
  out << pad("method", 15, true) << pad("q", 6) << pad("S b0", 9) << pad("SE b0", 9) << pad("S b1", 9)
      << pad("SE b1", 9) << '\n';
  for (std::size_t k = 0; k + 1 < rep.rows.size(); k += 2) {
    const auto& a = rep.rows[k];
    const auto& b = rep.rows[k + 1];
    out << pad(a.method, 15, true) << pad(fmt("%g", a.q), 6) << pad(fmt("%.3f", a.empirical_se), 9)
        << pad(fmt("%.3f", a.mean_estimated_se), 9) << pad(fmt("%.4f", b.empirical_se), 9)
        << pad(fmt("%.4f", b.mean_estimated_se), 9) << '\n';
  }
  bool any = false;
  for (const auto& f : rep.failures) {
    if (f.failures == 0) continue;
    if (!any) out << "\nfailed fits excluded:";
    any = true;
    out << ' ' << f.method << "(q=" << fmt("%g", f.q) << ")=" << f.failures;
  }
  if (any) out << '\n';
  if (rep.failed) out << "\nRUN FAILED: " << rep.failure_reason << '\n';
}

}  // namespace wmqre
