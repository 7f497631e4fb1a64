#pragma once

// Monte Carlo harness: contaminated two-level population, informative
// two-stage stratified sampling with exact inverse-inclusion weights, and
// replicate aggregation into bias / standard-error summaries.

#include "wmqre/core.hpp"
#include "wmqre/design.hpp"
#include "wmqre/random.hpp"
#include "wmqre/weights.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wmqre::sim {

// p * N(mean, spread) + (1-p) * N(0, clean_var) style two-component mixture.
// spread is a variance unless the config reads it as a standard deviation.
struct Mixture {
  double clean_variance = 1.0;
  double contamination = 0.1;
  double contaminated_mean = 0.0;
  double contaminated_spread = 1.0;
};

struct SimConfig {
  int population_clusters = 170;  // M
  int cluster_size = 50;          // N_j
  int sampled_clusters = 100;     // m
  std::array<double, 3> cluster_fractions{0.15, 0.65, 0.20};
  std::array<double, 2> unit_fractions{0.75, 0.25};
  double unit_sampling_rate = 0.3;
  int replications = 500;
  std::vector<double> quantiles{0.1, 0.25, 0.5};
  double c = 1.345;
  std::uint64_t seed = 20190517;

  double beta0 = 100.0;
  double beta1 = 2.0;
  double x_min = 0.0;
  double x_max = 20.0;
  Mixture gamma{1.0, 0.1, 9.0, 20.0};
  Mixture eps{3.3, 0.1, 10.0, 75.0};
  bool spread_is_sd = false;

  // One finite population drawn once and sampled R times, or a fresh
  // population per replicate.
  bool fixed_population = false;
  bool informative = true;
  WeightScaling scaling = WeightScaling::Method2;
  bool fit_lmm = true;
  double fit_tol = 1e-6;
  int fit_max_iter = 200;
  unsigned threads = 0;  // 0 = hardware concurrency

  int sampled_units_per_cluster() const {
    return static_cast<int>(std::lround(unit_sampling_rate * cluster_size));
  }

  void validate() const {
    auto near_one = [](double s) { return std::abs(s - 1.0) < 1e-9; };
    if (population_clusters < 2 || cluster_size < 1) throw std::invalid_argument("population is too small");
    if (sampled_clusters < 2 || sampled_clusters > population_clusters) {
      throw std::invalid_argument("need 2 <= m <= M sampled clusters");
    }
    if (!near_one(cluster_fractions[0] + cluster_fractions[1] + cluster_fractions[2])) {
      throw std::invalid_argument("level-2 sampling fractions must sum to 1");
    }
    if (!near_one(unit_fractions[0] + unit_fractions[1])) {
      throw std::invalid_argument("level-1 sampling fractions must sum to 1");
    }
    for (double f : cluster_fractions) {
      if (f < 0.0) throw std::invalid_argument("negative sampling fraction");
    }
    for (double f : unit_fractions) {
      if (f < 0.0) throw std::invalid_argument("negative sampling fraction");
    }
    const int n = sampled_units_per_cluster();
    if (n < 1 || n > cluster_size) throw std::invalid_argument("unit sampling rate gives an invalid n_j");
    if (replications < 1) throw std::invalid_argument("need at least one replication");
    if (quantiles.empty()) throw std::invalid_argument("no quantiles requested");
    for (double q : quantiles) {
      if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("quantiles must lie in (0,1)");
    }
    if (!(c > 0.0)) throw std::invalid_argument("tuning constant must be positive");
    if (!(x_max > x_min)) throw std::invalid_argument("empty covariate range");
  }
};

struct PopulationCluster {
  double gamma = 0.0;
  Vector x;
  Vector eps;
  Vector y;
};

struct Population {
  std::vector<PopulationCluster> clusters;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += static_cast<std::size_t>(c.y.size());
    return n;
  }
};

inline double draw_mixture(RandomStream& rng, const Mixture& mix, bool spread_is_sd) {
  if (rng.bernoulli(mix.contamination)) {
    const double var = spread_is_sd ? mix.contaminated_spread * mix.contaminated_spread : mix.contaminated_spread;
    return rng.normal(mix.contaminated_mean, var);
  }
  return rng.normal(0.0, mix.clean_variance);
}

inline Population generate_population(const SimConfig& cfg, RandomStream& rng) {
  Population pop;
  pop.clusters.resize(static_cast<std::size_t>(cfg.population_clusters));
  for (auto& c : pop.clusters) {
    c.gamma = draw_mixture(rng, cfg.gamma, cfg.spread_is_sd);
    c.x.resize(cfg.cluster_size);
    c.eps.resize(cfg.cluster_size);
    c.y.resize(cfg.cluster_size);
    for (int i = 0; i < cfg.cluster_size; ++i) {
      c.x[i] = rng.uniform(cfg.x_min, cfg.x_max);
      c.eps[i] = draw_mixture(rng, cfg.eps, cfg.spread_is_sd);
      c.y[i] = cfg.beta0 + cfg.beta1 * c.x[i] + c.gamma + c.eps[i];
    }
  }
  return pop;
}

// Integer allocation of total * fractions that preserves the total
// (largest remainder, ties to the lower index).
template <std::size_t K>
std::array<int, K> allocate(int total, const std::array<double, K>& fractions) {
  std::array<int, K> out{};
  std::array<double, K> rem{};
  int used = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double exact = fractions[k] * total;
    out[k] = static_cast<int>(std::floor(exact + 1e-9));
    rem[k] = exact - out[k];
    used += out[k];
  }
  while (used < total) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (rem[k] > rem[best] + 1e-12) best = k;
    }
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

struct SamplingLog {
  int shortfall_events = 0;
};

namespace detail {

// Draws requested[k] indices from each stratum; a stratum that is too small
// is taken whole and its deficit is drawn from the stratum with the most
// remaining units. Returns the chosen indices per stratum.
template <std::size_t K>
std::array<std::vector<int>, K> stratified_draw(const std::array<std::vector<int>, K>& strata,
                                                std::array<int, K> requested, RandomStream& rng,
                                                SamplingLog& log) {
  int deficit = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const int avail = static_cast<int>(strata[k].size());
    if (requested[k] > avail) {
      deficit += requested[k] - avail;
      requested[k] = avail;
      ++log.shortfall_events;
    }
  }
  while (deficit > 0) {
    std::size_t best = K;
    int best_spare = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const int spare = static_cast<int>(strata[k].size()) - requested[k];
      if (spare > best_spare) {
        best = k;
        best_spare = spare;
      }
    }
    if (best == K) throw std::invalid_argument("population too small for the requested sample");
    const int take = std::min(deficit, best_spare);
    requested[best] += take;
    deficit -= take;
  }
  std::array<std::vector<int>, K> chosen;
  for (std::size_t k = 0; k < K; ++k) {
    chosen[k] = rng.sample_without_replacement(strata[k], static_cast<std::size_t>(requested[k]));
    std::sort(chosen[k].begin(), chosen[k].end());
  }
  return chosen;
}

}  // namespace detail

// Two-stage sample with raw (unscaled) inverse-inclusion weights. Under
// informative sampling clusters are stratified by gamma (< -1, [-1,1], > 1)
// and units by eps (> 0, <= 0); otherwise both stages are simple random
// samples.
inline GroupedDesign informative_sample(const Population& pop, const SimConfig& cfg, RandomStream& rng,
                                        SamplingLog& log) {
  std::array<std::vector<int>, 3> cluster_strata;
  for (int j = 0; j < static_cast<int>(pop.clusters.size()); ++j) {
    const double g = pop.clusters[static_cast<std::size_t>(j)].gamma;
    const std::size_t s = !cfg.informative ? 1 : (g < -1.0 ? 0 : (g <= 1.0 ? 1 : 2));
    cluster_strata[s].push_back(j);
  }
  const auto cluster_request = cfg.informative
                                   ? allocate(cfg.sampled_clusters, cfg.cluster_fractions)
                                   : std::array<int, 3>{0, cfg.sampled_clusters, 0};
  const auto chosen = detail::stratified_draw(cluster_strata, cluster_request, rng, log);

  const int nj = cfg.sampled_units_per_cluster();
  const auto unit_request = cfg.informative ? allocate(nj, cfg.unit_fractions) : std::array<int, 2>{nj, 0};

  struct Pick {
    int cluster;
    double w2;
  };
  std::vector<Pick> picks;
  for (std::size_t s = 0; s < 3; ++s) {
    const double w2 = chosen[s].empty() ? 0.0
                                        : static_cast<double>(cluster_strata[s].size()) /
                                              static_cast<double>(chosen[s].size());
    for (int j : chosen[s]) picks.push_back({j, w2});
  }
  std::sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) { return a.cluster < b.cluster; });

  GroupedDesign design;
  design.p = 2;
  design.clusters.reserve(picks.size());
  for (const auto& pick : picks) {
    const auto& pc = pop.clusters[static_cast<std::size_t>(pick.cluster)];
    std::array<std::vector<int>, 2> unit_strata;
    for (int i = 0; i < pc.eps.size(); ++i) {
      const std::size_t s = !cfg.informative ? 0 : (pc.eps[i] > 0.0 ? 0 : 1);
      unit_strata[s].push_back(i);
    }
    const auto units = detail::stratified_draw(unit_strata, unit_request, rng, log);
    ClusterBlock block;
    block.id = std::to_string(pick.cluster);
    block.w2 = pick.w2;
    const auto n = static_cast<Eigen::Index>(units[0].size() + units[1].size());
    block.X.resize(n, 2);
    block.y.resize(n);
    block.w1.resize(n);
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < 2; ++s) {
      const double w1 = units[s].empty() ? 0.0
                                         : static_cast<double>(unit_strata[s].size()) /
                                               static_cast<double>(units[s].size());
      for (int i : units[s]) {
        block.X(row, 0) = 1.0;
        block.X(row, 1) = pc.x[i];
        block.y[row] = pc.y[i];
        block.w1[row] = w1;
        ++row;
      }
    }
    design.clusters.push_back(std::move(block));
  }
  return design;
}

inline GroupedDesign population_design(const Population& pop) {
  GroupedDesign design;
  design.p = 2;
  design.clusters.reserve(pop.clusters.size());
  for (std::size_t j = 0; j < pop.clusters.size(); ++j) {
    const auto& pc = pop.clusters[j];
    ClusterBlock block;
    block.id = std::to_string(j);
    block.X.resize(pc.x.size(), 2);
    block.X.col(0).setOnes();
    block.X.col(1) = pc.x;
    block.y = pc.y;
    block.w1 = Vector::Ones(pc.y.size());
    design.clusters.push_back(std::move(block));
  }
  return design;
}

// Finite-population M-quantile coefficients: the unweighted fit on the
// whole population.
inline Vector census_target(const Population& pop, const InfluenceSpec& spec, const FitOptions& base = {}) {
  FitOptions opts = base;
  opts.compute_inference = false;
  const FitResult fit = fit_wmqre(population_design(pop), spec, opts);
  if (!fit.converged) throw Error("census fit did not converge: " + fit.diagnostic);
  return fit.beta;
}

// Superpopulation coefficients of the clean model: the intercept shifted by
// the q-quantile of the clean level-1 error, and the true slope.
inline Vector model_target(const SimConfig& cfg, double q) {
  const boost::math::normal_distribution<double> z;
  Vector b(2);
  b << cfg.beta0 + std::sqrt(cfg.eps.clean_variance) * boost::math::quantile(z, q), cfg.beta1;
  return b;
}

enum class Method { WeightedMqre, Mqre, Lmm };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::WeightedMqre: return "Weighted-MQRE";
    case Method::Mqre: return "MQRE";
    case Method::Lmm: return "LMM";
  }
  return "?";
}

struct Cell {
  Method method;
  double q;
};

inline std::vector<Cell> cells_for(const SimConfig& cfg) {
  std::vector<Cell> cells;
  for (double q : cfg.quantiles) {
    cells.push_back({Method::WeightedMqre, q});
    cells.push_back({Method::Mqre, q});
  }
  if (cfg.fit_lmm) cells.push_back({Method::Lmm, 0.5});
  return cells;
}

struct ReplicateFit {
  bool ok = false;
  Vector beta;
  Vector se;
};

struct ReplicateResult {
  std::vector<Vector> census;  // per cell
  std::vector<ReplicateFit> fits;
  double cluster_weight_sum = 0.0;
  double mean_unit_weight_sum = 0.0;
  int shortfall_events = 0;
  std::size_t sample_size = 0;
};

inline InfluenceSpec spec_for(const Cell& cell, double c) {
  return cell.method == Method::Lmm ? InfluenceSpec::identity(0.5) : InfluenceSpec::huber(cell.q, c);
}

// Stream reserved for the shared population in fixed-population mode.
inline constexpr std::uint64_t kPopulationStream = std::uint64_t{1} << 63;

inline Population shared_population(const SimConfig& cfg) {
  RandomStream rng(cfg.seed, kPopulationStream);
  return generate_population(cfg, rng);
}

// Census targets for every cell, aligned with cells_for(cfg). MQRE and
// Weighted-MQRE cells at the same q share one fit.
inline std::vector<Vector> census_targets(const Population& pop, const SimConfig& cfg, const FitOptions& opts) {
  const auto cells = cells_for(cfg);
  std::vector<Vector> out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Method key = cells[k].method == Method::Lmm ? Method::Lmm : Method::Mqre;
    Vector target;
    for (std::size_t i = 0; i < k; ++i) {
      const Method other = cells[i].method == Method::Lmm ? Method::Lmm : Method::Mqre;
      if (other == key && cells[i].q == cells[k].q) target = out[i];
    }
    if (target.size() == 0) target = census_target(pop, spec_for(cells[k], cfg.c), opts);
    out.push_back(target);
  }
  return out;
}

inline FitOptions fit_options(const SimConfig& cfg) {
  FitOptions opts;
  opts.tol = cfg.fit_tol;
  opts.max_iter = cfg.fit_max_iter;
  return opts;
}

// With fixed_population set, pop and census must be the shared population and
// its targets; otherwise both are drawn here from the replicate's stream.
inline ReplicateResult run_replicate(const SimConfig& cfg, int replicate, const Population* fixed_pop = nullptr,
                                     const std::vector<Vector>* fixed_census = nullptr) {
  RandomStream rng(cfg.seed, static_cast<std::uint64_t>(replicate));
  std::optional<Population> own_pop;
  if (fixed_pop == nullptr) own_pop = generate_population(cfg, rng);
  const Population& pop = fixed_pop != nullptr ? *fixed_pop : *own_pop;
  SamplingLog log;
  const GroupedDesign raw = informative_sample(pop, cfg, rng, log);

  ReplicateResult out;
  out.shortfall_events = log.shortfall_events;
  out.sample_size = raw.total_units();
  for (const auto& c : raw.clusters) {
    out.cluster_weight_sum += c.w2;
    out.mean_unit_weight_sum += c.w1.sum();
  }
  out.mean_unit_weight_sum /= static_cast<double>(raw.clusters.size());

  const GroupedDesign weighted = apply_weight_scaling(raw, cfg.scaling);
  const GroupedDesign unweighted = raw.unweighted();
  const FitOptions opts = fit_options(cfg);
  out.census = fixed_census != nullptr ? *fixed_census : census_targets(pop, cfg, opts);

  const auto cells = cells_for(cfg);
  for (const auto& cell : cells) {
    const InfluenceSpec spec = spec_for(cell, cfg.c);
    ReplicateFit rf;
    try {
      const FitResult fit =
          fit_wmqre(cell.method == Method::WeightedMqre ? weighted : unweighted, spec, opts);
      rf.ok = fit.converged && fit.inference_available;
      rf.beta = fit.beta;
      rf.se = fit.se;
    } catch (const Error&) {
      rf.ok = false;
    }
    out.fits.push_back(std::move(rf));
  }
  return out;
}

struct ParameterSummary {
  std::string method;
  double q = 0.5;
  int parameter = 0;  // 0 intercept, 1 slope
  int replications = 0;
  double model_target = 0.0;
  double mean_census_target = 0.0;
  double mean_estimate = 0.0;
  double arb_model = 0.0;   // percent, against the clean-model coefficient
  double arb_census = 0.0;  // percent, against the per-replicate census fit
  double mean_abs_error_census = 0.0;
  double empirical_se = 0.0;
  double mean_estimated_se = 0.0;
};

struct MethodFailures {
  std::string method;
  double q = 0.5;
  int failures = 0;
};

struct SimReport {
  SimConfig config;
  std::string rng = Philox4x32::name();
  int replications = 0;
  int shortfall_events = 0;
  double mean_cluster_weight_sum = 0.0;
  double mean_unit_weight_sum = 0.0;
  double mean_sample_size = 0.0;
  std::vector<MethodFailures> failures;
  std::vector<ParameterSummary> rows;
  bool failed = false;
  std::string failure_reason;

  const ParameterSummary* find(std::string_view method, double q, int parameter) const {
    for (const auto& r : rows) {
      if (r.method == method && std::abs(r.q - q) < 1e-12 && r.parameter == parameter) return &r;
    }
    return nullptr;
  }
};

inline std::vector<ReplicateResult> run_replicates(const SimConfig& cfg) {
  std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.replications));
  unsigned nthreads = cfg.threads != 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(cfg.replications));
  std::optional<Population> pop;
  std::vector<Vector> census;
  if (cfg.fixed_population) {
    pop = shared_population(cfg);
    census = census_targets(*pop, cfg, fit_options(cfg));
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int r = next++; r < cfg.replications; r = next++) {
      try {
        results[static_cast<std::size_t>(r)] =
            pop ? run_replicate(cfg, r, &*pop, &census) : run_replicate(cfg, r);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

inline SimReport summarize(const SimConfig& cfg, const std::vector<ReplicateResult>& results) {
  SimReport rep;
  rep.config = cfg;
  rep.replications = static_cast<int>(results.size());
  const double R = static_cast<double>(results.size());
  for (const auto& r : results) {
    rep.shortfall_events += r.shortfall_events;
    rep.mean_cluster_weight_sum += r.cluster_weight_sum / R;
    rep.mean_unit_weight_sum += r.mean_unit_weight_sum / R;
    rep.mean_sample_size += static_cast<double>(r.sample_size) / R;
  }

  const auto cells = cells_for(cfg);
  int worst_failures = 0;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Cell& cell = cells[k];
    std::vector<std::size_t> ok;
    for (std::size_t r = 0; r < results.size(); ++r) {
      if (results[r].fits[k].ok) ok.push_back(r);
    }
    const int failures = static_cast<int>(results.size() - ok.size());
    rep.failures.push_back({to_string(cell.method), cell.q, failures});
    worst_failures = std::max(worst_failures, failures);
    if (ok.empty()) continue;

    const Vector model = cell.method == Method::Lmm ? Vector((Vector(2) << cfg.beta0, cfg.beta1).finished())
                                                    : model_target(cfg, cell.q);
    const double n_ok = static_cast<double>(ok.size());
    for (int par = 0; par < 2; ++par) {
      ParameterSummary s;
      s.method = to_string(cell.method);
      s.q = cell.q;
      s.parameter = par;
      s.replications = static_cast<int>(ok.size());
      s.model_target = model[par];
      for (std::size_t r : ok) {
        const double est = results[r].fits[k].beta[par];
        const double census = results[r].census[k][par];
        s.mean_estimate += est / n_ok;
        s.mean_census_target += census / n_ok;
        s.arb_model += (est - model[par]) / model[par] * 100.0 / n_ok;
        s.arb_census += (est - census) / census * 100.0 / n_ok;
        s.mean_abs_error_census += std::abs(est - census) / n_ok;
        s.mean_estimated_se += results[r].fits[k].se[par] / n_ok;
      }
      double ss = 0.0;
      for (std::size_t r : ok) {
        const double d = results[r].fits[k].beta[par] - s.mean_estimate;
        ss += d * d;
      }
      s.empirical_se = std::sqrt(ss / n_ok);
      rep.rows.push_back(s);
    }
  }
  if (static_cast<double>(worst_failures) > 0.05 * R) {
    rep.failed = true;
    rep.failure_reason = "more than 5% of replicate fits failed for at least one method";
  }
  return rep;
}

inline SimReport run_monte_carlo(const SimConfig& cfg) {
  cfg.validate();
  return summarize(cfg, run_replicates(cfg));
}

}  // namespace wmqre::sim
