// wmqre: fit weighted M-quantile random-intercept models from CSV, run the
// Monte Carlo study, or write a synthetic sample.
//
// exit status: 0 ok, 1 fit failure, 2 input error

#include "wmqre/core.hpp"
#include "wmqre/io.hpp"
#include "wmqre/report.hpp"
#include "wmqre/sim.hpp"
#include "wmqre/version.hpp"
#include "wmqre/weights.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace {

constexpr int kOk = 0;
constexpr int kFitFailure = 1;
constexpr int kInputError = 2;

struct Output {
  std::ofstream file;
  std::ostream* stream = &std::cout;

  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file.open(path, std::ios::binary);
    if (!file) throw wmqre::InputError("cannot write '" + path + "'");
    stream = &file;
  }
};

void check_quantiles(const std::vector<double>& qs) {
  if (qs.empty()) throw wmqre::InputError("no quantiles given");
  for (double q : qs) {
    if (!(q > 0.0 && q < 1.0)) throw wmqre::InputError("quantile " + std::to_string(q) + " is outside (0,1)");
  }
}

wmqre::WeightScaling scaling_from(const std::string& s) {
  const auto m = wmqre::parse_weight_scaling(s);
  if (!m) throw wmqre::InputError("unknown scaling '" + s + "' (none, method1, method2)");
  return *m;
}

struct FitArgs {
  std::string data;
  std::string response;
  std::vector<std::string> covariates;
  std::string cluster;
  std::string unit_weight;
  std::string cluster_weight;
  bool no_intercept = false;
  std::vector<double> quantiles{0.1, 0.25, 0.5, 0.75, 0.9};
  double c = 1.345;
  std::string scale = "method2";
  double tol = 1e-6;
  int max_iter = 200;
  std::string format = "table";
  std::string output;
  bool allow_nonconverged = false;
  unsigned threads = 0;
};

int cmd_fit(const FitArgs& a) {
  if (!(a.c > 0.0)) throw wmqre::InputError("c must be positive");
  if (!(a.tol > 0.0) || a.max_iter < 1) throw wmqre::InputError("tol must be > 0 and max-iter >= 1");
  check_quantiles(a.quantiles);
  const auto scaling = scaling_from(a.scale);

  wmqre::DatasetSchema schema;
  schema.response = a.response;
  schema.covariates = a.covariates;
  schema.cluster = a.cluster;
  if (!a.unit_weight.empty()) schema.unit_weight = a.unit_weight;
  if (!a.cluster_weight.empty()) schema.cluster_weight = a.cluster_weight;
  schema.intercept = !a.no_intercept;
  const wmqre::LoadedData data = wmqre::load_design_file(a.data, schema);
  if (data.rows_dropped > 0) {
    std::cerr << "dropped " << data.rows_dropped << " of " << data.rows_read << " rows with missing values\n";
  }
  try {
    data.design.validate();
  } catch (const std::invalid_argument& e) {
    throw wmqre::InputError(e.what());
  }
  const wmqre::GroupedDesign design = wmqre::apply_weight_scaling(data.design, scaling);

  wmqre::FitOptions opts;
  opts.tol = a.tol;
  opts.max_iter = a.max_iter;

  std::vector<wmqre::QuantileFit> fits(a.quantiles.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < fits.size(); k = next++) {
      fits[k].q = a.quantiles[k];
      try {
        fits[k].fit = wmqre::fit_wmqre(design, wmqre::InfluenceSpec::huber(a.quantiles[k], a.c), opts);
      } catch (const std::exception& e) {
        fits[k].error = e.what();
      }
    }
  };
  unsigned nthreads = a.threads != 0 ? a.threads : std::max(1u, std::thread::hardware_concurrency());
  nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(fits.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  wmqre::FitRunInfo info;
  info.input = a.data;
  info.rows_read = data.rows_read;
  info.rows_dropped = data.rows_dropped;
  info.clusters = design.clusters.size();
  info.units = design.total_units();
  info.c = a.c;
  info.scaling = wmqre::to_string(scaling);
  info.tol = a.tol;
  info.max_iter = a.max_iter;

  Output out(a.output);
  if (a.format == "json") {
    *out.stream << wmqre::fit_report_json(data.coefficient_names, fits, info).dump(2) << '\n';
  } else if (a.format == "csv") {
    wmqre::write_fit_csv(*out.stream, data.coefficient_names, fits);
  } else {
    wmqre::write_fit_table(*out.stream, data.coefficient_names, fits);
  }

  int status = kOk;
  for (const auto& f : fits) {
    if (!f.fit) {
      std::cerr << "q=" << f.q << ": fit failed: " << f.error << '\n';
      status = kFitFailure;
    } else if (!f.fit->converged) {
      std::cerr << "q=" << f.q << ": " << f.fit->diagnostic << '\n';
      if (!a.allow_nonconverged) status = kFitFailure;
    }
  }
  return status;
}

struct SimArgs {
  wmqre::sim::SimConfig cfg;
  std::string scale = "method2";
  bool no_contamination = false;
  bool non_informative = false;
  bool no_lmm = false;
  std::string format = "table";
  std::string output;
  std::string json_output;
};

void add_sim_options(CLI::App* cmd, SimArgs& s) {
  cmd->add_option("--seed", s.cfg.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--m", s.cfg.sampled_clusters, "sampled clusters")->capture_default_str();
  cmd->add_option("--population-clusters", s.cfg.population_clusters, "clusters in the population (M)")
      ->capture_default_str();
  cmd->add_option("--cluster-size", s.cfg.cluster_size, "units per population cluster (N_j)")
      ->capture_default_str();
  cmd->add_option("--unit-rate", s.cfg.unit_sampling_rate, "n_j / N_j")->capture_default_str();
  cmd->add_option("--quantiles", s.cfg.quantiles, "quantiles")->delimiter(',')->capture_default_str();
  cmd->add_option("--c", s.cfg.c, "Huber tuning constant")->capture_default_str();
  cmd->add_option("--scale", s.scale, "level-1 weight scaling: none, method1, method2")->capture_default_str();
  cmd->add_flag("--sd-spread", s.cfg.spread_is_sd, "read contaminated spreads as standard deviations");
  cmd->add_flag("--no-contamination", s.no_contamination, "clean normal population");
  cmd->add_flag("--non-informative", s.non_informative, "simple random sampling at both stages");
}

void apply_sim_args(SimArgs& s) {
  s.cfg.scaling = scaling_from(s.scale);
  if (s.no_contamination) {
    s.cfg.gamma.contamination = 0.0;
    s.cfg.eps.contamination = 0.0;
  }
  if (s.non_informative) s.cfg.informative = false;
  if (s.no_lmm) s.cfg.fit_lmm = false;
  try {
    s.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw wmqre::InputError(e.what());
  }
}

int cmd_simulate(SimArgs& s) {
  apply_sim_args(s);
  const wmqre::sim::SimReport rep = wmqre::sim::run_monte_carlo(s.cfg);
  {
    Output out(s.output);
    if (s.format == "json") {
      *out.stream << wmqre::sim_report_json(rep).dump(2) << '\n';
    } else {
      wmqre::write_sim_tables(*out.stream, rep);
    }
  }
  if (!s.json_output.empty()) {
    Output js(s.json_output);
    *js.stream << wmqre::sim_report_json(rep).dump(2) << '\n';
  }
  if (rep.failed) {
    std::cerr << rep.failure_reason << '\n';
    return kFitFailure;
  }
  return kOk;
}

int cmd_sample(SimArgs& s, int replicate, const std::string& targets_path) {
  apply_sim_args(s);
  wmqre::RandomStream rng(s.cfg.seed, static_cast<std::uint64_t>(replicate));
  const auto pop = wmqre::sim::generate_population(s.cfg, rng);
  wmqre::sim::SamplingLog log;
  const auto design = wmqre::sim::informative_sample(pop, s.cfg, rng, log);
  {
    Output out(s.output);
    wmqre::write_design_csv(*out.stream, design, {"x"});
  }
  if (log.shortfall_events > 0) std::cerr << "stratum shortfalls: " << log.shortfall_events << '\n';
  if (!targets_path.empty()) {
    nlohmann::json t;
    t["seed"] = s.cfg.seed;
    t["replicate"] = replicate;
    t["rng"] = wmqre::Philox4x32::name();
    t["c"] = s.cfg.c;
    nlohmann::json arr = nlohmann::json::array();
    wmqre::FitOptions opts = wmqre::sim::fit_options(s.cfg);
    for (double q : s.cfg.quantiles) {
      const wmqre::Vector census = wmqre::sim::census_target(pop, wmqre::InfluenceSpec::huber(q, s.cfg.c), opts);
      const wmqre::Vector model = wmqre::sim::model_target(s.cfg, q);
      arr.push_back({{"q", q},
                     {"census", {census[0], census[1]}},
                     {"model", {model[0], model[1]}}});
    }
    t["targets"] = arr;
    Output js(targets_path);
    *js.stream << t.dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted M-quantile random-intercept regression"};
  app.set_version_flag("--version", wmqre::kVersion);
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit a CSV dataset at a grid of quantiles");
  fit->add_option("data", fa.data, "input CSV (header row, comma separated)")->required();
  fit->add_option("-y,--response", fa.response, "response column")->required();
  fit->add_option("-x,--covariates", fa.covariates, "covariate columns")->delimiter(',');
  fit->add_option("-g,--cluster", fa.cluster, "cluster id column")->required();
  fit->add_option("--unit-weight", fa.unit_weight, "level-1 weight column (w_i|j)");
  fit->add_option("--cluster-weight", fa.cluster_weight, "level-2 weight column (w_j, constant within cluster)");
  fit->add_flag("--no-intercept", fa.no_intercept, "drop the intercept");
  fit->add_option("-q,--quantiles", fa.quantiles, "quantiles")->delimiter(',')->capture_default_str();
  fit->add_option("--c", fa.c, "Huber tuning constant")->capture_default_str();
  fit->add_option("--scale", fa.scale, "level-1 weight scaling: none, method1, method2")->capture_default_str();
  fit->add_option("--tol", fa.tol, "convergence tolerance")->capture_default_str();
  fit->add_option("--max-iter", fa.max_iter, "iteration cap")->capture_default_str();
  fit->add_option("--format", fa.format, "json, csv or table")
      ->check(CLI::IsMember({"json", "csv", "table"}))
      ->capture_default_str();
  fit->add_option("-o,--output", fa.output, "output file (default stdout)");
  fit->add_flag("--allow-nonconverged", fa.allow_nonconverged, "exit 0 even if a fit did not converge");
  fit->add_option("--threads", fa.threads, "worker threads (0 = all cores)");

  SimArgs sa;
  auto* simulate = app.add_subcommand("simulate", "run the Monte Carlo study");
  add_sim_options(simulate, sa);
  simulate->add_option("-R,--replications", sa.cfg.replications, "replications")->capture_default_str();
  simulate->add_option("--threads", sa.cfg.threads, "worker threads (0 = all cores)");
  simulate->add_flag("--fixed-population", sa.cfg.fixed_population, "draw one population and resample it");
  simulate->add_flag("--no-lmm", sa.no_lmm, "skip the Gaussian random-intercept fit");
  simulate->add_option("--format", sa.format, "table or json")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();
  simulate->add_option("-o,--output", sa.output, "output file (default stdout)");
  simulate->add_option("--json", sa.json_output, "also write the JSON report here");

  SimArgs ss;
  int replicate = 0;
  std::string targets;
  auto* sample = app.add_subcommand("sample", "write one simulated informative sample as CSV");
  add_sim_options(sample, ss);
  sample->add_option("--replicate", replicate, "replicate stream")->capture_default_str();
  sample->add_option("-o,--output", ss.output, "output CSV (default stdout)");
  sample->add_option("--targets", targets, "write census and model targets as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*fit) return cmd_fit(fa);
    if (*simulate) return cmd_simulate(sa);
    if (*sample) return cmd_sample(ss, replicate, targets);
  } catch (const wmqre::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFitFailure;
  }
  return kOk;
}
