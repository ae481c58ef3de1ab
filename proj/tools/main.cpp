// bpcf: simulation studies, model fits and posterior summaries for the
// principal-stratification sampler, as four subcommands sharing one config
// surface.  Every command writes a manifest next to its outputs and is
// byte-identical on rerun with the same inputs and seed.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bpcf/config.hpp"
#include "bpcf/engine.hpp"
#include "bpcf/estimands.hpp"
#include "bpcf/io.hpp"
#include "bpcf/propensity.hpp"
#include "bpcf/rng.hpp"
#include "bpcf/simgen.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace bpcf;

namespace {

// Seed streams, shared with nothing else: data, then one chain per method.
constexpr std::uint64_t kDataStream = 1000;
constexpr std::uint64_t kBpcfStream = 2000;
constexpr std::uint64_t kBartPceStream = 3000;
constexpr std::uint64_t kMOnlyStream = 4000;
// The report's truth column comes from the generator oracle, pinned so that
// reruns agree byte for byte.
constexpr std::int64_t kTruthDraws = 1000000;
constexpr std::uint64_t kTruthSeed = 97;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int worker_count() {
  if (const char* env = std::getenv("BPCF_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return w;
    std::fprintf(stderr, "bpcf: ignoring BPCF_WORKERS='%s'\n", env);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command, json body) {
  json m;
  m["command"] = command;
  for (auto& [key, value] : body.items()) m[key] = value;
  m["versions"] = {{"bpcf", BPCF_VERSION}, {"draws_format", "v1"}};
  std::ofstream os(out_dir / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
  os << m.dump(2) << "\n";
}

// Config assembly shared by simulate and fit: profile or file baseline, then
// flag overrides, then free-form --set pairs, all through RunConfig::set so
// validation and the canonical hash see the same values.
struct ConfigFlags {
  std::string profile;
  std::string config_file;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
  int replications = -1;
};

RunConfig assemble_config(const ConfigFlags& flags) {
  RunConfig config = flags.config_file.empty()
                         ? RunConfig::from_profile(flags.profile.empty() ? "paper_default"
                                                                         : flags.profile)
                         : RunConfig::load_file(flags.config_file, flags.profile);
  if (flags.seed >= 0) config.set("seed", std::to_string(flags.seed));
  if (flags.replications >= 0) config.set("replications", std::to_string(flags.replications));
  for (const std::string& kv : flags.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    }
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

std::vector<std::string> unit_ids_or_default(const Dataset& data) {
  if (!data.ids.empty()) return data.ids;
  std::vector<std::string> ids(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) ids[i] = std::to_string(i + 1);
  return ids;
}

// Propensity for simulated data.  Perfect separation is a legitimate draw at
// small n; the constant-propensity fallback keeps the replication usable and
// is reported rather than hidden.
std::vector<double> simulated_propensity(const Dataset& data, double clip, int replication) {
  try {
    const LogisticFit fit = fit_logistic(data.X, data.A);
    return predict_propensity(fit, data.X, clip);
  } catch (const SeparationError&) {
    double mean_a = 0.0;
    for (double a : data.A) mean_a += a;
    mean_a /= static_cast<double>(data.n());
    mean_a = std::clamp(mean_a, clip, 1.0 - clip);
    std::fprintf(stderr, "bpcf: replication %d is separable; using constant propensity %.3f\n",
                 replication, mean_a);
    return std::vector<double>(data.n(), mean_a);
  }
}

// ----- simulate -----------------------------------------------------------

// m_ate plus the five quintile strata, in report row order.
constexpr int kEstimands = 6;

std::array<double, kEstimands> estimand_values(const PosteriorDraws& draws) {
  std::array<double, kEstimands> out{};
  out[0] = intermediate_ate(draws);
  for (int q = 0; q < 5; ++q) {
    const auto& [lo, hi] = scenario1_quintiles[q];
    out[q + 1] = pce(draws, StratumInterval{lo, hi}).posterior_mean;
  }
  return out;
}

std::array<double, kEstimands> estimand_truths() {
  std::array<double, kEstimands> truth{};
  truth[0] = 2.0 + std::sqrt(2.0 / std::numbers::pi);
  for (int q = 0; q < 5; ++q) {
    const auto& [lo, hi] = scenario1_quintiles[q];
    truth[q + 1] = true_pce_oracle(StratumInterval{lo, hi}, kTruthDraws, kTruthSeed);
  }
  return truth;
}

PosteriorDraws run_method(const std::string& method, const Dataset& data,
                          const std::vector<double>& pihat, const RunConfig& config,
                          int replication) {
  if (method == "bart_pce") {
    Rng rng(mix_seed(config.seed, kBartPceStream + replication));
    return run_bart_pce(data, config.sampler, rng);
  }
  SamplerConfig sampler = config.sampler;
  std::uint64_t stream = kBpcfStream;
  if (method == "bpcf_m_only") {
    sampler.modifier_mode = ModifierMode::m_only;
    stream = kMOnlyStream;
  }
  Rng rng(mix_seed(config.seed, stream + replication));
  return run(data, pihat, sampler, rng);
}

int cmd_simulate(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const int reps = config.replications;
  const auto n_methods = config.methods.size();

  // results[r][method][estimand]; slots preassigned so workers never contend.
  std::vector<std::vector<std::array<double, kEstimands>>> results(
      reps, std::vector<std::array<double, kEstimands>>(n_methods));

  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto work = [&] {
    for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) {
      try {
        const SimDraw sim = gen_scenario1(config.sim_n, mix_seed(config.seed, kDataStream + r));
        const std::vector<double> pihat = simulated_propensity(sim.data, config.clip, r);
        for (std::size_t m = 0; m < n_methods; ++m) {
          results[r][m] = estimand_values(run_method(config.methods[m], sim.data, pihat,
                                                     config, r));
        }
        std::fprintf(stderr, "bpcf: replication %d/%d done\n", r + 1, reps);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const int workers = std::min(worker_count(), reps);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  const std::array<double, kEstimands> truth = estimand_truths();
  const std::vector<std::string> row_names = {"m_ate",      "interval_1", "interval_2",
                                              "interval_3", "interval_4", "interval_5"};

  // Table-shaped report: one row per estimand, rBias and MSE per method.
  {
    std::vector<std::string> headers = {"estimand", "true_effect"};
    std::vector<std::vector<double>> columns;
    columns.emplace_back(truth.begin(), truth.end());
    for (std::size_t m = 0; m < n_methods; ++m) {
      std::vector<double> rbias(kEstimands), mse(kEstimands);
      for (int e = 0; e < kEstimands; ++e) {
        std::vector<double> estimates(reps);
        for (int r = 0; r < reps; ++r) estimates[r] = results[r][m][e];
        const ReplicationMetrics metrics = replication_metrics(estimates, truth[e]);
        rbias[e] = metrics.rbias;
        mse[e] = metrics.mse;
      }
      headers.push_back(config.methods[m] + "_rbias");
      headers.push_back(config.methods[m] + "_mse");
      columns.push_back(std::move(rbias));
      columns.push_back(std::move(mse));
    }
    write_csv((out_dir / "report.csv").string(), headers, columns, &row_names);
  }

  // Raw per-replication estimates for downstream analysis.
  {
    std::vector<std::string> headers = {"replication"};
    std::vector<std::vector<double>> columns;
    for (std::size_t m = 0; m < n_methods; ++m) {
      for (int e = 0; e < kEstimands; ++e) {
        headers.push_back(config.methods[m] + "_" + row_names[e]);
        std::vector<double> col(reps);
        for (int r = 0; r < reps; ++r) col[r] = results[r][m][e];
        columns.push_back(std::move(col));
      }
    }
    std::vector<std::string> rep_ids(reps);
    for (int r = 0; r < reps; ++r) rep_ids[r] = std::to_string(r + 1);
    write_csv((out_dir / "replications.csv").string(), headers, columns, &rep_ids);
  }

  write_manifest(out_dir, "simulate",
                 {{"seed", config.seed},
                  {"profile", config.profile},
                  {"config_hash", hash_hex(config.hash())},
                  {"replications", reps},
                  {"n", config.sim_n},
                  {"methods", config.methods},
                  {"truth_oracle", {{"draws", kTruthDraws}, {"seed", kTruthSeed}}}});
  return 0;
}

// ----- fit ----------------------------------------------------------------

int cmd_fit(const RunConfig& config, const std::string& data_csv, const std::string& mapping_path,
            const fs::path& out_dir) {
  const ColumnMapping mapping = parse_mapping(mapping_path);
  const Dataset data = dataset_from_csv(data_csv, mapping);
  const std::vector<std::string> ids = unit_ids_or_default(data);

  const LogisticFit prop_fit = fit_logistic(data.X, data.A);
  const std::vector<double> pihat = predict_propensity(prop_fit, data.X, config.clip);

  Rng rng(mix_seed(config.seed, kBpcfStream));
  std::fprintf(stderr, "bpcf: fitting %zu units, %d iterations\n", data.n(),
               config.sampler.iterations);
  const PosteriorDraws draws = run(data, pihat, config.sampler, rng);

  fs::create_directories(out_dir);
  write_draws((out_dir / "draws").string(), draws, ids);

  // Propensity against the posterior-mean control outcome, the targeted
  // selection diagnostic; per-unit so external plotting can bin or smooth.
  {
    const std::size_t n = data.n();
    std::vector<double> y0_mean(n, 0.0);
    for (const auto& draw : draws.y0) {
      for (std::size_t i = 0; i < n; ++i) y0_mean[i] += draw[i];
    }
    for (double& v : y0_mean) v /= static_cast<double>(draws.n_draws());
    write_csv((out_dir / "scatter.csv").string(), {"id", "pihat", "y0_mean"},
              {pihat, y0_mean}, &ids);
  }

  {
    int n_treated = 0;
    for (double a : data.A) n_treated += a == 1.0;
    double sigma_m = 0.0, sigma_y = 0.0;
    for (double v : draws.sigma_m) sigma_m += v;
    for (double v : draws.sigma_y) sigma_y += v;
    sigma_m /= static_cast<double>(draws.n_draws());
    sigma_y /= static_cast<double>(draws.n_draws());
    const PceEstimate ate = pce(draws, StratumInterval::whole_line());

    json summary;
    summary["n"] = data.n();
    summary["n_treated"] = n_treated;
    summary["kept_draws"] = draws.n_draws();
    summary["propensity"] = {{"converged", prop_fit.converged},
                             {"iterations", prop_fit.iterations},
                             {"coefficients", prop_fit.coefficients}};
    summary["acceptance"] = {{"m_prognostic", draws.accept_rate_m_prognostic},
                             {"m_modifier", draws.accept_rate_m_modifier},
                             {"y_prognostic", draws.accept_rate_y_prognostic},
                             {"y_modifier", draws.accept_rate_y_modifier},
                             {"intermediate_imputation", draws.mmis_accept_rate}};
    summary["sigma_m_mean"] = sigma_m;
    summary["sigma_y_mean"] = sigma_y;
    summary["intermediate_ate"] = intermediate_ate(draws);
    summary["outcome_ate"] = {{"mean", ate.posterior_mean},
                              {"sd", ate.posterior_sd},
                              {"ci95", {ate.ci95.first, ate.ci95.second}},
                              {"avg_n", ate.avg_stratum_n}};
    std::ofstream os(out_dir / "summary.json", std::ios::binary);
    os << summary.dump(2) << "\n";
  }

  write_manifest(out_dir, "fit",
                 {{"seed", config.seed},
                  {"profile", config.profile},
                  {"config_hash", hash_hex(config.hash())},
                  {"inputs", {{"data", data_csv}, {"mapping", mapping_path}}}});
  return 0;
}

// ----- pce ----------------------------------------------------------------

double parse_bound(const std::string& token) {
  const std::string t = token;
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw std::runtime_error("cannot parse interval bound '" + token + "'");
  }
  return v;
}

std::vector<double> parse_multiples(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end != item.c_str() + item.size()) {
      throw std::runtime_error("cannot parse sd multiple '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

int cmd_pce(const std::string& draws_dir, const std::string& sd_multiples,
            const std::vector<std::string>& interval_specs, const fs::path& out_dir) {
  const PosteriorDraws draws = read_draws(draws_dir);

  std::vector<StratumInterval> intervals;
  json parameters;
  if (!interval_specs.empty()) {
    for (const std::string& spec : interval_specs) {
      const auto comma = spec.find(',');
      if (comma == std::string::npos) {
        throw std::runtime_error("--interval expects 'lower,upper', got '" + spec + "'");
      }
      StratumInterval interval{parse_bound(spec.substr(0, comma)),
                               parse_bound(spec.substr(comma + 1))};
      if (!(interval.lower < interval.upper)) {
        throw std::runtime_error("interval '" + spec + "' is empty");
      }
      intervals.push_back(interval);
    }
    parameters["intervals"] = interval_specs;
  } else {
    const std::vector<double> multiples =
        parse_multiples(sd_multiples.empty() ? "0.2,0.5" : sd_multiples);
    intervals = intervals_from_sd_multiples(draws, multiples);
    parameters["sd_multiples"] = multiples;
  }

  const std::size_t k = intervals.size();
  std::vector<double> lower(k), upper(k), lower_closed(k), mean(k), sd(k), ci_low(k),
      ci_high(k), avg_n(k), nonempty(k), empty_flag(k);
  for (std::size_t j = 0; j < k; ++j) {
    const PceEstimate est = pce(draws, intervals[j]);
    lower[j] = intervals[j].lower;
    upper[j] = intervals[j].upper;
    lower_closed[j] = intervals[j].lower_closed ? 1.0 : 0.0;
    mean[j] = est.posterior_mean;
    sd[j] = est.posterior_sd;
    ci_low[j] = est.ci95.first;
    ci_high[j] = est.ci95.second;
    avg_n[j] = est.avg_stratum_n;
    nonempty[j] = est.n_draws_nonempty;
    empty_flag[j] = est.empty_stratum ? 1.0 : 0.0;
  }

  fs::create_directories(out_dir);
  std::vector<std::string> stratum_ids(k);
  for (std::size_t j = 0; j < k; ++j) stratum_ids[j] = std::to_string(j + 1);
  write_csv((out_dir / "pce.csv").string(),
            {"stratum", "lower", "upper", "lower_closed", "mean", "sd", "ci_low", "ci_high",
             "avg_n", "draws_nonempty", "empty"},
            {lower, upper, lower_closed, mean, sd, ci_low, ci_high, avg_n, nonempty, empty_flag},
            &stratum_ids);

  parameters["draws"] = draws_dir;
  write_manifest(out_dir, "pce", parameters);
  return 0;
}

// ----- surface ------------------------------------------------------------

std::pair<int, int> parse_grid(const std::string& spec) {
  const auto x = spec.find('x');
  if (x == std::string::npos) throw std::runtime_error("--grid expects RxC, got '" + spec + "'");
  const int rows = std::atoi(spec.substr(0, x).c_str());
  const int cols = std::atoi(spec.substr(x + 1).c_str());
  if (rows < 1 || cols < 1) throw std::runtime_error("--grid expects RxC >= 1x1");
  return {rows, cols};
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

int cmd_surface(const std::string& draws_dir, const std::string& grid_spec,
                const fs::path& out_dir) {
  const PosteriorDraws draws = read_draws(draws_dir);
  const auto [rows, cols] = parse_grid(grid_spec);

  // Default grid spans the posterior-mean strata of the fitted units, the
  // region the draws actually inform.
  const std::size_t n = draws.n_units();
  std::vector<double> m0_mean(n, 0.0), m1_mean(n, 0.0);
  for (std::size_t d = 0; d < draws.n_draws(); ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      m0_mean[i] += draws.m0[d][i];
      m1_mean[i] += draws.m1[d][i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    m0_mean[i] /= static_cast<double>(draws.n_draws());
    m1_mean[i] /= static_cast<double>(draws.n_draws());
  }
  const auto [m0_lo, m0_hi] = std::minmax_element(m0_mean.begin(), m0_mean.end());
  const auto [m1_lo, m1_hi] = std::minmax_element(m1_mean.begin(), m1_mean.end());
  const std::vector<double> m0_grid = linspace(*m0_lo, *m0_hi, rows);
  const std::vector<double> m1_grid = linspace(*m1_lo, *m1_hi, cols);

  const CepSurface surface = cep_surface(draws, m0_grid, m1_grid);

  fs::create_directories(out_dir);
  // Matrix layout: one row per m0 grid value, one column per m1 grid value.
  {
    std::vector<std::string> headers = {"m0"};
    for (double v : surface.m1_grid) headers.push_back("m1_" + g17(v));
    std::vector<std::vector<double>> columns(surface.m1_grid.size());
    for (std::size_t col = 0; col < surface.m1_grid.size(); ++col) {
      columns[col].resize(surface.m0_grid.size());
      for (std::size_t row = 0; row < surface.m0_grid.size(); ++row) {
        columns[col][row] = surface.values(row, col);
      }
    }
    std::vector<std::string> row_ids(surface.m0_grid.size());
    for (std::size_t row = 0; row < surface.m0_grid.size(); ++row) {
      row_ids[row] = g17(surface.m0_grid[row]);
    }
    write_csv((out_dir / "surface.csv").string(), headers, columns, &row_ids);
  }

  // Overlay points: per-unit posterior-mean strata.
  {
    std::vector<double> p0(surface.stratum_points.size()), p1(surface.stratum_points.size());
    for (std::size_t i = 0; i < surface.stratum_points.size(); ++i) {
      p0[i] = surface.stratum_points[i].first;
      p1[i] = surface.stratum_points[i].second;
    }
    std::vector<std::string> unit_ids(p0.size());
    for (std::size_t i = 0; i < p0.size(); ++i) unit_ids[i] = std::to_string(i + 1);
    write_csv((out_dir / "points.csv").string(), {"unit", "m0_mean", "m1_mean"}, {p0, p1},
              &unit_ids);
  }

  write_manifest(out_dir, "surface",
                 {{"draws", draws_dir},
                  {"grid", {{"m0", rows}, {"m1", cols}}}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian principal stratification with coupled causal forests"};
  app.set_version_flag("--version", std::string(BPCF_VERSION));
  app.require_subcommand(1);

  ConfigFlags flags;
  std::string out, data_csv, mapping_path, draws_dir;
  std::string sd_multiples, grid_spec = "40x40";
  std::vector<std::string> interval_specs;

  CLI::App* sim = app.add_subcommand("simulate", "Replicated synthetic study with rBias/MSE report");
  sim->add_option("--profile", flags.profile, "Config profile: paper_default, paper_sim, smoke");
  sim->add_option("--config", flags.config_file, "Config file of key=value lines");
  sim->add_option("--seed", flags.seed, "Base seed for data and chain streams");
  sim->add_option("--replications", flags.replications, "Number of replications");
  sim->add_option("--set", flags.sets, "Extra key=value config overrides")->take_all();
  sim->add_option("--out", out, "Output directory")->required();

  CLI::App* fit = app.add_subcommand("fit", "Fit the model to a CSV dataset");
  fit->add_option("--data", data_csv, "Dataset CSV")->required();
  fit->add_option("--mapping", mapping_path, "Column-role sidecar (key=value)")->required();
  fit->add_option("--profile", flags.profile, "Config profile");
  fit->add_option("--config", flags.config_file, "Config file of key=value lines");
  fit->add_option("--seed", flags.seed, "Chain seed");
  fit->add_option("--set", flags.sets, "Extra key=value config overrides")->take_all();
  fit->add_option("--out", out, "Output directory")->required();

  CLI::App* pce_cmd = app.add_subcommand("pce", "Principal effects per stratum from saved draws");
  pce_cmd->add_option("--draws", draws_dir, "Draws directory written by fit")->required();
  CLI::Option* sd_opt =
      pce_cmd->add_option("--sd-multiples", sd_multiples, "Stratum boundaries at 0 and +/- s*m");
  pce_cmd->add_option("--interval", interval_specs, "Explicit stratum 'lower,upper'; repeatable")
      ->take_all()
      ->excludes(sd_opt);
  pce_cmd->add_option("--out", out, "Output directory")->required();

  CLI::App* surf = app.add_subcommand("surface", "Conditional-effect surface from saved draws");
  surf->add_option("--draws", draws_dir, "Draws directory written by fit")->required();
  surf->add_option("--grid", grid_spec, "Grid as RxC over the posterior strata span");
  surf->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      return cmd_simulate(assemble_config(flags), out);
    }
    if (fit->parsed()) {
      // Snapshots default on for fits so the surface command has material;
      // an explicit --set save_modifier_snapshots=0 still wins.
      ConfigFlags fit_flags = flags;
      fit_flags.sets.insert(fit_flags.sets.begin(), "save_modifier_snapshots=1");
      return cmd_fit(assemble_config(fit_flags), data_csv, mapping_path, out);
    }
    if (pce_cmd->parsed()) {
      return cmd_pce(draws_dir, sd_multiples, interval_specs, out);
    }
    if (surf->parsed()) {
      return cmd_surface(draws_dir, grid_spec, out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bpcf: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
