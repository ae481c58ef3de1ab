#include "bpcf/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bpcf/special.hpp"

namespace bpcf {

Dataset Dataset::make(Matrix X, std::vector<double> A, std::vector<double> M,
                      std::vector<double> Y, std::vector<std::string> ids) {
  const std::size_t n = A.size();
  if (n < 2 || X.rows() != n || M.size() != n || Y.size() != n) {
    throw std::invalid_argument("Dataset: need at least two units with matching lengths");
  }
  int treated = 0, control = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (A[i] != 0.0 && A[i] != 1.0) {
      throw std::invalid_argument("Dataset: treatment must be coded 0/1");
    }
    (A[i] == 1.0 ? treated : control) += 1;
    if (!std::isfinite(M[i]) || !std::isfinite(Y[i])) {
      throw std::invalid_argument("Dataset: non-finite intermediate or outcome");
    }
    for (double v : X.row(i)) {
      if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite covariate");
    }
  }
  if (treated == 0 || control == 0) {
    throw std::invalid_argument("Dataset: both treatment arms must be present");
  }
  if (ids.empty()) {
    ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  } else if (ids.size() != n) {
    throw std::invalid_argument("Dataset: id count mismatch");
  }
  Dataset d;
  d.X = std::move(X);
  d.A = std::move(A);
  d.M = std::move(M);
  d.Y = std::move(Y);
  d.ids = std::move(ids);
  return d;
}

void SamplerConfig::validate() const {
  if (trees_prognostic_m < 1 || trees_modifier_m < 1 || trees_prognostic_y < 1 ||
      trees_modifier_y < 1 || bart_pce_trees < 1) {
    throw std::invalid_argument("config: tree counts must be positive");
  }
  if (iterations < 1 || burn_in < 0 || burn_in >= iterations || thin < 1) {
    throw std::invalid_argument("config: need iterations > burn_in >= 0 and thin >= 1");
  }
  auto check_prior = [](const TreePrior& p, const char* which) {
    if (p.alpha <= 0.0 || p.alpha >= 1.0 || p.beta < 0.0 || p.min_leaf_n < 1) {
      throw std::invalid_argument(std::string("config: bad tree prior for ") + which);
    }
    const double total = p.p_grow + p.p_prune + p.p_change;
    if (std::fabs(total - 1.0) > 1e-12) {
      throw std::invalid_argument(std::string("config: move mixture must sum to 1 for ") + which);
    }
  };
  check_prior(prognostic_prior, "prognostic forests");
  check_prior(modifier_prior, "modifier forests");
  if (nu <= 0.0 || sigma_quantile <= 0.0 || sigma_quantile >= 1.0) {
    throw std::invalid_argument("config: bad noise prior settings");
  }
  if (max_snapshots < 0) throw std::invalid_argument("config: max_snapshots must be >= 0");
}

ResponseTransform ResponseTransform::from(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  if (!(sd > 0.0)) throw std::invalid_argument("ResponseTransform: zero-variance response");
  return {mean, sd};
}

namespace {

int m1_column(const BpcfState& state) {
  return state.config.modifier_mode == ModifierMode::full
             ? static_cast<int>(state.m_data.modifier_design.cols())
             : 0;
}

void refresh_y_modifier_design(BpcfState& state, const Dataset& data) {
  Matrix& design = state.y_data.modifier_design;
  const std::size_t c1 = static_cast<std::size_t>(m1_column(state));
  for (std::size_t i = 0; i < data.n(); ++i) {
    design(i, c1) = state.m1_of(data, i);
    design(i, c1 + 1) = state.m0_of(data, i);
  }
}

std::vector<double> transformed(std::span<const double> v, const ResponseTransform& t) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = t.apply(v[i]);
  return out;
}

double gaussian_loglik(std::span<const double> residuals, double sigma, double scale_sd) {
  // residuals are on the transformed scale; the density is for the original
  // units, so both residual and noise scale are multiplied by scale_sd.
  double out = 0.0;
  const double sd = sigma * scale_sd;
  for (double r : residuals) out += norm_log_pdf(r * scale_sd, 0.0, sd);
  return out;
}

}  // namespace

BpcfState init_state(const Dataset& data, std::span<const double> propensity,
                     const SamplerConfig& config) {
  config.validate();
  if (propensity.size() != data.n()) {
    throw std::invalid_argument("init_state: propensity length mismatch");
  }
  for (double p : propensity) {
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument("init_state: propensity scores must lie strictly in (0, 1)");
    }
  }

  BpcfState s;
  s.config = config;
  s.propensity.assign(propensity.begin(), propensity.end());
  s.m_scale = ResponseTransform::from(data.M);
  s.y_scale = ResponseTransform::from(data.Y);
  s.m_t = transformed(data.M, s.m_scale);
  s.y_t = transformed(data.Y, s.y_scale);
  // Latent intermediates start at the observed value (a zero-effect start).
  s.counterfactual_m = data.M;

  s.m_data = BcfData::build(data.X, propensity, data.X, data.A);

  std::vector<std::vector<double>> m_cols = {data.M, data.M};
  Matrix y_modifier = config.modifier_mode == ModifierMode::full
                          ? data.X.with_columns(m_cols)
                          : Matrix::from_columns(m_cols);
  s.y_data = BcfData::build(data.X, propensity, std::move(y_modifier), data.A);

  // Responses are centered and scaled to unit variance, so both models are
  // initialized and calibrated at response sd 1.
  s.m_model = BcfModel::init(config.trees_prognostic_m, config.trees_modifier_m,
                             config.prognostic_prior, config.modifier_prior, 1.0);
  s.y_model = BcfModel::init(config.trees_prognostic_y, config.trees_modifier_y,
                             config.prognostic_prior, config.modifier_prior, 1.0);
  s.noise_prior_m = NoisePrior::calibrated(1.0, config.nu, config.sigma_quantile);
  s.noise_prior_y = s.noise_prior_m;
  return s;
}

void impute_m_mis(BpcfState& state, const Dataset& data, Rng& rng) {
  const std::size_t n = data.n();
  const std::vector<double> mu_m = state.m_model.prognostic.predict(state.m_data.prognostic_design);
  const std::vector<double> tau_m = state.m_model.modifier.predict(state.m_data.modifier_design);
  const double sigma_m = state.m_model.sigma;
  const double sigma_y = state.y_model.sigma;

  // Outcome-model quantities are computed for treated rows only: the control
  // path must never consult the outcome model.
  const auto& treated = state.y_data.treated_rows;
  std::vector<double> mu_y_treated;
  if (!treated.empty()) {
    const Matrix treated_prog = state.y_data.prognostic_design.select_rows(treated);
    mu_y_treated = state.y_model.prognostic.predict(treated_prog);
  }
  std::vector<std::size_t> treated_pos(n, 0);
  for (std::size_t k = 0; k < treated.size(); ++k) treated_pos[treated[k]] = k;

  const int c1 = m1_column(state);
  std::vector<double> row_buf;
  for (std::size_t i = 0; i < n; ++i) {
    if (data.A[i] == 0.0) {
      // Treated-arm intermediate for a control unit: direct draw from the
      // intermediate model.
      const double draw_t = rng.normal(mu_m[i] + tau_m[i], sigma_m);
      state.counterfactual_m[i] = state.m_scale.invert(draw_t);
      continue;
    }
    // Control-arm intermediate for a treated unit: independence proposal
    // from the intermediate model's control-arm factor, accepted by the
    // outcome-density ratio (the intermediate factors cancel).
    const double proposal_t = rng.normal(mu_m[i], sigma_m);
    const double proposal = state.m_scale.invert(proposal_t);
    const auto cur_row = state.y_data.modifier_design.row(i);
    row_buf.assign(cur_row.begin(), cur_row.end());
    const double mu_y = mu_y_treated[treated_pos[i]];
    const double tau_cur = state.y_model.modifier.predict_row(row_buf);
    row_buf[c1 + 1] = proposal;
    const double tau_prop = state.y_model.modifier.predict_row(row_buf);
    const double log_ratio = norm_log_pdf(state.y_t[i], mu_y + tau_prop, sigma_y) -
                             norm_log_pdf(state.y_t[i], mu_y + tau_cur, sigma_y);
    ++state.mmis.proposed;
    if (std::log(rng.uniform()) < log_ratio) {
      state.counterfactual_m[i] = proposal;
      ++state.mmis.accepted;
    }
  }
}

void mcmc_iteration(BpcfState& state, const Dataset& data, Rng& rng) {
  std::vector<double> m_resid, y_resid;
  if (state.config.impute_order == ImputeOrder::after_m_fit) {
    const auto [prog, mod] = fit_iteration(state.m_model, state.m_data, state.m_t, data.A,
                                           state.noise_prior_m, rng, &m_resid);
    state.m_prog_stats.add(prog);
    state.m_mod_stats.add(mod);
    impute_m_mis(state, data, rng);
  } else {
    state.m_prog_stats.add(backfit_prognostic(state.m_model, state.m_data, state.m_t, data.A, rng));
    impute_m_mis(state, data, rng);
    const std::vector<double> mu_all =
        state.m_model.prognostic.predict(state.m_data.prognostic_design);
    state.m_mod_stats.add(backfit_modifier(state.m_model, state.m_data, state.m_t, mu_all, rng));
    update_noise_and_scales(state.m_model, state.m_data, state.m_t, data.A,
                            state.noise_prior_m, rng, &m_resid);
  }

  refresh_y_modifier_design(state, data);
  const auto [prog, mod] = fit_iteration(state.y_model, state.y_data, state.y_t, data.A,
                                         state.noise_prior_y, rng, &y_resid);
  state.y_prog_stats.add(prog);
  state.y_mod_stats.add(mod);

  state.last_loglik = gaussian_loglik(m_resid, state.m_model.sigma, state.m_scale.sd) +
                      gaussian_loglik(y_resid, state.y_model.sigma, state.y_scale.sd);
  ++state.iteration;
}

PotentialDraw impute_potential_outcomes(const BpcfState& state, const Dataset& data,
                                        Rng& rng, bool noisy) {
  const std::size_t n = data.n();
  const std::vector<double> mu_y =
      state.y_model.prognostic.predict(state.y_data.prognostic_design);
  const std::vector<double> tau_y =
      state.y_model.modifier.predict(state.y_data.modifier_design);
  PotentialDraw out;
  out.y0.resize(n);
  out.y1.resize(n);
  const double sigma_y = state.y_model.sigma;
  for (std::size_t i = 0; i < n; ++i) {
    const double noise = noisy ? rng.normal(0.0, sigma_y) : 0.0;
    if (data.A[i] == 1.0) {
      out.y1[i] = data.Y[i];
      out.y0[i] = state.y_scale.invert(mu_y[i] + noise);
    } else {
      out.y0[i] = data.Y[i];
      out.y1[i] = state.y_scale.invert(mu_y[i] + tau_y[i] + noise);
    }
  }
  return out;
}

namespace {

void record_draw(PosteriorDraws& draws, const BpcfState& state, const Dataset& data,
                 Rng& rng) {
  const std::size_t n = data.n();
  std::vector<double> m0(n), m1(n);
  for (std::size_t i = 0; i < n; ++i) {
    m0[i] = state.m0_of(data, i);
    m1[i] = state.m1_of(data, i);
  }
  PotentialDraw y = impute_potential_outcomes(state, data, rng, state.config.noisy_impute);
  draws.m0.push_back(std::move(m0));
  draws.m1.push_back(std::move(m1));
  draws.y0.push_back(std::move(y.y0));
  draws.y1.push_back(std::move(y.y1));
  draws.sigma_m.push_back(state.m_model.sigma * state.m_scale.sd);
  draws.sigma_y.push_back(state.y_model.sigma * state.y_scale.sd);
  draws.loglik.push_back(state.last_loglik);
}

}  // namespace

PosteriorDraws run(const Dataset& data, std::span<const double> propensity,
                   const SamplerConfig& config, Rng& rng, const RunOptions& options) {
  BpcfState state = init_state(data, propensity, config);
  if (options.resume) {
    load_checkpoint(state, rng, data, options.checkpoint_path);
  }

  PosteriorDraws draws;
  draws.modifier_mode = config.modifier_mode;
  draws.snapshot_y_sd = state.y_scale.sd;
  const int kept_total = config.kept_draws();
  int snapshot_stride = 1;
  if (config.save_modifier_snapshots && config.max_snapshots > 0 && kept_total > config.max_snapshots) {
    snapshot_stride = (kept_total + config.max_snapshots - 1) / config.max_snapshots;
  }
  if (config.save_modifier_snapshots && config.modifier_mode == ModifierMode::full) {
    draws.snapshot_x = data.X;
  }

  while (state.iteration < config.iterations) {
    mcmc_iteration(state, data, rng);
    const long past_burn = state.iteration - config.burn_in;
    if (past_burn > 0 && past_burn % config.thin == 0) {
      record_draw(draws, state, data, rng);
      if (config.save_modifier_snapshots) {
        const int kept_index = static_cast<int>(draws.n_draws()) - 1;
        if (kept_index % snapshot_stride == 0) {
          draws.modifier_snapshots.push_back(state.y_model.modifier);
        }
      }
    }
    if (options.checkpoint_every > 0 && state.iteration % options.checkpoint_every == 0 &&
        state.iteration < config.iterations) {
      save_checkpoint(state, rng, options.checkpoint_path);
    }
  }

  draws.mmis_accept_rate = state.mmis.rate();
  draws.accept_rate_m_prognostic = state.m_prog_stats.accept_rate();
  draws.accept_rate_m_modifier = state.m_mod_stats.accept_rate();
  draws.accept_rate_y_prognostic = state.y_prog_stats.accept_rate();
  draws.accept_rate_y_modifier = state.y_mod_stats.accept_rate();
  return draws;
}

namespace {

void write_doubles(std::ostream& os, const char* tag, std::span<const double> v) {
  os << tag;
  char buf[40];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, " %a", x);
    os << buf;
  }
  os << "\n";
}

std::vector<double> read_doubles(std::istream& is, const char* tag, std::size_t expect) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated");
  std::istringstream ls(line);
  std::string word;
  ls >> word;
  if (word != tag) throw std::runtime_error(std::string("checkpoint: expected ") + tag);
  std::vector<double> out;
  std::string tok;
  while (ls >> tok) out.push_back(std::strtod(tok.c_str(), nullptr));
  if (expect != 0 && out.size() != expect) {
    throw std::runtime_error(std::string("checkpoint: bad length for ") + tag);
  }
  return out;
}

void write_sweep_stats(std::ostream& os, const char* tag, const SweepStats& s) {
  os << tag;
  for (int k = 0; k < 3; ++k) os << " " << s.accepted[k] << " " << s.proposed[k];
  os << "\n";
}

SweepStats read_sweep_stats(std::istream& is, const char* tag) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated");
  std::istringstream ls(line);
  std::string word;
  ls >> word;
  if (word != tag) throw std::runtime_error(std::string("checkpoint: expected ") + tag);
  SweepStats s;
  for (int k = 0; k < 3; ++k) ls >> s.accepted[k] >> s.proposed[k];
  return s;
}

}  // namespace

void save_checkpoint(BpcfState& state, const Rng& rng, const std::string& path) {
  // Align in-memory node numbering with what load_checkpoint will rebuild;
  // the text round-trip is exactly the load path, so the two states match
  // byte for byte afterwards.
  for (Forest* f : {&state.m_model.prognostic, &state.m_model.modifier,
                    &state.y_model.prognostic, &state.y_model.modifier}) {
    for (Tree& t : f->trees()) t = Tree::deserialize(t.serialize());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os << "bpcf-checkpoint v1\n";
  os << "iteration " << state.iteration << "\n";
  os << "n " << state.counterfactual_m.size() << "\n";
  write_doubles(os, "m_scale", std::vector<double>{state.m_scale.mean, state.m_scale.sd});
  write_doubles(os, "y_scale", std::vector<double>{state.y_scale.mean, state.y_scale.sd});
  write_doubles(os, "hc", std::vector<double>{state.m_model.hc_scale, state.y_model.hc_scale});
  write_doubles(os, "loglik", std::vector<double>{state.last_loglik});
  os << "mmis " << state.mmis.accepted << " " << state.mmis.proposed << "\n";
  write_sweep_stats(os, "stats_m_prog", state.m_prog_stats);
  write_sweep_stats(os, "stats_m_mod", state.m_mod_stats);
  write_sweep_stats(os, "stats_y_prog", state.y_prog_stats);
  write_sweep_stats(os, "stats_y_mod", state.y_mod_stats);
  write_doubles(os, "counterfactual_m", state.counterfactual_m);
  os << "rng " << rng.state() << "\n";
  os << "model m\n";
  serialize_forest(state.m_model.prognostic, state.m_model.sigma, os);
  serialize_forest(state.m_model.modifier, state.m_model.sigma, os);
  os << "model y\n";
  serialize_forest(state.y_model.prognostic, state.y_model.sigma, os);
  serialize_forest(state.y_model.modifier, state.y_model.sigma, os);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void load_checkpoint(BpcfState& state, Rng& rng, const Dataset& data,
                     const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "bpcf-checkpoint v1") {
    throw std::runtime_error("checkpoint: bad header");
  }
  auto read_scalar_line = [&](const char* tag) {
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated");
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word != tag) throw std::runtime_error(std::string("checkpoint: expected ") + tag);
    long v = 0;
    ls >> v;
    return v;
  };
  state.iteration = read_scalar_line("iteration");
  const std::size_t n = static_cast<std::size_t>(read_scalar_line("n"));
  if (n != data.n()) throw std::runtime_error("checkpoint: dataset size mismatch");
  auto m_scale = read_doubles(is, "m_scale", 2);
  auto y_scale = read_doubles(is, "y_scale", 2);
  state.m_scale = {m_scale[0], m_scale[1]};
  state.y_scale = {y_scale[0], y_scale[1]};
  auto hc = read_doubles(is, "hc", 2);
  state.m_model.hc_scale = hc[0];
  state.y_model.hc_scale = hc[1];
  state.last_loglik = read_doubles(is, "loglik", 1)[0];
  {
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated");
    std::istringstream ls(line);
    std::string word;
    ls >> word >> state.mmis.accepted >> state.mmis.proposed;
    if (word != "mmis") throw std::runtime_error("checkpoint: expected mmis");
  }
  state.m_prog_stats = read_sweep_stats(is, "stats_m_prog");
  state.m_mod_stats = read_sweep_stats(is, "stats_m_mod");
  state.y_prog_stats = read_sweep_stats(is, "stats_y_prog");
  state.y_mod_stats = read_sweep_stats(is, "stats_y_mod");
  state.counterfactual_m = read_doubles(is, "counterfactual_m", n);
  {
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint: truncated");
    if (line.rfind("rng ", 0) != 0) throw std::runtime_error("checkpoint: expected rng");
    rng.restore(line.substr(4));
  }
  auto expect_line = [&](const char* want) {
    if (!std::getline(is, line) || line != want) {
      throw std::runtime_error(std::string("checkpoint: expected ") + want);
    }
  };
  expect_line("model m");
  {
    auto [prog, sigma] = deserialize_forest(is);
    state.m_model.prognostic = std::move(prog);
    state.m_model.sigma = sigma;
    auto [mod, sigma2] = deserialize_forest(is);
    state.m_model.modifier = std::move(mod);
    (void)sigma2;
  }
  expect_line("model y");
  {
    auto [prog, sigma] = deserialize_forest(is);
    state.y_model.prognostic = std::move(prog);
    state.y_model.sigma = sigma;
    auto [mod, sigma2] = deserialize_forest(is);
    state.y_model.modifier = std::move(mod);
    (void)sigma2;
  }
  // Designs derive deterministically from data plus the restored latents.
  state.m_t = transformed(data.M, state.m_scale);
  state.y_t = transformed(data.Y, state.y_scale);
  refresh_y_modifier_design(state, data);
}

}  // namespace bpcf
