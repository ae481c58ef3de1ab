#include <cmath>
#include <stdexcept>
#include <vector>

#include "bpcf/engine.hpp"
#include "bpcf/special.hpp"

namespace bpcf {

namespace {

// One single-forest regression fit to one arm's rows.
struct ArmBart {
  Forest forest;
  double sigma = 1.0;
  double hc_scale = 1.0;
  ResponseTransform scale;
  Matrix design;
  CutpointGrid grid;
  std::vector<double> resp_t;
  std::vector<double> zero_offset;
  NoisePrior noise_prior;
  TreePrior prior;
  SweepStats stats;
};

ArmBart make_arm(Matrix design, std::span<const double> response, int n_trees,
                 const TreePrior& prior, double nu, double quantile) {
  ArmBart m;
  m.design = std::move(design);
  m.grid = CutpointGrid::from_design(m.design);
  m.scale = ResponseTransform::from(response);
  m.resp_t.resize(response.size());
  for (std::size_t i = 0; i < response.size(); ++i) m.resp_t[i] = m.scale.apply(response[i]);
  m.zero_offset.assign(response.size(), 0.0);
  m.forest = Forest(n_trees);
  m.forest.set_leaf_scale(1.0 / std::sqrt(static_cast<double>(n_trees)));
  m.hc_scale = half_cauchy_scale_for_sd(1.0);
  m.noise_prior = NoisePrior::calibrated(1.0, nu, quantile);
  m.prior = prior;
  return m;
}

void arm_iteration(ArmBart& m, Rng& rng) {
  m.stats.add(backfit_sweep(m.forest, m.resp_t, m.zero_offset, m.design, m.grid,
                            m.prior, m.sigma, rng));
  const std::vector<double> pred = m.forest.predict(m.design);
  std::vector<double> resid(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) resid[i] = m.resp_t[i] - pred[i];
  m.sigma = update_sigma(resid, m.noise_prior, rng);
  const std::vector<double> leaves = m.forest.leaf_values();
  m.forest.set_leaf_scale(update_leaf_scale(leaves, m.hc_scale, m.forest.leaf_scale(), rng));
}

double arm_loglik(const ArmBart& m) {
  const std::vector<double> pred = m.forest.predict(m.design);
  double out = 0.0;
  const double sd = m.sigma * m.scale.sd;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out += norm_log_pdf((m.resp_t[i] - pred[i]) * m.scale.sd, 0.0, sd);
  }
  return out;
}

}  // namespace

PosteriorDraws run_bart_pce(const Dataset& data, const SamplerConfig& config, Rng& rng) {
  config.validate();
  const std::size_t n = data.n();
  std::vector<int> control, treated;
  for (std::size_t i = 0; i < n; ++i) {
    (data.A[i] == 1.0 ? treated : control).push_back(static_cast<int>(i));
  }

  auto gather = [&](const std::vector<int>& rows, const std::vector<double>& v) {
    std::vector<double> out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) out[k] = v[rows[k]];
    return out;
  };
  const Matrix x_control = data.X.select_rows(control);
  const Matrix x_treated = data.X.select_rows(treated);
  const std::vector<double> m_control = gather(control, data.M);
  const std::vector<double> m_treated = gather(treated, data.M);
  const std::vector<double> y_control = gather(control, data.Y);
  const std::vector<double> y_treated = gather(treated, data.Y);

  const TreePrior prior = config.prognostic_prior;
  const int H = config.bart_pce_trees;
  ArmBart m0 = make_arm(x_control, m_control, H, prior, config.nu, config.sigma_quantile);
  ArmBart m1 = make_arm(x_treated, m_treated, H, prior, config.nu, config.sigma_quantile);
  ArmBart y0 = make_arm(x_control.with_columns({m_control}), y_control, H, prior,
                        config.nu, config.sigma_quantile);
  ArmBart y1 = make_arm(x_treated.with_columns({m_treated}), y_treated, H, prior,
                        config.nu, config.sigma_quantile);

  PosteriorDraws draws;
  std::vector<double> row_buf(data.X.cols() + 1);

  for (int it = 1; it <= config.iterations; ++it) {
    arm_iteration(m0, rng);
    arm_iteration(m1, rng);
    arm_iteration(y0, rng);
    arm_iteration(y1, rng);
    const int past_burn = it - config.burn_in;
    if (past_burn <= 0 || past_burn % config.thin != 0) continue;

    std::vector<double> d_m0(n), d_m1(n), d_y0(n), d_y1(n);
    // Missing intermediates first, cross-arm.
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = data.X.row(i);
      if (data.A[i] == 1.0) {
        d_m1[i] = data.M[i];
        double t = m0.forest.predict_row(x);
        if (config.noisy_impute) t += rng.normal(0.0, m0.sigma);
        d_m0[i] = m0.scale.invert(t);
      } else {
        d_m0[i] = data.M[i];
        double t = m1.forest.predict_row(x);
        if (config.noisy_impute) t += rng.normal(0.0, m1.sigma);
        d_m1[i] = m1.scale.invert(t);
      }
    }
    // Then missing outcomes at the imputed intermediates.
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = data.X.row(i);
      std::copy(x.begin(), x.end(), row_buf.begin());
      if (data.A[i] == 1.0) {
        d_y1[i] = data.Y[i];
        row_buf.back() = d_m0[i];
        double t = y0.forest.predict_row(row_buf);
        if (config.noisy_impute) t += rng.normal(0.0, y0.sigma);
        d_y0[i] = y0.scale.invert(t);
      } else {
        d_y0[i] = data.Y[i];
        row_buf.back() = d_m1[i];
        double t = y1.forest.predict_row(row_buf);
        if (config.noisy_impute) t += rng.normal(0.0, y1.sigma);
        d_y1[i] = y1.scale.invert(t);
      }
    }
    draws.m0.push_back(std::move(d_m0));
    draws.m1.push_back(std::move(d_m1));
    draws.y0.push_back(std::move(d_y0));
    draws.y1.push_back(std::move(d_y1));
    draws.sigma_m.push_back(0.5 * (m0.sigma * m0.scale.sd + m1.sigma * m1.scale.sd));
    draws.sigma_y.push_back(0.5 * (y0.sigma * y0.scale.sd + y1.sigma * y1.scale.sd));
    draws.loglik.push_back(arm_loglik(m0) + arm_loglik(m1) + arm_loglik(y0) + arm_loglik(y1));
  }

  SweepStats m_stats = m0.stats, y_stats = y0.stats;
  m_stats.add(m1.stats);
  y_stats.add(y1.stats);
  draws.accept_rate_m_prognostic = m_stats.accept_rate();
  draws.accept_rate_y_prognostic = y_stats.accept_rate();
  return draws;
}

}  // namespace bpcf
