#include "bpcf/bcf.hpp"

#include <cmath>
#include <stdexcept>

#include "bpcf/special.hpp"

namespace bpcf {

BcfData BcfData::build(const Matrix& X, std::span<const double> propensity,
                       Matrix modifier_design, std::span<const double> a) {
  if (propensity.size() != X.rows() || a.size() != X.rows() ||
      modifier_design.rows() != X.rows()) {
    throw std::invalid_argument("BcfData::build: length mismatch");
  }
  BcfData data;
  data.prognostic_design = X.with_columns({{propensity.begin(), propensity.end()}});
  data.prognostic_grid = CutpointGrid::from_design(data.prognostic_design);
  data.modifier_design = std::move(modifier_design);
  data.modifier_grid = CutpointGrid::from_design(data.modifier_design);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 1.0) data.treated_rows.push_back(static_cast<int>(i));
  }
  return data;
}

BcfModel BcfModel::init(int n_prognostic_trees, int n_modifier_trees,
                        const TreePrior& prognostic_prior, const TreePrior& modifier_prior,
                        double response_sd) {
  BcfModel m;
  m.prognostic = Forest(n_prognostic_trees);
  m.modifier = Forest(n_modifier_trees);
  m.prognostic_prior = prognostic_prior;
  m.modifier_prior = modifier_prior;
  m.sigma = response_sd;
  m.hc_scale = half_cauchy_scale_for_sd(response_sd);
  m.prognostic.set_leaf_scale(response_sd / std::sqrt(static_cast<double>(n_prognostic_trees)));
  // The modifier scale is a fixed calibration against the response sd.  Tying it
  // to the live sigma instead lets an early prognostic sweep absorb the treated
  // arm, collapse sigma, and crush the modifier before it can grow.
  m.modifier.set_leaf_scale(response_sd / std::sqrt(static_cast<double>(n_modifier_trees)));
  return m;
}

double conditional_mean(const BcfModel& model, std::span<const double> x,
                        double pihat, double a, std::span<const double> modifier_row) {
  std::vector<double> prog_row(x.begin(), x.end());
  prog_row.push_back(pihat);
  double out = model.prognostic.predict_row(prog_row);
  if (a != 0.0) out += a * model.modifier.predict_row(modifier_row);
  return out;
}

SweepStats backfit_prognostic(BcfModel& model, const BcfData& data,
                              std::span<const double> response,
                              std::span<const double> a, Rng& rng) {
  const std::vector<double> tau_all = model.modifier.predict(data.modifier_design);
  std::vector<double> offset(response.size());
  for (std::size_t i = 0; i < response.size(); ++i) offset[i] = a[i] * tau_all[i];
  return backfit_sweep(model.prognostic, response, offset, data.prognostic_design,
                       data.prognostic_grid, model.prognostic_prior, model.sigma, rng);
}

SweepStats backfit_modifier(BcfModel& model, const BcfData& data,
                            std::span<const double> response,
                            std::span<const double> mu_all, Rng& rng) {
  const Matrix treated_design = data.modifier_design.select_rows(data.treated_rows);
  std::vector<double> resp_t(data.treated_rows.size()), offset_t(data.treated_rows.size());
  for (std::size_t k = 0; k < data.treated_rows.size(); ++k) {
    const int i = data.treated_rows[k];
    resp_t[k] = response[i];
    offset_t[k] = mu_all[i];
  }
  return backfit_sweep(model.modifier, resp_t, offset_t, treated_design,
                       data.modifier_grid, model.modifier_prior, model.sigma, rng);
}

void update_noise_and_scales(BcfModel& model, const BcfData& data,
                             std::span<const double> response,
                             std::span<const double> a,
                             const NoisePrior& noise_prior, Rng& rng,
                             std::vector<double>* residuals_out) {
  const std::vector<double> mu_all = model.prognostic.predict(data.prognostic_design);
  const std::vector<double> tau_all = model.modifier.predict(data.modifier_design);
  std::vector<double> resid(response.size());
  for (std::size_t i = 0; i < response.size(); ++i) {
    resid[i] = response[i] - mu_all[i] - a[i] * tau_all[i];
  }
  model.sigma = update_sigma(resid, noise_prior, rng);
  const std::vector<double> leaves = model.prognostic.leaf_values();
  model.prognostic.set_leaf_scale(
      update_leaf_scale(leaves, model.hc_scale, model.prognostic.leaf_scale(), rng));
  if (residuals_out != nullptr) *residuals_out = std::move(resid);
}

std::pair<SweepStats, SweepStats> fit_iteration(BcfModel& model, const BcfData& data,
                                                std::span<const double> response,
                                                std::span<const double> a,
                                                const NoisePrior& noise_prior, Rng& rng,
                                                std::vector<double>* residuals_out) {
  const SweepStats prog_stats = backfit_prognostic(model, data, response, a, rng);
  const std::vector<double> mu_all = model.prognostic.predict(data.prognostic_design);
  const SweepStats mod_stats = backfit_modifier(model, data, response, mu_all, rng);
  update_noise_and_scales(model, data, response, a, noise_prior, rng, residuals_out);
  return {prog_stats, mod_stats};
}

}  // namespace bpcf
