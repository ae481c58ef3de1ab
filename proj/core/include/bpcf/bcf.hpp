#pragma once

#include <span>
#include <utility>
#include <vector>

#include "bpcf/forest.hpp"
#include "bpcf/matrix.hpp"
#include "bpcf/rng.hpp"
#include "bpcf/tree.hpp"

namespace bpcf {

// Designs and index sets shared across iterations of one model.  Cutpoint
// grids are built once; modifier_design values may be refreshed in place
// between iterations (the grid stays fixed so chains remain comparable).
struct BcfData {
  Matrix prognostic_design;  // [covariates, propensity]
  CutpointGrid prognostic_grid;
  Matrix modifier_design;
  CutpointGrid modifier_grid;
  std::vector<int> treated_rows;

  static BcfData build(const Matrix& X, std::span<const double> propensity,
                       Matrix modifier_design, std::span<const double> a);
};

// One conditional regression E(resp | x, a) = prognostic(x, pihat) +
// a * modifier(w): a prognostic forest over [x, pihat] and a treatment
// modifier forest over the modifier design, plus the noise scale.
struct BcfModel {
  Forest prognostic;
  Forest modifier;
  double sigma = 1.0;
  double hc_scale = 1.0;  // half-Cauchy scale of the prognostic leaf prior
  TreePrior prognostic_prior;
  TreePrior modifier_prior;

  static BcfModel init(int n_prognostic_trees, int n_modifier_trees,
                       const TreePrior& prognostic_prior, const TreePrior& modifier_prior,
                       double response_sd);
};

// prognostic(x, pihat) + a * modifier(modifier_row).
double conditional_mean(const BcfModel& model, std::span<const double> x,
                        double pihat, double a, std::span<const double> modifier_row);

// The sub-steps of one Gibbs iteration, split out so callers can interleave
// other updates (the engine imputes latent intermediates between them).
SweepStats backfit_prognostic(BcfModel& model, const BcfData& data,
                              std::span<const double> response,
                              std::span<const double> a, Rng& rng);
// Modifier backfit restricted to treated rows; mu_all are current prognostic
// predictions on the full prognostic design.
SweepStats backfit_modifier(BcfModel& model, const BcfData& data,
                            std::span<const double> response,
                            std::span<const double> mu_all, Rng& rng);
// sigma draw from full-sample residuals, then one half-Cauchy slice update of
// the prognostic leaf scale.  The modifier leaf scale stays at its fixed
// init-time calibration.  residuals_out, when given, receives response - fit
// (unchanged by the sigma draw).
void update_noise_and_scales(BcfModel& model, const BcfData& data,
                             std::span<const double> response,
                             std::span<const double> a,
                             const NoisePrior& noise_prior, Rng& rng,
                             std::vector<double>* residuals_out = nullptr);

// Full iteration: prognostic backfit, treated-only modifier backfit, noise
// and leaf-scale updates, in that order.
std::pair<SweepStats, SweepStats> fit_iteration(BcfModel& model, const BcfData& data,
                                                std::span<const double> response,
                                                std::span<const double> a,
                                                const NoisePrior& noise_prior, Rng& rng,
                                                std::vector<double>* residuals_out = nullptr);

}  // namespace bpcf
