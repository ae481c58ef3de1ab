#pragma once

#include <span>
#include <utility>
#include <vector>

#include "bpcf/engine.hpp"
#include "bpcf/matrix.hpp"

namespace bpcf {

// One principal stratum on the intermediate-effect scale M(1) - M(0).
// Membership is lower-open by default; interior cells of an
// intervals_from_sd_multiples partition are lower-closed.
struct StratumInterval {
  double lower, upper;
  bool lower_closed = false;
  bool contains(double v) const {
    return (lower_closed ? v >= lower : v > lower) && v < upper;
  }
  static StratumInterval whole_line();
};

struct PceEstimate {
  // Ratio-of-sums over draws: sum of member effects / sum of member counts.
  double posterior_mean = 0.0;
  // Spread of the within-draw ratios over draws with at least one member.
  double posterior_sd = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};  // equal-tailed, interpolated quantiles
  double avg_stratum_n = 0.0;                // mean over all draws of the member count
  int n_draws_nonempty = 0;
  bool empty_stratum = false;  // no members in any draw; point fields are NaN
  std::vector<double> per_draw;
};

PceEstimate pce(const PosteriorDraws& draws, const StratumInterval& interval);

// Posterior mean of the intermediate effect, averaged over draws and units.
double intermediate_ate(const PosteriorDraws& draws);

// Partition of the real line at {0} and {+/- s * m} for each multiplier m,
// where s is the SD over units of the posterior-mean intermediate effect.
// k multipliers give 2k + 2 intervals; interior cells are lower-closed.
std::vector<StratumInterval> intervals_from_sd_multiples(const PosteriorDraws& draws,
                                                         std::span<const double> multipliers);

// Conditional-effect surface over a grid of (m0, m1) values: the posterior
// mean of the outcome-modifier evaluation, averaged over snapshot draws and
// the covariate rows stored with them.  values(j, k) corresponds to
// (m0_grid[j], m1_grid[k]).  stratum_points are the per-unit posterior-mean
// strata for overlaying observed units on the surface.
struct CepSurface {
  std::vector<double> m0_grid, m1_grid;
  Matrix values;
  std::vector<std::pair<double, double>> stratum_points;  // (m0, m1) per unit
};
CepSurface cep_surface(const PosteriorDraws& draws, std::span<const double> m0_grid,
                       std::span<const double> m1_grid);

struct ReplicationMetrics {
  double rbias = 0.0;     // (mean estimate - truth) / |truth|
  bool rbias_defined = true;
  double bias = 0.0;      // mean estimate - truth, reported when truth == 0
  double mse = 0.0;
};
ReplicationMetrics replication_metrics(std::span<const double> estimates, double truth);

}  // namespace bpcf
