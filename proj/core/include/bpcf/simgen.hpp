#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "bpcf/engine.hpp"
#include "bpcf/estimands.hpp"

namespace bpcf {

// A synthetic dataset together with its generating truths.  Noise is drawn
// once per unit and shared across arms, so the potential-value columns obey
// the generator's effect identities exactly.
struct SimDraw {
  Dataset data;
  std::vector<double> m0, m1, y0, y1;
  std::vector<double> true_propensity;
};

// Nonlinear confounded generator with seven standard-normal covariates, a
// sign-flip pair driving both responses and the treatment, an intermediate
// effect 2 + |x5| and an outcome effect -(intermediate effect)^2.
SimDraw gen_scenario1(int n, std::uint64_t seed);

// Quintile intervals of the scenario's intermediate-effect distribution,
// lower-open upper-open on (a, b).
extern const std::array<std::pair<double, double>, 5> scenario1_quintiles;

// Monte Carlo truth of the scenario's principal effect on an interval,
// conditioning on the generator's intermediate effects.  n_mc >= 100000.
double true_pce_oracle(const StratumInterval& interval, std::int64_t n_mc,
                       std::uint64_t seed);

struct TargetedSelectionConfig {
  int n_covariates = 5;       // covariates 1..n-1 drive responses; the last only selection
  double selection_strength = 1.5;  // weight on the standardized prognostic score
  double m_effect_base = 1.5;
  double m_effect_het = 0.5;  // heterogeneity coefficient on |x2|
  double y_effect_curvature = 0.4;
  double m_noise_sd = 0.2;
  double y_noise_sd = 0.3;
};

// Generator where treatment probability tracks the prognostic level, for
// exercising the propensity-in-design behavior.  selection_strength 0 makes
// treatment independent of the prognostic score.
SimDraw gen_targeted_selection(int n, const TargetedSelectionConfig& config,
                               std::uint64_t seed);

}  // namespace bpcf
