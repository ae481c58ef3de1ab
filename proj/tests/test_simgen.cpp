#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "bpcf/simgen.hpp"
#include "bpcf/special.hpp"
#include "test_support.hpp"

using namespace bpcf;
using test_support::correlation;
using test_support::mean;
using test_support::sample_sd;

namespace {

// Closed form for E[(2 + T)^2 | a < T < b] with T = |Z|, Z standard normal:
// the analytic target the Monte Carlo oracle must reproduce.
double truncated_effect_sq(double a, double b) {
  const double mass = 2.0 * (norm_cdf(b) - norm_cdf(a));
  const double e_t = 2.0 * (norm_pdf(a) - norm_pdf(b));
  const double e_t2 = 2.0 * ((norm_cdf(b) - b * norm_pdf(b)) - (norm_cdf(a) - a * norm_pdf(a)));
  return (4.0 * mass + 4.0 * e_t + e_t2) / mass;
}

}  // namespace

TEST_CASE("scenario draws satisfy the generating identities") {
  const SimDraw sim = gen_scenario1(400, 701);
  const Dataset& d = sim.data;
  REQUIRE(d.n() == 400);
  REQUIRE(d.X.cols() == 7);

  for (std::size_t i = 0; i < d.n(); ++i) {
    const double delta = 2.0 + std::fabs(d.X(i, 4));
    CHECK(sim.m1[i] - sim.m0[i] == doctest::Approx(delta).epsilon(1e-12));
    CHECK(sim.y1[i] - sim.y0[i] == doctest::Approx(-delta * delta).epsilon(1e-12));
    CHECK(sim.m1[i] - sim.m0[i] >= 2.0);

    // Observed columns are copies of the potential values, bit for bit.
    if (d.A[i] == 1.0) {
      CHECK(d.M[i] == sim.m1[i]);
      CHECK(d.Y[i] == sim.y1[i]);
    } else {
      CHECK(d.M[i] == sim.m0[i]);
      CHECK(d.Y[i] == sim.y0[i]);
    }
    // The probit score is unbounded, so norm_cdf can saturate to 0 or 1 in
    // double precision; the closed interval is the honest bound.
    CHECK(sim.true_propensity[i] >= 0.0);
    CHECK(sim.true_propensity[i] <= 1.0);
  }
  CHECK_THROWS(gen_scenario1(1, 1));
}

TEST_CASE("scenario generation is seed-deterministic") {
  const SimDraw a = gen_scenario1(300, 709);
  const SimDraw b = gen_scenario1(300, 709);
  const SimDraw c = gen_scenario1(300, 710);
  CHECK(a.data.A == b.data.A);
  CHECK(a.data.M == b.data.M);
  CHECK(a.data.Y == b.data.Y);
  CHECK(a.m0 == b.m0);
  CHECK(a.y1 == b.y1);
  for (std::size_t i = 0; i < a.data.n(); ++i) {
    CHECK(a.data.X(i, 3) == b.data.X(i, 3));
  }
  CHECK(a.data.M != c.data.M);
}

TEST_CASE("scenario marginals sit where the generator puts them") {
  const int n = 100000;
  const SimDraw sim = gen_scenario1(n, 719);

  std::vector<double> delta(n), x4(n);
  for (int i = 0; i < n; ++i) {
    delta[i] = sim.m1[i] - sim.m0[i];
    x4[i] = sim.data.X(i, 4);
  }
  // E(2 + |Z|) = 2 + sqrt(2/pi).
  CHECK(std::fabs(mean(delta) - (2.0 + std::sqrt(2.0 / M_PI))) <= 0.02);
  CHECK(sample_sd(x4) == doctest::Approx(1.0).epsilon(0.02));
  // Marginal treated fraction, pinned by an out-of-band computation
  // (Monte Carlo and quadrature agree to four decimals).
  CHECK(std::fabs(mean(sim.data.A) - 0.4853) <= 0.01);

  // Each published quintile holds close to a fifth of the units; the
  // boundaries are rounded to two decimals, so the masses are near, not at,
  // 0.2, and the top cell trims an extreme sliver.
  double covered = 0.0;
  for (const auto& [lo, hi] : scenario1_quintiles) {
    int count = 0;
    for (double v : delta) count += v > lo && v < hi;
    const double frac = static_cast<double>(count) / n;
    CHECK(std::fabs(frac - 0.2) <= 0.015);
    covered += frac;
  }
  CHECK(covered > 0.985);

  CHECK(scenario1_quintiles[0].first == 2.00);
  CHECK(scenario1_quintiles[2] == std::pair<double, double>{2.53, 2.84});
  CHECK(scenario1_quintiles[4].second == 5.09);
}

TEST_CASE("the effect oracle matches the closed-form truncated moments") {
  const std::int64_t n_mc = 4000000;
  const double inf = std::numeric_limits<double>::infinity();

  const double full = true_pce_oracle(StratumInterval::whole_line(), n_mc, 727);
  CHECK(std::fabs(full - (-(5.0 + 4.0 * std::sqrt(2.0 / M_PI)))) <= 0.02);

  for (const auto& [lo, hi] : scenario1_quintiles) {
    const double value = true_pce_oracle(StratumInterval{lo, hi, false}, n_mc, 733);
    CHECK(std::fabs(value - (-truncated_effect_sq(lo - 2.0, hi - 2.0))) <= 0.02);
  }

  // Determinism and input validation.
  CHECK(true_pce_oracle(StratumInterval{2.26, 2.53, false}, 100000, 5) ==
        true_pce_oracle(StratumInterval{2.26, 2.53, false}, 100000, 5));
  CHECK_THROWS(true_pce_oracle(StratumInterval::whole_line(), 99999, 1));
  CHECK_THROWS(true_pce_oracle(StratumInterval{50.0, 51.0, false}, 100000, 1));
  CHECK(true_pce_oracle(StratumInterval{-inf, inf, false}, 100000, 11) < 0.0);
}

TEST_CASE("targeted selection couples treatment to the prognostic level") {
  TargetedSelectionConfig config;
  const int n = 5000;

  config.selection_strength = 0.0;
  const SimDraw flat = gen_targeted_selection(n, config, 739);
  CHECK(std::fabs(correlation(flat.true_propensity, flat.y0)) < 0.08);

  config.selection_strength = 1.5;
  const SimDraw steep = gen_targeted_selection(n, config, 739);
  CHECK(correlation(steep.true_propensity, steep.y0) > 0.5);

  for (std::size_t i = 0; i < steep.data.n(); ++i) {
    const double delta = config.m_effect_base +
                         config.m_effect_het * std::fabs(steep.data.X(i, 1));
    CHECK(steep.m1[i] - steep.m0[i] == doctest::Approx(delta).epsilon(1e-12));
    CHECK(steep.y1[i] - steep.y0[i] ==
          doctest::Approx(-config.y_effect_curvature * delta * delta).epsilon(1e-12));
    if (steep.data.A[i] == 1.0) {
      CHECK(steep.data.M[i] == steep.m1[i]);
    } else {
      CHECK(steep.data.Y[i] == steep.y0[i]);
    }
  }

  TargetedSelectionConfig three = config;
  three.n_covariates = 3;
  const SimDraw small = gen_targeted_selection(200, three, 741);
  CHECK(small.data.X.cols() == 3);

  TargetedSelectionConfig bad = config;
  bad.n_covariates = 2;
  CHECK_THROWS(gen_targeted_selection(200, bad, 1));
  CHECK_THROWS(gen_targeted_selection(1, config, 1));
}
