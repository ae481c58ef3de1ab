#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "bpcf/forest.hpp"
#include "bpcf/special.hpp"
#include "test_support.hpp"

using namespace bpcf;
using test_support::ks_test;

namespace {

Matrix random_design(int n, int p, std::uint64_t seed) {
  Rng rng(seed);
  Matrix design(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) design(i, j) = rng.normal();
  }
  return design;
}

Matrix constant_design(int n) {
  return Matrix(n, 1, 1.0);  // no usable cutpoints, so trees stay stumps
}

}  // namespace

TEST_CASE("log marginal leaf closed form") {
  CHECK(log_marginal_leaf(0, 0.0, 0.0, 1.0, 1.0) == 0.0);
  // One residual at zero with sigma = sigma0 = 1 integrates to N(0; 0, 2).
  CHECK(log_marginal_leaf(1, 0.0, 0.0, 1.0, 1.0) ==
        doctest::Approx(norm_log_pdf(0.0, 0.0, std::sqrt(2.0))).epsilon(1e-14));
}

TEST_CASE("log marginal leaf matches quadrature over the leaf mean") {
  Rng rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 1 + rng.uniform_int(10);
    const double sigma = rng.uniform(0.5, 2.0);
    const double sigma0 = rng.uniform(0.3, 1.5);
    std::vector<double> r(n);
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
      r[i] = rng.normal(rng.uniform(-2.0, 2.0), 1.0);
      s += r[i];
      ss += r[i] * r[i];
    }
    const double lml = log_marginal_leaf(n, s, ss, sigma, sigma0);
    // Integrate exp(log joint - shift) to keep the integrand in range.
    const double shift = lml;
    const auto f = [&](double mu) {
      double lp = norm_log_pdf(mu, 0.0, sigma0) - shift;
      for (double ri : r) lp += norm_log_pdf(ri, mu, sigma);
      return std::exp(lp);
    };
    const double integral = test_support::integrate(f, -30.0, 30.0, 1e-13);
    CHECK(std::log(integral) + shift == doctest::Approx(lml).epsilon(1e-8));
  }
}

TEST_CASE("root-only backfit draws the analytic conjugate leaf posterior") {
  const int n = 40;
  const Matrix design = constant_design(n);
  const CutpointGrid grid = CutpointGrid::from_design(design);
  const TreePrior prior;
  const double sigma = 0.6, sigma0 = 0.8;

  Rng data_rng(23);
  std::vector<double> response(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    response[i] = data_rng.normal(1.0, 1.0);
    sum += response[i];
  }
  const std::vector<double> offset(n, 0.0);

  const double prec = n / (sigma * sigma) + 1.0 / (sigma0 * sigma0);
  const double post_mean = (sum / (sigma * sigma)) / prec;
  const double post_sd = std::sqrt(1.0 / prec);

  Forest forest(1);
  forest.set_leaf_scale(sigma0);
  Rng rng(29);
  std::vector<double> draws;
  draws.reserve(5000);
  for (int it = 0; it < 5000; ++it) {
    backfit_sweep(forest, response, offset, design, grid, prior, sigma, rng);
    REQUIRE(forest.trees()[0].size() == 1);
    draws.push_back(forest.trees()[0].node(0).leaf);
  }
  const auto ks = ks_test(draws, [&](double x) { return norm_cdf((x - post_mean) / post_sd); });
  CHECK(ks.p_value > 0.01);
}

TEST_CASE("two-tree forest fits a constant response") {
  const int n = 500;
  const Matrix design = random_design(n, 2, 31);
  const CutpointGrid grid = CutpointGrid::from_design(design);
  const TreePrior prior;
  const double sigma = 0.5;

  Forest forest(2);
  forest.set_leaf_scale(sigma / std::sqrt(2.0));
  const std::vector<double> response(n, 3.0);
  const std::vector<double> offset(n, 0.0);

  Rng rng(37);
  double acc = 0.0;
  int kept = 0;
  for (int it = 0; it < 220; ++it) {
    backfit_sweep(forest, response, offset, design, grid, prior, sigma, rng);
    if (it >= 120) {
      const std::vector<double> pred = forest.predict(design);
      acc += test_support::mean(pred);
      ++kept;
    }
  }
  CHECK(acc / kept == doctest::Approx(3.0).epsilon(0.05 / 3.0));
}

TEST_CASE("sigma update draws the analytic inverse-gamma posterior") {
  NoisePrior prior;  // nu = 3, lambda = 1
  const std::vector<double> zeros(100, 0.0);
  Rng rng(41);
  std::vector<double> sq_draws;
  sq_draws.reserve(5000);
  for (int it = 0; it < 5000; ++it) {
    const double s = update_sigma(zeros, prior, rng);
    sq_draws.push_back(s * s);
  }
  // Posterior for sigma^2: InvGamma(nu/2 + n/2, nu lambda / 2) = (51.5, 1.5).
  const auto ks =
      ks_test(sq_draws, [](double x) { return inverse_gamma_cdf(x, 51.5, 1.5); });
  CHECK(ks.p_value > 0.01);
}

TEST_CASE("sigma draws scale with the residuals") {
  NoisePrior prior;
  Rng data_rng(43);
  std::vector<double> r(100), r2(100);
  for (int i = 0; i < 100; ++i) {
    r[i] = data_rng.normal();
    r2[i] = 2.0 * r[i];
  }
  std::vector<double> d1, d2;
  for (int it = 0; it < 2000; ++it) {
    Rng a(1000 + it), b(1000 + it);  // paired streams
    d1.push_back(update_sigma(r, prior, a));
    d2.push_back(update_sigma(r2, prior, b));
  }
  std::sort(d1.begin(), d1.end());
  std::sort(d2.begin(), d2.end());
  const double ratio = d2[1000] / d1[1000];
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("sigma posterior concentrates at the generating scale") {
  NoisePrior prior;
  Rng data_rng(47);
  std::vector<double> r(10000);
  for (auto& x : r) x = data_rng.normal(0.0, 4.0);
  Rng rng(53);
  double acc = 0.0;
  const int draws = 3000;
  for (int it = 0; it < draws; ++it) acc += update_sigma(r, prior, rng);
  const double m = acc / draws;
  CHECK(m > 3.9);
  CHECK(m < 4.1);
}

TEST_CASE("noise prior calibration hits the requested quantile") {
  const NoisePrior p = NoisePrior::calibrated(2.5, 3.0, 0.9);
  // P(sigma < sd) = CDF of InvGamma(nu/2, nu lambda/2) at sd^2.
  CHECK(inverse_gamma_cdf(2.5 * 2.5, 1.5, 1.5 * p.lambda) ==
        doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("half-Cauchy scale calibration identities") {
  CHECK(half_cauchy_q3(1.0) == doctest::Approx(std::tan(3.0 * std::acos(-1.0) / 8.0)));
  const double sd = 1.7;
  const double hc = half_cauchy_scale_for_sd(sd);
  CHECK(half_cauchy_q3(hc) == doctest::Approx(2.0 * sd).epsilon(1e-12));
}

TEST_CASE("leaf-scale update favors small scales for a zero leaf") {
  Rng rng(59);
  double s = 1.0;
  std::vector<double> draws;
  const std::vector<double> leaves = {0.0};
  for (int it = 0; it < 500; ++it) {
    s = update_leaf_scale(leaves, 1.0, s, rng);
    draws.push_back(s);
  }
  std::sort(draws.begin(), draws.end());
  // Prior median of HalfCauchy(1) is 1; the likelihood pushes well below it.
  CHECK(draws[250] < 1.0);
}

TEST_CASE("leaf-scale posterior recovers the generating spread") {
  Rng data_rng(61);
  std::vector<double> leaves(200);
  for (auto& v : leaves) v = data_rng.normal(0.0, 0.7);
  Rng rng(67);
  double s = 1.0, acc = 0.0;
  int kept = 0;
  for (int it = 0; it < 4500; ++it) {
    s = update_leaf_scale(leaves, 10.0, s, rng);
    if (it >= 500) {
      acc += s;
      ++kept;
    }
  }
  const double m = acc / kept;
  CHECK(m > 0.6);
  CHECK(m < 0.8);
}

TEST_CASE("leaf-scale slice updates preserve the grid-evaluated target") {
  Rng data_rng(71);
  std::vector<double> leaves(30);
  double ss = 0.0;
  for (auto& v : leaves) {
    v = data_rng.normal(0.0, 0.5);
    ss += v * v;
  }
  const double hc = 2.0;
  const double J = static_cast<double>(leaves.size());
  const auto log_target = [&](double s) {
    return -J * std::log(s) - ss / (2.0 * s * s) - std::log1p((s / hc) * (s / hc));
  };

  // Normalized CDF on a fine grid.
  const int G = 4000;
  const double lo = 0.05, hi = 2.5;
  std::vector<double> xs(G), dens(G);
  double max_lp = -1e300;
  for (int g = 0; g < G; ++g) {
    xs[g] = lo + (hi - lo) * g / (G - 1);
    dens[g] = log_target(xs[g]);
    max_lp = std::max(max_lp, dens[g]);
  }
  for (int g = 0; g < G; ++g) dens[g] = std::exp(dens[g] - max_lp);
  std::vector<double> cdf(G, 0.0);
  for (int g = 1; g < G; ++g) {
    cdf[g] = cdf[g - 1] + 0.5 * (dens[g] + dens[g - 1]) * (xs[g] - xs[g - 1]);
  }
  for (int g = 0; g < G; ++g) cdf[g] /= cdf[G - 1];

  // Equal-probability bin edges from the grid CDF.
  const int bins = 15;
  std::vector<double> edges;
  for (int b = 1; b < bins; ++b) {
    const double q = static_cast<double>(b) / bins;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
    edges.push_back(xs[it - cdf.begin()]);
  }

  // Start at the grid mode (a stationary start) and thin the chain.
  double s = xs[std::max_element(dens.begin(), dens.end()) - dens.begin()];
  Rng rng(73);
  std::vector<double> counts(bins, 0.0);
  int kept = 0;
  for (int it = 0; it < 40000; ++it) {
    s = update_leaf_scale(leaves, hc, s, rng);
    if (it % 10 == 9) {
      const auto it_bin = std::upper_bound(edges.begin(), edges.end(), s);
      counts[it_bin - edges.begin()] += 1.0;
      ++kept;
    }
  }
  const std::vector<double> expected(bins, static_cast<double>(kept) / bins);
  CHECK(test_support::chi_square_p(counts, expected) > 0.01);
}

TEST_CASE("forest prediction is the sum over trees") {
  Forest zero(4);
  const Matrix design = random_design(20, 2, 79);
  for (double v : zero.predict(design)) CHECK(v == 0.0);

  Forest two(2);
  two.trees()[0].split_leaf(0, 0, 0.0);
  two.trees()[0].set_leaf_value(1, -1.0);
  two.trees()[0].set_leaf_value(2, 2.0);
  two.trees()[1].split_leaf(0, 1, 0.5);
  two.trees()[1].set_leaf_value(1, 10.0);
  two.trees()[1].set_leaf_value(2, 20.0);
  const std::vector<double> pred = two.predict(design);
  for (std::size_t i = 0; i < design.rows(); ++i) {
    const double expect = two.trees()[0].evaluate(design.row(i)) +
                          two.trees()[1].evaluate(design.row(i));
    CHECK(pred[i] == expect);
    CHECK(two.predict_row(design.row(i)) == expect);
  }
}

TEST_CASE("fitted forest round-trips through the checkpoint block") {
  const int n = 120;
  const Matrix design = random_design(n, 3, 83);
  const CutpointGrid grid = CutpointGrid::from_design(design);
  const TreePrior prior;
  Rng rng(89);
  std::vector<double> response(n);
  for (int i = 0; i < n; ++i) response[i] = std::sin(design(i, 0)) + 0.2 * rng.normal();
  const std::vector<double> offset(n, 0.0);

  Forest forest(5);
  forest.set_leaf_scale(0.4);
  for (int it = 0; it < 60; ++it) {
    backfit_sweep(forest, response, offset, design, grid, prior, 0.3, rng);
  }

  std::stringstream buf;
  serialize_forest(forest, 0.3125, buf);
  const auto [back, sigma] = deserialize_forest(buf);
  CHECK(sigma == 0.3125);
  CHECK(back.leaf_scale() == forest.leaf_scale());
  REQUIRE(back.n_trees() == forest.n_trees());
  std::stringstream again;
  serialize_forest(back, 0.3125, again);
  std::stringstream first;
  serialize_forest(forest, 0.3125, first);
  CHECK(again.str() == first.str());
}

TEST_CASE("subtree-local acceptance matches a full-forest recomputation oracle") {
  // backfit_sweep prices proposals by marginal-likelihood differences over
  // the affected subtree only.  Replaying each sweep with a whole-tree
  // recomputation (all leaves, sum-of-squares terms included) must give
  // identical accept decisions and leaf draws, hence an identical forest.
  const int n = 160;
  const Matrix design = random_design(n, 2, 97);
  const CutpointGrid grid = CutpointGrid::from_design(design);
  const TreePrior prior;
  const double sigma = 0.5;

  Rng data_rng(101);
  std::vector<double> response(n);
  for (int i = 0; i < n; ++i) {
    response[i] = design(i, 0) > 0.0 ? 1.0 : -1.0;
    response[i] += 0.3 * data_rng.normal();
  }
  const std::vector<double> offset(n, 0.0);

  Forest forest(3);
  forest.set_leaf_scale(0.5);
  Rng rng(103);

  for (int sweep = 0; sweep < 120; ++sweep) {
    const std::string rng_state = rng.state();
    Forest before = forest;
    backfit_sweep(forest, response, offset, design, grid, prior, sigma, rng);

    // Oracle replay with full-tree likelihood sums.
    Rng orng;
    orng.restore(rng_state);
    Forest oforest = before;
    const double sigma0 = oforest.leaf_scale();
    const int H = oforest.n_trees();
    std::vector<std::vector<double>> preds(H, std::vector<double>(n));
    std::vector<double> total(n, 0.0);
    for (int h = 0; h < H; ++h) {
      oforest.trees()[h].predict(design, preds[h]);
      for (int i = 0; i < n; ++i) total[i] += preds[h][i];
    }
    std::vector<double> resid(n);
    std::vector<int> leaf_of(n);
    for (int h = 0; h < H; ++h) {
      Tree& tree = oforest.trees()[h];
      for (int i = 0; i < n; ++i) resid[i] = response[i] - offset[i] - (total[i] - preds[h][i]);
      assign_leaves(tree, design, leaf_of);

      Proposal prop = propose_move(tree, grid, design, leaf_of, prior, orng);
      if (prop.valid) {
        const auto whole_tree_lml = [&](const Tree& t) {
          std::vector<int> lf(n);
          assign_leaves(t, design, lf);
          std::vector<int> cnt(t.size(), 0);
          std::vector<double> s(t.size(), 0.0), ss(t.size(), 0.0);
          for (int i = 0; i < n; ++i) {
            ++cnt[lf[i]];
            s[lf[i]] += resid[i];
            ss[lf[i]] += resid[i] * resid[i];
          }
          double out = 0.0;
          for (int id : t.leaf_ids()) {
            out += log_marginal_leaf(cnt[id], s[id], ss[id], sigma, sigma0);
          }
          return out;
        };
        const double delta = whole_tree_lml(prop.tree) - whole_tree_lml(tree);
        if (std::log(orng.uniform()) < delta + prop.log_structural_ratio) {
          tree = std::move(prop.tree);
          assign_leaves(tree, design, leaf_of);
        }
      }

      std::vector<int> cnt(tree.size(), 0);
      std::vector<double> s(tree.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        ++cnt[leaf_of[i]];
        s[leaf_of[i]] += resid[i];
      }
      const double prec0 = 1.0 / (sigma0 * sigma0);
      const double prec_obs = 1.0 / (sigma * sigma);
      for (int id : tree.leaf_ids()) {
        if (cnt[id] == 0) {
          tree.set_leaf_value(id, orng.normal(0.0, sigma0));
        } else {
          const double prec = cnt[id] * prec_obs + prec0;
          tree.set_leaf_value(id, orng.normal(s[id] * prec_obs / prec, std::sqrt(1.0 / prec)));
        }
      }
      for (int i = 0; i < n; ++i) {
        const double v = tree.node(leaf_of[i]).leaf;
        total[i] += v - preds[h][i];
        preds[h][i] = v;
      }
    }

    std::stringstream a, b;
    serialize_forest(forest, sigma, a);
    serialize_forest(oforest, sigma, b);
    REQUIRE(a.str() == b.str());
  }
}
