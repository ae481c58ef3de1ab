#include "bpcf/simgen.hpp"

#include <cmath>
#include <stdexcept>

#include "bpcf/special.hpp"

namespace bpcf {

namespace {

double h1(double x) { return x >= 0.0 ? -1.0 : 1.0; }
double h2(double x) { return x < 0.0 ? -1.0 : 1.0; }

Dataset assemble(Matrix X, std::vector<double> A, const std::vector<double>& m0,
                 const std::vector<double>& m1, const std::vector<double>& y0,
                 const std::vector<double>& y1) {
  const std::size_t n = A.size();
  std::vector<double> M(n), Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    M[i] = A[i] == 1.0 ? m1[i] : m0[i];
    Y[i] = A[i] == 1.0 ? y1[i] : y0[i];
  }
  return Dataset::make(std::move(X), std::move(A), std::move(M), std::move(Y));
}

}  // namespace

const std::array<std::pair<double, double>, 5> scenario1_quintiles = {{
    {2.00, 2.26},
    {2.26, 2.53},
    {2.53, 2.84},
    {2.84, 3.29},
    {3.29, 5.09},
}};

SimDraw gen_scenario1(int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_scenario1: n too small");
  Rng rng(mix_seed(seed, 101));
  const std::size_t un = static_cast<std::size_t>(n);

  SimDraw out;
  Matrix X(un, 7);
  std::vector<double> A(un);
  out.m0.resize(un);
  out.m1.resize(un);
  out.y0.resize(un);
  out.y1.resize(un);
  out.true_propensity.resize(un);

  // Per unit: seven covariates, intermediate noise, outcome noise, then the
  // treatment uniform, in that order.
  for (std::size_t i = 0; i < un; ++i) {
    double x[7];
    for (double& v : x) v = rng.normal();
    const double psi = rng.normal(0.0, 0.1);
    const double eps = rng.normal(0.0, 0.3);
    const double u = rng.uniform();
    for (int j = 0; j < 7; ++j) X(i, j) = x[j];

    const double delta = 2.0 + std::fabs(x[4]);
    const double m_base = 0.5 * h1(x[0]) + 0.5 * h2(x[1]) + std::fabs(x[2] + 1.0) +
                          1.5 * x[3] - std::exp(0.3 * x[4]);
    out.m0[i] = m_base + psi;
    out.m1[i] = m_base + delta + psi;

    const double y_base = h1(x[0]) + 1.5 * h2(x[1]) + 2.0 * std::fabs(x[2] + 1.0) +
                          2.0 * x[3] + std::exp(0.5 * x[4]) - 0.5 * std::fabs(x[5]) -
                          std::fabs(x[6] + 1.0);
    out.y0[i] = y_base + eps;
    out.y1[i] = y_base - delta * delta + eps;

    const double score = 0.5 + h1(x[0]) + h2(x[1]) - 0.5 * std::fabs(x[2] - 1.0) +
                         1.5 * x[3] * x[4];
    out.true_propensity[i] = norm_cdf(score);
    A[i] = u < out.true_propensity[i] ? 1.0 : 0.0;
  }
  out.data = assemble(std::move(X), std::move(A), out.m0, out.m1, out.y0, out.y1);
  return out;
}

double true_pce_oracle(const StratumInterval& interval, std::int64_t n_mc,
                       std::uint64_t seed) {
  if (n_mc < 100000) throw std::invalid_argument("true_pce_oracle: n_mc too small");
  Rng rng(mix_seed(seed, 202));
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < n_mc; ++i) {
    const double delta = 2.0 + std::fabs(rng.normal());
    if (interval.contains(delta)) {
      total -= delta * delta;
      ++count;
    }
  }
  if (count == 0) throw std::runtime_error("true_pce_oracle: interval has no support");
  return total / static_cast<double>(count);
}

SimDraw gen_targeted_selection(int n, const TargetedSelectionConfig& config,
                               std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_targeted_selection: n too small");
  if (config.n_covariates < 3) {
    throw std::invalid_argument("gen_targeted_selection: need at least three covariates");
  }
  Rng rng(mix_seed(seed, 303));
  const std::size_t un = static_cast<std::size_t>(n);
  const std::size_t p = static_cast<std::size_t>(config.n_covariates);

  SimDraw out;
  Matrix X(un, p);
  std::vector<double> prognostic(un), delta(un), psi(un), eps(un);
  for (std::size_t i = 0; i < un; ++i) {
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.normal();
    psi[i] = rng.normal(0.0, config.m_noise_sd);
    eps[i] = rng.normal(0.0, config.y_noise_sd);
    double mu = 1.0 + std::fabs(X(i, 0)) + 1.5 * std::sin(X(i, 1));
    if (p >= 5) mu += 0.5 * X(i, 2) * X(i, 3);
    prognostic[i] = mu;
    delta[i] = config.m_effect_base + config.m_effect_het * std::fabs(X(i, 1));
  }

  double mean = 0.0;
  for (double v : prognostic) mean += v;
  mean /= static_cast<double>(un);
  double ss = 0.0;
  for (double v : prognostic) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(un - 1));

  std::vector<double> A(un);
  out.m0.resize(un);
  out.m1.resize(un);
  out.y0.resize(un);
  out.y1.resize(un);
  out.true_propensity.resize(un);
  for (std::size_t i = 0; i < un; ++i) {
    const double mu = prognostic[i];
    out.m0[i] = 0.4 * mu + 0.7 * X(i, 0) + psi[i];
    out.m1[i] = out.m0[i] + delta[i];
    out.y0[i] = mu + eps[i];
    out.y1[i] = mu - config.y_effect_curvature * delta[i] * delta[i] + eps[i];
    // The last covariate enters only the selection score, keeping treatment
    // stochastic even with selection strength 0.
    const double z = sd > 0.0 ? (mu - mean) / sd : 0.0;
    const double score = config.selection_strength * z + 0.25 * X(i, p - 1);
    out.true_propensity[i] = norm_cdf(score);
    A[i] = rng.uniform() < out.true_propensity[i] ? 1.0 : 0.0;
  }
  out.data = assemble(std::move(X), std::move(A), out.m0, out.m1, out.y0, out.y1);
  return out;
}

}  // namespace bpcf
