#include "bpcf/estimands.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bpcf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Interpolated empirical quantile (the common "type 7" definition).
double quantile(std::vector<double> sorted, double q) {
  const std::size_t k = sorted.size();
  if (k == 1) return sorted[0];
  const double pos = q * static_cast<double>(k - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, k - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}
}  // namespace

StratumInterval StratumInterval::whole_line() { return {-kInf, kInf, false}; }

PceEstimate pce(const PosteriorDraws& draws, const StratumInterval& interval) {
  const std::size_t R = draws.n_draws();
  const std::size_t n = draws.n_units();
  if (R == 0 || n == 0) throw std::invalid_argument("pce: empty draws");

  PceEstimate est;
  double total_effect = 0.0;
  long total_count = 0;
  for (std::size_t r = 0; r < R; ++r) {
    double effect = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = draws.m1[r][i] - draws.m0[r][i];
      if (interval.contains(delta)) {
        effect += draws.y1[r][i] - draws.y0[r][i];
        ++count;
      }
    }
    total_effect += effect;
    total_count += count;
    est.avg_stratum_n += static_cast<double>(count);
    if (count > 0) {
      est.per_draw.push_back(effect / static_cast<double>(count));
    }
  }
  est.avg_stratum_n /= static_cast<double>(R);
  est.n_draws_nonempty = static_cast<int>(est.per_draw.size());

  if (total_count == 0) {
    est.empty_stratum = true;
    est.posterior_mean = est.posterior_sd = kNaN;
    est.ci95 = {kNaN, kNaN};
    return est;
  }
  est.posterior_mean = total_effect / static_cast<double>(total_count);

  const std::size_t k = est.per_draw.size();
  double mean = 0.0;
  for (double v : est.per_draw) mean += v;
  mean /= static_cast<double>(k);
  double ss = 0.0;
  for (double v : est.per_draw) ss += (v - mean) * (v - mean);
  est.posterior_sd = k > 1 ? std::sqrt(ss / static_cast<double>(k - 1)) : 0.0;

  std::vector<double> sorted = est.per_draw;
  std::sort(sorted.begin(), sorted.end());
  est.ci95 = {quantile(sorted, 0.025), quantile(std::move(sorted), 0.975)};
  return est;
}

double intermediate_ate(const PosteriorDraws& draws) {
  const std::size_t R = draws.n_draws(), n = draws.n_units();
  if (R == 0 || n == 0) throw std::invalid_argument("intermediate_ate: empty draws");
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < n; ++i) total += draws.m1[r][i] - draws.m0[r][i];
  }
  return total / static_cast<double>(R * n);
}

std::vector<StratumInterval> intervals_from_sd_multiples(const PosteriorDraws& draws,
                                                         std::span<const double> multipliers) {
  if (multipliers.empty()) {
    throw std::invalid_argument("intervals_from_sd_multiples: no multipliers");
  }
  const std::size_t R = draws.n_draws(), n = draws.n_units();
  if (R == 0 || n == 0) throw std::invalid_argument("intervals_from_sd_multiples: empty draws");

  std::vector<double> delta_bar(n, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < n; ++i) delta_bar[i] += draws.m1[r][i] - draws.m0[r][i];
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    delta_bar[i] /= static_cast<double>(R);
    mean += delta_bar[i];
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double d : delta_bar) ss += (d - mean) * (d - mean);
  const double s = std::sqrt(ss / static_cast<double>(n > 1 ? n - 1 : 1));
  if (!(s > 0.0)) {
    throw std::invalid_argument(
        "intervals_from_sd_multiples: degenerate intermediate effects (zero spread)");
  }

  std::vector<double> bounds{0.0};
  for (double m : multipliers) {
    if (!(m > 0.0)) throw std::invalid_argument("intervals_from_sd_multiples: multipliers must be positive");
    bounds.push_back(s * m);
    bounds.push_back(-s * m);
  }
  std::sort(bounds.begin(), bounds.end());
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    if (bounds[i] == bounds[i - 1]) {
      throw std::invalid_argument("intervals_from_sd_multiples: duplicate multipliers");
    }
  }

  std::vector<StratumInterval> out;
  out.push_back({-kInf, bounds.front(), false});
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    out.push_back({bounds[i], bounds[i + 1], true});
  }
  out.push_back({bounds.back(), kInf, true});
  return out;
}

CepSurface cep_surface(const PosteriorDraws& draws, std::span<const double> m0_grid,
                       std::span<const double> m1_grid) {
  if (draws.modifier_snapshots.empty()) {
    throw std::invalid_argument(
        "cep_surface: draws carry no modifier snapshots (rerun the fit with snapshots enabled)");
  }
  if (m0_grid.empty() || m1_grid.empty()) {
    throw std::invalid_argument("cep_surface: empty evaluation grid");
  }
  const bool full = draws.modifier_mode == ModifierMode::full;
  const std::size_t p = full ? draws.snapshot_x.cols() : 0;
  const std::size_t n = full ? draws.snapshot_x.rows() : draws.n_units();
  if (n == 0) throw std::invalid_argument("cep_surface: no covariate rows stored");

  CepSurface surf;
  surf.m0_grid.assign(m0_grid.begin(), m0_grid.end());
  surf.m1_grid.assign(m1_grid.begin(), m1_grid.end());
  surf.values = Matrix(m0_grid.size(), m1_grid.size(), 0.0);

  std::vector<double> row(p + 2);
  for (const Forest& snapshot : draws.modifier_snapshots) {
    for (std::size_t i = 0; i < n; ++i) {
      if (full) {
        const auto x = draws.snapshot_x.row(i);
        std::copy(x.begin(), x.end(), row.begin());
      }
      for (std::size_t j = 0; j < m0_grid.size(); ++j) {
        row[p + 1] = m0_grid[j];
        for (std::size_t k = 0; k < m1_grid.size(); ++k) {
          row[p] = m1_grid[k];
          surf.values(j, k) += snapshot.predict_row(row);
        }
      }
    }
  }
  const double scale =
      draws.snapshot_y_sd / static_cast<double>(draws.modifier_snapshots.size() * n);
  for (std::size_t j = 0; j < m0_grid.size(); ++j) {
    for (std::size_t k = 0; k < m1_grid.size(); ++k) surf.values(j, k) *= scale;
  }

  const std::size_t R = draws.n_draws(), units = draws.n_units();
  surf.stratum_points.resize(units, {0.0, 0.0});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < units; ++i) {
      surf.stratum_points[i].first += draws.m0[r][i];
      surf.stratum_points[i].second += draws.m1[r][i];
    }
  }
  for (auto& pt : surf.stratum_points) {
    pt.first /= static_cast<double>(R);
    pt.second /= static_cast<double>(R);
  }
  return surf;
}

ReplicationMetrics replication_metrics(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw std::invalid_argument("replication_metrics: no estimates");
  ReplicationMetrics out;
  double mean = 0.0, mse = 0.0;
  for (double e : estimates) {
    mean += e;
    mse += (e - truth) * (e - truth);
  }
  mean /= static_cast<double>(estimates.size());
  out.mse = mse / static_cast<double>(estimates.size());
  out.bias = mean - truth;
  if (truth == 0.0) {
    out.rbias_defined = false;
    out.rbias = kNaN;
  } else {
    out.rbias = (mean - truth) / std::fabs(truth);
  }
  return out;
}

}  // namespace bpcf
