#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bpcf/matrix.hpp"
#include "bpcf/rng.hpp"
#include "bpcf/tree.hpp"

namespace bpcf {

// sigma^2 ~ InvGamma(nu/2, nu*lambda/2).
struct NoisePrior {
  double nu = 3.0;
  double lambda = 1.0;
  // lambda chosen so that P(sigma < response_sd) = quantile.
  static NoisePrior calibrated(double response_sd, double nu = 3.0, double quantile = 0.9);
};

// Sum-of-trees function with a shared leaf-value scale sigma_0.
class Forest {
 public:
  explicit Forest(int n_trees = 0);

  int n_trees() const { return static_cast<int>(trees_.size()); }
  std::vector<Tree>& trees() { return trees_; }
  const std::vector<Tree>& trees() const { return trees_; }

  double leaf_scale() const { return leaf_scale_; }
  void set_leaf_scale(double s) { leaf_scale_ = s; }

  std::vector<double> predict(const Matrix& design) const;
  double predict_row(std::span<const double> row) const;
  // Leaf values pooled across all trees.
  std::vector<double> leaf_values() const;

  // Number of evaluate calls served, for instrumentation in tests.
  std::uint64_t eval_count() const { return eval_count_; }

 private:
  std::vector<Tree> trees_;
  double leaf_scale_ = 1.0;
  mutable std::uint64_t eval_count_ = 0;
};

// Checkpoint block: versioned header, then sigma, the leaf scale and the
// concatenated tree serializations.  Exact round-trip.
void serialize_forest(const Forest& forest, double sigma, std::ostream& os);
std::pair<Forest, double> deserialize_forest(std::istream& is);

// Log of the leaf marginal likelihood with the leaf value integrated out:
// residuals r_i ~ N(mu, sigma^2) iid, mu ~ N(0, sigma0^2).  n == 0 gives 0.
double log_marginal_leaf(int n, double sum_resid, double sum_sq_resid,
                         double sigma, double sigma0);

// Draw from sigma^2 | residuals under the NoisePrior, returning sigma.
double update_sigma(std::span<const double> residuals, const NoisePrior& prior, Rng& rng);

// One slice-sampling update of the leaf scale under a half-Cauchy(hc_scale)
// prior given the current leaf values (stepping out + shrinkage, fixed
// stepping width hc_scale).
double update_leaf_scale(std::span<const double> leaf_values, double hc_scale,
                         double current, Rng& rng);

struct SweepStats {
  std::int64_t accepted[3] = {0, 0, 0};  // indexed by MoveKind
  std::int64_t proposed[3] = {0, 0, 0};
  void add(const SweepStats& o);
  double accept_rate() const;
};

// One backfitting pass over every tree: for tree h, forms the partial
// residual response - fixed_offset - (forest prediction without tree h),
// runs one structural Metropolis-Hastings step on the integrated-leaf
// marginal, then redraws every leaf value from its conjugate normal
// posterior (prior draw for an empty leaf).  Throws on non-finite
// residuals.  sigma0 is the forest's leaf_scale().
SweepStats backfit_sweep(Forest& forest, std::span<const double> response,
                         std::span<const double> fixed_offset, const Matrix& design,
                         const CutpointGrid& grid, const TreePrior& prior,
                         double sigma, Rng& rng);

}  // namespace bpcf
