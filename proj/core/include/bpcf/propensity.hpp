#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "bpcf/matrix.hpp"

namespace bpcf {

struct SeparationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LogisticFit {
  // coefficients[0] is the intercept, then one slope per design column, on
  // the original covariate scale.
  std::vector<double> coefficients;
  bool converged = false;
  int iterations = 0;
};

// Newton-scoring logistic regression of A on [1, X].  Covariates are
// standardized internally; coefficients are reported on the input scale.
// Throws SeparationError when the fit diverges (perfectly separable data)
// and std::runtime_error on a singular information matrix.
LogisticFit fit_logistic(const Matrix& X, std::span<const double> A,
                         double tol = 1e-9, int max_iter = 60);

// Fitted probabilities clipped into [clip, 1 - clip]; clip in (0, 0.5).
std::vector<double> predict_propensity(const LogisticFit& fit, const Matrix& X,
                                       double clip = 0.01);

}  // namespace bpcf
