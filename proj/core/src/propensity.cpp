#include "bpcf/propensity.hpp"

#include <cmath>

namespace bpcf {

namespace {

// Cholesky solve of the (p x p) SPD system G x = b, in place.
std::vector<double> solve_spd(std::vector<double> G, std::vector<double> b, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    double d = G[j * p + j];
    for (std::size_t k = 0; k < j; ++k) d -= G[j * p + k] * G[j * p + k];
    if (!(d > 1e-12)) throw std::runtime_error("fit_logistic: singular information matrix");
    const double L = std::sqrt(d);
    G[j * p + j] = L;
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = G[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= G[i * p + k] * G[j * p + k];
      G[i * p + j] = s / L;
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= G[i * p + k] * b[k];
    b[i] = s / G[i * p + i];
  }
  for (std::size_t ii = p; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < p; ++k) s -= G[k * p + ii] * b[k];
    b[ii] = s / G[ii * p + ii];
  }
  return b;
}

}  // namespace

LogisticFit fit_logistic(const Matrix& X, std::span<const double> A,
                         double tol, int max_iter) {
  const std::size_t n = X.rows(), p = X.cols();
  if (A.size() != n || n == 0) throw std::invalid_argument("fit_logistic: shape mismatch");
  for (double a : A) {
    if (a != 0.0 && a != 1.0) throw std::invalid_argument("fit_logistic: labels must be 0/1");
  }

  // Standardize columns for conditioning; map back at the end.
  std::vector<double> mean(p, 0.0), sd(p, 1.0);
  for (std::size_t j = 0; j < p; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += X(i, j);
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (X(i, j) - m) * (X(i, j) - m);
    const double s = std::sqrt(ss / static_cast<double>(n > 1 ? n - 1 : 1));
    mean[j] = m;
    if (!(s > 0.0)) throw std::runtime_error("fit_logistic: constant covariate column");
    sd[j] = s;
  }
  Matrix Z(n, p + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Z(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) Z(i, j + 1) = (X(i, j) - mean[j]) / sd[j];
  }

  const std::size_t q = p + 1;
  std::vector<double> beta(q, 0.0), grad(q), eta(n), prob(n);
  LogisticFit fit;
  for (int iter = 1; iter <= max_iter; ++iter) {
    fit.iterations = iter;
    double eta_max = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < q; ++j) e += Z(i, j) * beta[j];
      eta[i] = e;
      prob[i] = 1.0 / (1.0 + std::exp(-e));
      eta_max = std::max(eta_max, std::fabs(e));
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = A[i] - prob[i];
      for (std::size_t j = 0; j < q; ++j) grad[j] += Z(i, j) * r;
    }
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::fabs(g));
    if (gmax < tol) {
      fit.converged = true;
      break;
    }
    if (eta_max > 30.0) {
      throw SeparationError(
          "fit_logistic: separation detected (diverging linear predictor); "
          "consider penalized estimation or dropping the separating covariate");
    }
    std::vector<double> info(q * q, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = prob[i] * (1.0 - prob[i]);
      for (std::size_t j = 0; j < q; ++j) {
        const double zw = Z(i, j) * w;
        for (std::size_t k = 0; k <= j; ++k) info[j * q + k] += zw * Z(i, k);
      }
    }
    for (std::size_t j = 0; j < q; ++j) {
      for (std::size_t k = j + 1; k < q; ++k) info[j * q + k] = info[k * q + j];
    }
    const std::vector<double> step = solve_spd(std::move(info), grad, q);
    for (std::size_t j = 0; j < q; ++j) beta[j] += step[j];
  }

  fit.coefficients.resize(q);
  double intercept = beta[0];
  for (std::size_t j = 0; j < p; ++j) {
    fit.coefficients[j + 1] = beta[j + 1] / sd[j];
    intercept -= beta[j + 1] * mean[j] / sd[j];
  }
  fit.coefficients[0] = intercept;
  return fit;
}

std::vector<double> predict_propensity(const LogisticFit& fit, const Matrix& X,
                                       double clip) {
  if (!(clip > 0.0 && clip < 0.5)) {
    throw std::invalid_argument("predict_propensity: clip must lie in (0, 0.5)");
  }
  if (fit.coefficients.size() != X.cols() + 1) {
    throw std::invalid_argument("predict_propensity: coefficient count mismatch");
  }
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double e = fit.coefficients[0];
    for (std::size_t j = 0; j < X.cols(); ++j) e += fit.coefficients[j + 1] * X(i, j);
    const double p = 1.0 / (1.0 + std::exp(-e));
    out[i] = std::min(1.0 - clip, std::max(clip, p));
  }
  return out;
}

}  // namespace bpcf
