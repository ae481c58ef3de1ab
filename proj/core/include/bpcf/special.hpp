#pragma once

namespace bpcf {

double norm_pdf(double x, double mean = 0.0, double sd = 1.0);
double norm_log_pdf(double x, double mean = 0.0, double sd = 1.0);
// Standard normal CDF.
double norm_cdf(double x);
// Inverse standard normal CDF (Acklam's rational approximation plus one
// Newton polish step; absolute error well below 1e-12 on (1e-300, 1-1e-16)).
double norm_quantile(double p);

// Regularized incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x),
// series/continued-fraction evaluation, a > 0, x >= 0.
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// CDF of InvGamma(shape, scale) at x, scale in the exp(-scale/x) convention.
double inverse_gamma_cdf(double x, double shape, double scale);

// Half-Cauchy(scale) third quartile is scale * tan(3*pi/8).
double half_cauchy_q3(double scale);
// Scale whose prior third quartile equals 2 * sd.
double half_cauchy_scale_for_sd(double sd);

// Solves for lambda in the sigma^2 ~ InvGamma(nu/2, nu*lambda/2) prior so
// that P(sigma < sd) = quantile.  Bisection on the analytic CDF.
double solve_noise_lambda(double nu, double sd, double quantile);

}  // namespace bpcf
