#pragma once

namespace mbf::special {

// Standard normal CDF, abs err well below 1e-7 (delegates to erfc).
double normal_cdf(double x);

// Standard normal density.
double normal_pdf(double x);

// Inverse of normal_cdf on (0,1); abs err <= 1e-9 after one Halley step.
// Throws std::invalid_argument outside (0,1).
double normal_quantile(double p);

// Regularized upper incomplete gamma Q(a,x) = Gamma(a,x)/Gamma(a), a>0, x>=0.
double regularized_gamma_q(double a, double x);

// Survival function of chi-square with df degrees of freedom.
double chi_square_sf(double x, double df);

}  // namespace mbf::special
