#pragma once

#include <Eigen/Dense>
#include <utility>

namespace wedgefe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Standard normal CDF and quantile.
double norm_cdf(double x);
double norm_quantile(double p);

// Regularized incomplete beta I_x(a, b) and its inverse in x.
double ibeta(double a, double b, double x);
double ibeta_inv(double a, double b, double p);

// Student t distribution with (possibly non-integer) df > 0.
double t_cdf(double t, double df);
double t_quantile(double p, double df);

// Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1):
//   E[f(Z)] ~= sum_k weights[k] * f(nodes[k])
// (physicists' nodes already rescaled by sqrt(2), weights normalized).
struct GaussHermite {
  Vector nodes;
  Vector weights;
};
GaussHermite gauss_hermite_normal(int n);

}  // namespace wedgefe
