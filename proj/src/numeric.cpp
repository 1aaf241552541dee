#include "wedgefe/numeric.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace wedgefe {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Acklam's rational approximation, polished with one Halley step on erfc.
double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("norm_quantile: p must be in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  for (int it = 0; it < 2; ++it) {
    double e = norm_cdf(x) - p;
    double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    x = x - u / (1 + x * u / 2);
  }
  return x;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  const int max_it = 300;
  const double eps = std::numeric_limits<double>::epsilon();
  const double fpmin = std::numeric_limits<double>::min() / eps;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_it; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return h;
}

}  // namespace

double ibeta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw std::domain_error("ibeta: a,b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  double bt = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0))
    return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double ibeta_inv(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("ibeta_inv: p must be in [0,1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0, hi = 1.0, x = 0.5;
  double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  for (int it = 0; it < 200; ++it) {
    double f = ibeta(a, b, x) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    double dens = std::exp(lbeta + (a - 1) * std::log(x) + (b - 1) * std::log1p(-x));
    double step = f / dens;
    double xn = x - step;
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::fabs(xn - x) < 1e-14 * (1 + std::fabs(x))) return xn;
    x = xn;
  }
  return x;
}

double t_cdf(double t, double df) {
  if (!(df > 0)) throw std::domain_error("t_cdf: df must be > 0");
  double x = df / (df + t * t);
  double p = 0.5 * ibeta(df / 2.0, 0.5, x);
  return t > 0 ? 1.0 - p : p;
}

double t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("t_quantile: p must be in (0,1)");
  if (!(df > 0)) throw std::domain_error("t_quantile: df must be > 0");
  if (p == 0.5) return 0.0;
  bool upper = p > 0.5;
  double pp = upper ? p : 1.0 - p;
  double lo = 0.0, hi = 1.0;
  while (t_cdf(hi, df) < pp) {
    hi *= 2.0;
    if (hi > 1e12) break;
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (t_cdf(mid, df) < pp)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12 * (1.0 + hi)) break;
  }
  double t = 0.5 * (lo + hi);
  return upper ? t : -t;
}

GaussHermite gauss_hermite_normal(int n) {
  if (n < 1) throw std::domain_error("gauss_hermite_normal: n must be >= 1");
  Matrix jac = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double off = std::sqrt(k / 2.0);
    jac(k, k - 1) = off;
    jac(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
  GaussHermite gh;
  gh.nodes = es.eigenvalues() * std::sqrt(2.0);
  gh.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    double v = es.eigenvectors()(0, k);
    gh.weights[k] = v * v;  // weights sum to 1 after normalization
  }
  gh.weights /= gh.weights.sum();
  return gh;
}

}  // namespace wedgefe
