#include "wedgefe/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace wedgefe {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t x = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t k : keys) {
    x ^= splitmix64(k = k + 0x9e3779b97f4a7c15ULL);
    (void)splitmix64(x);
  }
  for (auto& si : s_) si = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform(), u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double th = 2.0 * M_PI * u2;
  spare_ = r * std::sin(th);
  have_spare_ = true;
  return r * std::cos(th);
}

// Marsaglia-Tsang
double Rng::gamma(double shape, double scale) {
  if (!(shape > 0 && scale > 0)) throw std::domain_error("gamma: shape/scale must be > 0");
  if (shape < 1.0) {
    double u = uniform();
    return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

double Rng::beta(double a, double b) {
  double x = gamma(a, 1.0);
  double y = gamma(b, 1.0);
  return x / (x + y);
}

long Rng::poisson_knuth(double lambda) {
  const double limit = std::exp(-lambda);
  long k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > limit);
  return k - 1;
}

// Hoermann's transformed rejection (PTRD), valid for lambda >= 10.
long Rng::poisson_ptrd(double lambda) {
  const double smu = std::sqrt(lambda);
  const double b = 0.931 + 2.53 * smu;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  const double log_lambda = std::log(lambda);
  for (;;) {
    double u = uniform() - 0.5;
    double v = uniform();
    double us = 0.5 - std::fabs(u);
    long k = static_cast<long>(std::floor((2.0 * a / us + b) * u + lambda + 0.43));
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0 || (us < 0.013 && v > us)) continue;
    double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
    double rhs = k * log_lambda - lambda - std::lgamma(static_cast<double>(k) + 1.0);
    if (lhs <= rhs) return k;
  }
}

long Rng::poisson(double lambda) {
  if (lambda < 0) throw std::domain_error("poisson: lambda must be >= 0");
  if (lambda == 0) return 0;
  if (lambda < 10.0) return poisson_knuth(lambda);
  return poisson_ptrd(lambda);
}

long Rng::poisson_truncated_positive(double lambda) {
  for (;;) {
    long k = poisson(lambda);
    if (k >= 1) return k;
  }
}

long Rng::neg_binomial_mean(double r, double mean) {
  if (mean <= 0) return 0;
  double lam = gamma(r, mean / r);
  return poisson(lam);
}

int Rng::bernoulli(double p) { return uniform() < p ? 1 : 0; }

}  // namespace wedgefe
