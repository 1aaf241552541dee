#pragma once

#include <cstdint>
#include <initializer_list>

namespace wedgefe {

// Counter-keyed xoshiro256++ stream. Substreams are derived by mixing a list
// of 64-bit keys (seed, replicate, purpose, ...) through splitmix64, so any
// (seed, replicate, purpose) triple addresses an independent, reproducible
// stream regardless of scheduling. All samplers below are implemented from
// raw uniforms, so output is identical across platforms.
class Rng {
 public:
  explicit Rng(std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64();
  double uniform();                     // (0, 1)
  double normal();                      // N(0, 1)
  double gamma(double shape, double scale);
  double beta(double a, double b);
  long poisson(double lambda);
  long poisson_truncated_positive(double lambda);
  long neg_binomial_mean(double r, double mean);  // NB(r, p = r/(mean+r))
  int bernoulli(double p);

 private:
  long poisson_knuth(double lambda);
  long poisson_ptrd(double lambda);

  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wedgefe
