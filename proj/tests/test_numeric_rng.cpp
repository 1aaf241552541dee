#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "wedgefe/numeric.hpp"
#include "wedgefe/rng.hpp"

using namespace wedgefe;

TEST_CASE("normal quantile and cdf") {
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-9));
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(norm_cdf(norm_quantile(0.123)) == doctest::Approx(0.123).epsilon(1e-12));
  CHECK_THROWS(norm_quantile(0.0));
}

TEST_CASE("t distribution") {
  CHECK(t_quantile(0.975, 4) == doctest::Approx(2.7764451052).epsilon(1e-8));
  CHECK(t_quantile(0.975, 10) == doctest::Approx(2.2281388520).epsilon(1e-8));
  CHECK(t_quantile(0.975, 98) == doctest::Approx(1.9844674545).epsilon(1e-7));
  CHECK(t_quantile(0.025, 4) == doctest::Approx(-2.7764451052).epsilon(1e-8));
  CHECK(t_cdf(t_quantile(0.9, 7), 7) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("incomplete beta") {
  CHECK(ibeta(2, 2, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ibeta(6, 4, ibeta_inv(6, 4, 0.37)) == doctest::Approx(0.37).epsilon(1e-10));
  CHECK(ibeta(0.5, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("gauss hermite normal moments") {
  auto gh = gauss_hermite_normal(40);
  double m2 = 0, m4 = 0;
  for (int i = 0; i < gh.nodes.size(); ++i) {
    m2 += gh.weights[i] * gh.nodes[i] * gh.nodes[i];
    m4 += gh.weights[i] * std::pow(gh.nodes[i], 4);
  }
  CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m4 == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("rng determinism and substreams") {
  Rng a{1, 2, 3};
  Rng b{1, 2, 3};
  Rng c{1, 2, 4};
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.uniform() == b.uniform());
  CHECK(a.next_u64() != c.next_u64());
}

TEST_CASE("sampler moments") {
  Rng rng{42};
  const int n = 200000;

  SUBCASE("normal") {
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      double v = rng.normal();
      s += v;
      s2 += v * v;
    }
    CHECK(s / n == doctest::Approx(0.0).epsilon(0.02));
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
  }

  SUBCASE("poisson small and large lambda") {
    for (double lam : {3.0, 35.0, 100.0, 1600.0}) {
      double s = 0, s2 = 0;
      int nn = lam > 500 ? 50000 : n;
      for (int i = 0; i < nn; ++i) {
        double v = static_cast<double>(rng.poisson(lam));
        s += v;
        s2 += v * v;
      }
      double mean = s / nn, var = s2 / nn - mean * mean;
      CHECK(mean == doctest::Approx(lam).epsilon(0.02));
      CHECK(var == doctest::Approx(lam).epsilon(0.06));
    }
  }

  SUBCASE("ptrd matches exact small-lambda tail probabilities at the cutover") {
    // lambda just above/below the method switch should give the same law
    double lam = 10.0;
    int below = 0, above = 0;
    for (int i = 0; i < n; ++i) {
      if (rng.poisson(lam - 0.01) <= 7) ++below;
      if (rng.poisson(lam + 0.01) <= 7) ++above;
    }
    // P(Pois(10) <= 7) = 0.2202
    CHECK(below / double(n) == doctest::Approx(0.2206).epsilon(0.03));
    CHECK(above / double(n) == doctest::Approx(0.2198).epsilon(0.03));
  }

  SUBCASE("gamma, beta, negative binomial") {
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      double v = rng.gamma(0.5, 200.0);
      s += v;
      s2 += v * v;
    }
    CHECK(s / n == doctest::Approx(100.0).epsilon(0.03));
    CHECK(s2 / n - std::pow(s / n, 2) == doctest::Approx(20000.0).epsilon(0.08));

    s = 0;
    for (int i = 0; i < n; ++i) s += rng.beta(6, 4);
    CHECK(s / n == doctest::Approx(0.6).epsilon(0.01));

    s = 0;
    s2 = 0;
    for (int i = 0; i < n; ++i) {
      double v = static_cast<double>(rng.neg_binomial_mean(50.0, 10.0));
      s += v;
      s2 += v * v;
    }
    CHECK(s / n == doctest::Approx(10.0).epsilon(0.02));
    CHECK(s2 / n - std::pow(s / n, 2) == doctest::Approx(12.0).epsilon(0.08));
  }

  SUBCASE("truncated poisson is >= 1") {
    for (int i = 0; i < 1000; ++i) CHECK(rng.poisson_truncated_positive(0.5) >= 1);
  }
}
