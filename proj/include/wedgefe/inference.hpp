#pragma once

#include <functional>
#include <optional>

#include "wedgefe/linear_fe.hpp"

namespace wedgefe {

// CR0 cluster-robust covariance of theta-hat from per-cluster estimating
// function rows and the averaged derivative (bread) matrix:
//   Cov(theta-hat) = (1/m) * m^{-1} sum_i IF_i IF_i',  IF_i = bread^{-1} psi_i.
Matrix sandwich_cr0(const Matrix& scores, const Matrix& bread);
Matrix influence_rows(const Matrix& scores, const Matrix& bread);

struct JackknifeResult {
  double estimate = 0.0;          // full-sample value of the target
  double variance = 0.0;          // ((m-1)/m) sum (theta_(-i) - mean)^2
  int df = 0;                     // m - 2
  Vector loo;                     // leave-one-out estimates, cluster order
};

// Leave-one-cluster-out jackknife of a linear-FE contrast, computed exactly
// from the per-cluster Gram/moment blocks (identical to refitting without the
// cluster, since within-centering never crosses clusters).
JackknifeResult jackknife_linear_contrast(const LinearFitResult& fit, const Vector& c_full);

// Full-vector analogue: covariance matrix over kept coefficients.
struct JackknifeMatrixResult {
  Matrix variance;  // k x k
  Matrix loo;       // m x k
  int df = 0;
};
JackknifeMatrixResult jackknife_linear_beta(const LinearFitResult& fit);

// Generic leave-one-cluster-out jackknife: re-runs an arbitrary estimator on
// each subset. Estimator failures are reported with the offending cluster.
JackknifeResult jackknife(const TrialData& data,
                          const std::function<double(const TrialData&)>& estimator);

// Data with one cluster removed.
TrialData subset_excluding(const TrialData& data, int cluster_id);

struct ContrastInference {
  double estimate = 0.0;
  std::optional<double> se_cr0;
  std::optional<double> se_jk;
  double ci_normal_lo = 0.0, ci_normal_hi = 0.0;  // CR0 + normal
  double ci_t_lo = 0.0, ci_t_hi = 0.0;            // jackknife + t(m-2)
  int df = 0;
  nlohmann::json to_json() const;
};

// c' theta with variance c' V c under the supplied covariance estimates.
ContrastInference contrast_inference(const Vector& theta, const Vector& c,
                                     const std::optional<Matrix>& cov_cr0,
                                     const std::optional<Matrix>& cov_jk, int m);

double normal_ci_halfwidth(double se);
double t_ci_halfwidth(double se, int df);

}  // namespace wedgefe
