#include "wedgefe/inference.hpp"

#include <cmath>
#include <stdexcept>

#include "wedgefe/numeric.hpp"

namespace wedgefe {

Matrix influence_rows(const Matrix& scores, const Matrix& bread) {
  const int k = static_cast<int>(bread.rows());
  Eigen::FullPivLU<Matrix> lu(bread);
  if (!lu.isInvertible()) {
    Eigen::JacobiSVD<Matrix> svd(bread);
    double cond = svd.singularValues()(0) / svd.singularValues()(k - 1);
    throw std::runtime_error("sandwich_cr0: bread matrix is singular (condition number " +
                             std::to_string(cond) + ")");
  }
  return lu.solve(scores.transpose()).transpose();
}

Matrix sandwich_cr0(const Matrix& scores, const Matrix& bread) {
  const int m = static_cast<int>(scores.rows());
  Matrix inf = influence_rows(scores, bread);
  return (inf.transpose() * inf) / (static_cast<double>(m) * m);
}

namespace {

void check_jackknife_m(int m) {
  if (m < 3)
    throw std::runtime_error("jackknife: needs m >= 3 clusters for the t(m-2) reference");
}

}  // namespace

JackknifeResult jackknife_linear_contrast(const LinearFitResult& fit, const Vector& c_full) {
  check_jackknife_m(fit.m);
  const Vector ck = fit.contrast_kept(c_full);
  const int k = static_cast<int>(ck.size());
  Matrix A = Matrix::Zero(k, k);
  Vector b = Vector::Zero(k);
  for (int i = 0; i < fit.m; ++i) {
    A += fit.cluster_gram[i];
    b += fit.cluster_moment[i];
  }
  JackknifeResult out;
  out.df = fit.m - 2;
  out.loo.resize(fit.m);
  for (int i = 0; i < fit.m; ++i) {
    Matrix Ai = A - fit.cluster_gram[i];
    Vector bi = b - fit.cluster_moment[i];
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ai);
    cod.setThreshold(1e-10);
    if (cod.rank() < k)
      throw std::runtime_error("jackknife: leave-one-out fit without cluster " +
                               std::to_string(fit.cluster_ids[i]) + " is rank deficient");
    out.loo[i] = ck.dot(cod.solve(bi));
  }
  Vector ck_full = ck;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_full(A);
  out.estimate = ck_full.dot(cod_full.solve(b));
  const double center = out.loo.mean();
  out.variance = (fit.m - 1.0) / fit.m * (out.loo.array() - center).square().sum();
  return out;
}

JackknifeMatrixResult jackknife_linear_beta(const LinearFitResult& fit) {
  check_jackknife_m(fit.m);
  const int k = static_cast<int>(fit.kept_index.size());
  Matrix A = Matrix::Zero(k, k);
  Vector b = Vector::Zero(k);
  for (int i = 0; i < fit.m; ++i) {
    A += fit.cluster_gram[i];
    b += fit.cluster_moment[i];
  }
  JackknifeMatrixResult out;
  out.df = fit.m - 2;
  out.loo.resize(fit.m, k);
  for (int i = 0; i < fit.m; ++i) {
    Matrix Ai = A - fit.cluster_gram[i];
    Vector bi = b - fit.cluster_moment[i];
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ai);
    cod.setThreshold(1e-10);
    if (cod.rank() < k)
      throw std::runtime_error("jackknife: leave-one-out fit without cluster " +
                               std::to_string(fit.cluster_ids[i]) + " is rank deficient");
    out.loo.row(i) = cod.solve(bi).transpose();
  }
  Eigen::RowVectorXd center = out.loo.colwise().mean();
  Matrix dev = out.loo.rowwise() - center;
  out.variance = (fit.m - 1.0) / fit.m * (dev.transpose() * dev);
  return out;
}

TrialData subset_excluding(const TrialData& data, int cluster_id) {
  std::vector<Observation> obs;
  std::map<int, int> seq;
  for (int r = 0; r < data.n_rows(); ++r) {
    int cid = data.cluster_ids()[data.row_cluster()[r]];
    if (cid == cluster_id) continue;
    Observation o;
    o.cluster = cid;
    o.period = data.periods()[r];
    o.individual = data.individuals()[r];
    o.outcome = data.outcomes()[r];
    o.covariates.resize(data.p());
    for (int k = 0; k < data.p(); ++k) o.covariates[k] = data.covariates()(r, k);
    obs.push_back(std::move(o));
  }
  for (int cid : data.cluster_ids())
    if (cid != cluster_id) seq[cid] = data.sequence_of(cid);
  return TrialData(data.design(), std::move(obs), std::move(seq), data.p());
}

JackknifeResult jackknife(const TrialData& data,
                          const std::function<double(const TrialData&)>& estimator) {
  check_jackknife_m(data.m());
  JackknifeResult out;
  out.df = data.m() - 2;
  out.loo.resize(data.m());
  out.estimate = estimator(data);
  for (int i = 0; i < data.m(); ++i) {
    const int cid = data.cluster_ids()[i];
    try {
      out.loo[i] = estimator(subset_excluding(data, cid));
    } catch (const std::exception& e) {
      throw std::runtime_error("jackknife: estimator failed without cluster " +
                               std::to_string(cid) + ": " + e.what());
    }
  }
  const double center = out.loo.mean();
  out.variance = (data.m() - 1.0) / data.m() * (out.loo.array() - center).square().sum();
  return out;
}

double normal_ci_halfwidth(double se) { return norm_quantile(0.975) * se; }
double t_ci_halfwidth(double se, int df) { return t_quantile(0.975, df) * se; }

nlohmann::json ContrastInference::to_json() const {
  nlohmann::json j{{"estimate", estimate}, {"df_t", df}};
  if (se_cr0) {
    j["se_cr0"] = *se_cr0;
    j["ci_normal"] = {ci_normal_lo, ci_normal_hi};
  }
  if (se_jk) {
    j["se_jk"] = *se_jk;
    j["ci_t"] = {ci_t_lo, ci_t_hi};
  }
  return j;
}

ContrastInference contrast_inference(const Vector& theta, const Vector& c,
                                     const std::optional<Matrix>& cov_cr0,
                                     const std::optional<Matrix>& cov_jk, int m) {
  if (c.size() != theta.size())
    throw std::invalid_argument("contrast_inference: contrast length mismatch");
  ContrastInference out;
  out.estimate = c.dot(theta);
  out.df = m - 2;
  if (cov_cr0) {
    out.se_cr0 = std::sqrt(std::max(0.0, c.dot(*cov_cr0 * c)));
    double h = normal_ci_halfwidth(*out.se_cr0);
    out.ci_normal_lo = out.estimate - h;
    out.ci_normal_hi = out.estimate + h;
  }
  if (cov_jk) {
    out.se_jk = std::sqrt(std::max(0.0, c.dot(*cov_jk * c)));
    double h = t_ci_halfwidth(*out.se_jk, out.df);
    out.ci_t_lo = out.estimate - h;
    out.ci_t_hi = out.estimate + h;
  }
  return out;
}

}  // namespace wedgefe
