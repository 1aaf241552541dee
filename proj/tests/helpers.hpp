#pragma once

#include <functional>
#include <map>
#include <vector>

#include "wedgefe/data.hpp"
#include "wedgefe/linear_fe.hpp"
#include "wedgefe/rng.hpp"

namespace testutil {

using wedgefe::Matrix;
using wedgefe::Vector;

// Builds long-format data: outcome_fn(i, j, k, x) with covariates from cov_fn.
inline wedgefe::TrialData make_data(
    const wedgefe::TrialDesign& design, const std::vector<int>& z_per_cluster,
    const std::function<int(int, int)>& size_fn,  // (cluster, period) -> N_ij
    int p, const std::function<std::vector<double>(int, int, int)>& cov_fn,
    const std::function<double(int, int, int, const std::vector<double>&)>& outcome_fn) {
  std::vector<wedgefe::Observation> obs;
  std::map<int, int> seq;
  for (size_t i = 0; i < z_per_cluster.size(); ++i) {
    int cid = static_cast<int>(i) + 1;
    seq[cid] = z_per_cluster[i];
    for (int j = 1; j <= design.J(); ++j) {
      int nij = size_fn(static_cast<int>(i), j);
      for (int k = 1; k <= nij; ++k) {
        auto x = cov_fn(static_cast<int>(i), j, k);
        double y = outcome_fn(static_cast<int>(i), j, k, x);
        obs.push_back({cid, j, k, y, x});
      }
    }
  }
  return wedgefe::TrialData(design, std::move(obs), std::move(seq), p);
}

struct RandomInstance {
  wedgefe::TrialDesign design;
  wedgefe::TrialData data;
  wedgefe::TreatmentStructure structure;
};

// Random complete design + continuous data, m in [3,10], per-cell sizes in
// [1, 20], p in [0, 3]; covariates vary within cluster so the dummy-variable
// oracle stays full rank.
inline RandomInstance random_instance(std::uint64_t seed, bool count_outcomes = false) {
  wedgefe::Rng rng{seed, 777};
  int kind_pick = static_cast<int>(rng.uniform() * 3);
  wedgefe::TrialDesign design = [&] {
    switch (kind_pick) {
      case 0: {
        int J = 3 + static_cast<int>(rng.uniform() * 3);  // 3..5
        int nseq = J - 1;
        int cps = 1 + static_cast<int>(rng.uniform() * (10 / nseq - 1 + 1));
        return wedgefe::TrialDesign::stepped_wedge(J, std::max(1, cps));
      }
      case 1: {
        int J = 2 + static_cast<int>(rng.uniform() * 3);  // 2..4
        int cps = 2 + static_cast<int>(rng.uniform() * 4);  // m = 4..10
        return wedgefe::TrialDesign::parallel_baseline(J, cps);
      }
      default: {
        int J = 2 * (1 + static_cast<int>(rng.uniform() * 3));  // 2,4,6
        int cps = 2 + static_cast<int>(rng.uniform() * 4);
        return wedgefe::TrialDesign::crossover(J, cps);
      }
    }
  }();
  std::vector<wedgefe::TreatmentStructure> valid = {wedgefe::TreatmentStructure::Constant,
                                                    wedgefe::TreatmentStructure::DurationSpecific};
  if (design.kind() != wedgefe::DesignKind::Crossover) {
    valid.push_back(wedgefe::TreatmentStructure::PeriodSpecific);
    valid.push_back(wedgefe::TreatmentStructure::Saturated);
  }
  auto structure = valid[static_cast<int>(rng.uniform() * valid.size())];
  int p = static_cast<int>(rng.uniform() * 4);  // 0..3
  std::vector<int> z;
  for (int s : design.sequences())
    for (int c = 0; c < design.clusters_per_sequence(); ++c) z.push_back(s);

  auto data = make_data(
      design, z, [&](int, int) { return 1 + static_cast<int>(rng.uniform() * 20); }, p,
      [&](int, int, int) {
        std::vector<double> x(p);
        for (auto& v : x) v = rng.normal();
        return x;
      },
      [&](int i, int j, int, const std::vector<double>& x) {
        double lin = 0.3 * j + 0.5 * (i % 3) + 0.8 * (wedgefe::exposure_duration(design, j, z[i]) > 0);
        for (double v : x) lin += 0.2 * v;
        if (count_outcomes) return static_cast<double>(rng.poisson(std::exp(0.2 * lin) + 0.5));
        return lin + rng.normal();
      });
  return {design, std::move(data), structure};
}

// Explicit cluster-dummy OLS oracle, same coefficient layout as the library
// fit (cluster dummies appended last).
inline Vector dummy_ols(const wedgefe::TrialData& data, wedgefe::TreatmentStructure structure) {
  const auto& design = data.design();
  wedgefe::FitLayout layout = wedgefe::make_layout(data, structure);
  const int k = layout.ncols();
  const int m = data.m();
  const int n = data.n_rows();
  Matrix X = Matrix::Zero(n, k + m);
  Vector y(n);
  int row = 0;
  for (int i = 0; i < m; ++i) {
    auto blk = wedgefe::cluster_view(data, data.cluster_ids()[i], structure);
    for (int r = 0; r < blk.Q.rows(); ++r) {
      X.block(row, 0, 1, k) = blk.Q.row(r);
      X(row, k + i) = 1.0;
      y[row] = blk.y[r];
      ++row;
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  Vector full = qr.solve(y);
  return full.head(k);
}

// Explicit-dummy Poisson maximum likelihood (joint Newton over beta and the
// cluster intercepts), independent of the concentrated route.
inline Vector dummy_poisson(const wedgefe::TrialData& data,
                            wedgefe::TreatmentStructure structure, int max_iter = 200) {
  wedgefe::FitLayout layout = wedgefe::make_layout(data, structure);
  const int k = layout.ncols();
  const int m = data.m();
  const int n = data.n_rows();
  Matrix X = Matrix::Zero(n, k + m);
  Vector y(n);
  int row = 0;
  for (int i = 0; i < m; ++i) {
    auto blk = wedgefe::cluster_view(data, data.cluster_ids()[i], structure);
    for (int r = 0; r < blk.Q.rows(); ++r) {
      X.block(row, 0, 1, k) = blk.Q.row(r);
      X(row, k + i) = 1.0;
      y[row] = blk.y[r];
      ++row;
    }
  }
  Vector theta = Vector::Zero(k + m);
  for (int i = 0; i < m; ++i) theta[k + i] = std::log(y.mean() + 0.1);
  for (int it = 0; it < max_iter; ++it) {
    Vector eta = X * theta;
    Vector mu = eta.array().exp();
    Vector g = X.transpose() * (y - mu);
    if (g.cwiseAbs().maxCoeff() < 1e-10) break;
    Matrix H = X.transpose() * mu.asDiagonal() * X;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(H);
    cod.setThreshold(1e-12);
    theta += cod.solve(g);
  }
  return theta.head(k);
}

}  // namespace testutil
