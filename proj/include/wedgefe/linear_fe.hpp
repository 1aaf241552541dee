#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wedgefe/data.hpp"

namespace wedgefe {

// Column layout shared by the linear and log-link fits:
//   [ period indicators j = 2..J_data | treatment block | covariates ]
// (period 1 is the reference; the cluster intercept is absorbed/profiled).
struct FitLayout {
  TreatmentStructure structure;
  int J_data = 0;
  int n_period_cols = 0;
  int treat_dim = 0;
  int p = 0;
  int ncols() const { return n_period_cols + treat_dim + p; }
  int period_col(int j) const { return j - 2; }
  int treat_offset() const { return n_period_cols; }
  int cov_offset() const { return n_period_cols + treat_dim; }
  std::vector<std::string> labels(const TrialDesign& design) const;
};

FitLayout make_layout(const TrialData& data, TreatmentStructure structure);

// Whether the fit must drop period J first (SW period-specific/saturated).
bool needs_period_drop(const TrialDesign& design, TreatmentStructure structure);

struct WithinTransform {
  Vector y;  // centered outcome
  Matrix Q;  // centered design block
};
WithinTransform within_transform(const ClusterBlock& block);

struct LinearFitResult {
  FitLayout layout;
  std::vector<int> cluster_ids;
  std::vector<int> sequence;           // z per cluster
  Vector beta;                         // full layout; dropped columns are 0
  std::vector<bool> kept;              // per column of the full layout
  std::vector<int> kept_index;         // kept column -> full column
  Vector alpha;                        // recovered cluster intercepts
  Vector residuals;                    // per row of the fitting data
  Matrix per_cluster_score;            // m x k (kept columns)
  Matrix bread;                        // (1/m) sum Qc_i' Qc_i, k x k
  std::vector<Matrix> cluster_gram;    // A_i = Qc_i' Qc_i per cluster
  std::vector<Vector> cluster_moment;  // b_i = Qc_i' yc_i per cluster
  double score_norm = 0.0;             // ||sum_i psi_i||_inf at beta-hat
  int m = 0;
  int n = 0;

  double coefficient(int full_col) const { return beta[full_col]; }
  // Map a full-layout contrast to kept coordinates; entries on dropped
  // columns must be zero.
  Vector contrast_kept(const Vector& c_full) const;
  nlohmann::json to_json(const TrialDesign& design) const;
};

// Ordinary least squares on the stacked within-transformed blocks, working
// independence. For SW period-specific/saturated structures, period J is
// dropped first.
LinearFitResult fit_linear_fe(const TrialData& data, TreatmentStructure structure);

struct PeriodAverage {
  double value;
  Vector contrast;  // full layout
};
// Equal-weight average over the identified treatment coefficients
// (D-avg / P-avg / S-avg depending on the fitted structure).
PeriodAverage period_average(const LinearFitResult& fit);

}  // namespace wedgefe
