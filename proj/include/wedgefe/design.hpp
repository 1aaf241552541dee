#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

namespace wedgefe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class DesignKind { SteppedWedge, ParallelBaseline, Crossover };

enum class TreatmentStructure { Constant, DurationSpecific, PeriodSpecific, Saturated };

std::string to_string(DesignKind kind);
std::string to_string(TreatmentStructure s);
DesignKind design_kind_from_string(const std::string& s);
TreatmentStructure structure_from_string(const std::string& s);

// Complete, equally allocated longitudinal trial design. Sequences are
// represented by the initial treatment period z (z = 0: never treated);
// full treatment paths are always derived from (kind, J, z).
class TrialDesign {
 public:
  static TrialDesign stepped_wedge(int J, int clusters_per_sequence);
  static TrialDesign parallel_baseline(int J, int clusters_per_sequence);
  static TrialDesign crossover(int J, int clusters_per_sequence);
  static TrialDesign make(DesignKind kind, int J, int clusters_per_sequence);

  DesignKind kind() const { return kind_; }
  int J() const { return J_; }
  int clusters_per_sequence() const { return cps_; }
  const std::vector<int>& sequences() const { return sequences_; }
  int num_sequences() const { return static_cast<int>(sequences_.size()); }
  int num_clusters() const { return num_sequences() * cps_; }
  bool valid_sequence(int z) const;

  nlohmann::json to_json() const;
  static TrialDesign from_json(const nlohmann::json& j);

 private:
  TrialDesign(DesignKind kind, int J, int cps, std::vector<int> sequences);

  DesignKind kind_;
  int J_;
  int cps_;
  std::vector<int> sequences_;
};

// Exposure duration d at period j for a cluster on sequence z; 0 if untreated.
// Inverse of the design's z(d, j) maps (z = j-d+1 for SW, z = 2d/(j-1) for PB,
// z = j-2d+2 for XO).
int exposure_duration(DesignKind kind, int J, int j, int z);
inline int exposure_duration(const TrialDesign& d, int j, int z) {
  return exposure_duration(d.kind(), d.J(), j, z);
}

// Number of treatment coefficients for a structure under a design; throws for
// combinations the fixed-effects fit cannot identify (XO with period-specific
// or saturated structures).
int structure_dim(const TrialDesign& design, TreatmentStructure s);
bool structure_fits(const TrialDesign& design, TreatmentStructure s);

// One row of the treatment coefficient block: TE_{ij} = row . beta_Z.
// For SW period-specific/saturated structures j must be < J (period J is
// dropped before fitting).
Vector treatment_indicator_row(const TrialDesign& design, TreatmentStructure s, int j, int z);

// Labels for the treatment coefficients, in block order.
std::vector<std::string> treatment_labels(const TrialDesign& design, TreatmentStructure s);

// Calendar period and exposure duration of each treatment cell, in block order.
struct TreatmentCell {
  int index;     // position in the coefficient block
  int period;    // calendar period j the cell is identified at (0: any period)
  int duration;  // exposure duration d (0: any duration)
};
std::vector<TreatmentCell> treatment_cells(const TrialDesign& design, TreatmentStructure s);

struct TiltingWeights {
  Vector lambda;  // length J, lambda_j = pi_j^s (1 - pi_j^s)
  double sum() const { return lambda.sum(); }
};
TiltingWeights tilting_weights(const TrialDesign& design);

// Diagonal of Delta_Z (treated-in-period indicators) for sequence z.
Vector delta_z_diagonal(const TrialDesign& design, int z);
// Diagonal of Lambda_Z^d (treated for exactly d periods) for sequence z.
Vector lambda_d_diagonal(const TrialDesign& design, int z, int d);
// H_Z: J x dim(D) duration-indicator matrix for sequence z.
Matrix h_matrix(const TrialDesign& design, int z);
// Average of H_Z over the design's sequence set.
Matrix h_matrix_mean(const TrialDesign& design);
// A_d: J x dim(D), d-th column all ones.
Matrix a_matrix(const TrialDesign& design, int d);

// Per-cluster weighting matrices lambda_i(d) used by the duration-specific
// g-computation estimator,
//   lambda_i(d) = {(H_Z - E[H_Z]) (x) 1}^T diag(S_i) (Lambda_Z^d (x) 1),
// reduced to closed form on cluster-period totals N_ij.
// Returns dim(D) matrices, each dim(D) x J.
std::vector<Matrix> duration_weight_blocks(const TrialDesign& design, int z,
                                           const Vector& cluster_period_sizes);

}  // namespace wedgefe
