#pragma once

#include <map>
#include <string>
#include <vector>

#include "wedgefe/design.hpp"

namespace wedgefe {

struct Observation {
  int cluster;
  int period;
  int individual;
  double outcome;
  std::vector<double> covariates;
};

struct CsvSchema {
  std::string cluster = "cluster";
  std::string period = "period";
  std::string outcome = "y";
  std::string sequence = "z";
  std::vector<std::string> covariates;  // empty: every other numeric column, in header order
};

struct ValidationReport {
  std::vector<std::string> warnings;
  int rows_read = 0;
  int clusters_dropped = 0;
  nlohmann::json to_json() const;
};

// Long-format trial data, sorted by (cluster, period, individual). Immutable
// after construction; periods must stay consecutive 1..J.
class TrialData {
 public:
  TrialData(TrialDesign design, std::vector<Observation> obs, std::map<int, int> sequence_of,
            int p);

  const TrialDesign& design() const { return design_; }
  int J() const { return J_data_; }  // periods present (may be < design J after drop_period)
  int m() const { return static_cast<int>(cluster_ids_.size()); }
  int p() const { return p_; }
  int n_rows() const { return static_cast<int>(y_.size()); }

  const std::vector<int>& cluster_ids() const { return cluster_ids_; }
  int sequence_of(int cluster_id) const;
  int cluster_index(int cluster_id) const;

  // Row storage (sorted by cluster block, then period, then individual).
  const Vector& outcomes() const { return y_; }
  const Matrix& covariates() const { return X_; }
  const std::vector<int>& periods() const { return period_; }
  const std::vector<int>& individuals() const { return individual_; }
  const std::vector<int>& row_cluster() const { return row_cluster_; }
  std::pair<int, int> cluster_rows(int cluster_index) const;  // [begin, end)

  // N_ij for one cluster (length J) and the m x J matrix.
  Vector cluster_period_sizes(int cluster_index) const;
  Matrix period_size_matrix() const;
  int cluster_total(int cluster_index) const;  // script-N_i

  const ValidationReport& report() const { return report_; }
  void set_report(ValidationReport r) { report_ = std::move(r); }

 private:
  TrialDesign design_;
  int J_data_;
  int p_;
  std::vector<int> cluster_ids_;
  std::map<int, int> seq_of_;
  std::map<int, int> index_of_;
  Vector y_;
  Matrix X_;
  std::vector<int> period_;
  std::vector<int> individual_;
  std::vector<int> row_cluster_;        // cluster index per row
  std::vector<std::pair<int, int>> cluster_ranges_;
  ValidationReport report_;
};

// Ordered per-cluster block: outcome vector, design-matrix rows (period
// indicators with reference period 1, treatment block, covariates), sizes.
struct ClusterBlock {
  int cluster_id;
  int z;
  Vector y;
  Matrix Q;
  std::vector<int> period;  // per row
  Vector sizes;             // N_ij, length J
};

ClusterBlock cluster_view(const TrialData& data, int cluster_id, TreatmentStructure structure);

// Remove the last period (labels must remain consecutive 1..J-1). Errors if a
// cluster would be left with fewer than two observations.
TrialData drop_period(const TrialData& data, int j);

TrialData load_csv(const std::string& path, const TrialDesign& design,
                   const CsvSchema& schema = CsvSchema{});
void write_csv(const TrialData& data, const std::string& path,
               const CsvSchema& schema = CsvSchema{});

}  // namespace wedgefe
