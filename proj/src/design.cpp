#include "wedgefe/design.hpp"

#include <algorithm>
#include <stdexcept>

namespace wedgefe {

std::string to_string(DesignKind kind) {
  switch (kind) {
    case DesignKind::SteppedWedge: return "sw";
    case DesignKind::ParallelBaseline: return "pb";
    case DesignKind::Crossover: return "xo";
  }
  return "?";
}

std::string to_string(TreatmentStructure s) {
  switch (s) {
    case TreatmentStructure::Constant: return "constant";
    case TreatmentStructure::DurationSpecific: return "duration";
    case TreatmentStructure::PeriodSpecific: return "period";
    case TreatmentStructure::Saturated: return "saturated";
  }
  return "?";
}

DesignKind design_kind_from_string(const std::string& s) {
  if (s == "sw") return DesignKind::SteppedWedge;
  if (s == "pb") return DesignKind::ParallelBaseline;
  if (s == "xo") return DesignKind::Crossover;
  throw std::invalid_argument("unknown design kind '" + s + "' (expected sw, pb, or xo)");
}

TreatmentStructure structure_from_string(const std::string& s) {
  if (s == "constant") return TreatmentStructure::Constant;
  if (s == "duration") return TreatmentStructure::DurationSpecific;
  if (s == "period") return TreatmentStructure::PeriodSpecific;
  if (s == "saturated") return TreatmentStructure::Saturated;
  throw std::invalid_argument("unknown treatment structure '" + s + "'");
}

TrialDesign::TrialDesign(DesignKind kind, int J, int cps, std::vector<int> sequences)
    : kind_(kind), J_(J), cps_(cps), sequences_(std::move(sequences)) {}

TrialDesign TrialDesign::stepped_wedge(int J, int cps) {
  if (J < 3)
    throw std::invalid_argument("stepped wedge requires J >= 3 (baseline, mixed, all-treated)");
  if (cps < 1) throw std::invalid_argument("clusters_per_sequence must be >= 1");
  std::vector<int> seqs;
  for (int z = 2; z <= J; ++z) seqs.push_back(z);
  return TrialDesign(DesignKind::SteppedWedge, J, cps, std::move(seqs));
}

TrialDesign TrialDesign::parallel_baseline(int J, int cps) {
  if (J < 2) throw std::invalid_argument("parallel-with-baseline requires J >= 2");
  if (cps < 1) throw std::invalid_argument("clusters_per_sequence must be >= 1");
  return TrialDesign(DesignKind::ParallelBaseline, J, cps, {0, 2});
}

TrialDesign TrialDesign::crossover(int J, int cps) {
  if (J < 2 || J % 2 != 0)
    throw std::invalid_argument("crossover requires even J >= 2 (balanced alternation)");
  if (cps < 1) throw std::invalid_argument("clusters_per_sequence must be >= 1");
  return TrialDesign(DesignKind::Crossover, J, cps, {1, 2});
}

TrialDesign TrialDesign::make(DesignKind kind, int J, int cps) {
  switch (kind) {
    case DesignKind::SteppedWedge: return stepped_wedge(J, cps);
    case DesignKind::ParallelBaseline: return parallel_baseline(J, cps);
    case DesignKind::Crossover: return crossover(J, cps);
  }
  throw std::invalid_argument("bad design kind");
}

bool TrialDesign::valid_sequence(int z) const {
  return std::find(sequences_.begin(), sequences_.end(), z) != sequences_.end();
}

nlohmann::json TrialDesign::to_json() const {
  return {{"kind", to_string(kind_)}, {"J", J_}, {"clusters_per_sequence", cps_}};
}

TrialDesign TrialDesign::from_json(const nlohmann::json& j) {
  return make(design_kind_from_string(j.at("kind").get<std::string>()), j.at("J").get<int>(),
              j.at("clusters_per_sequence").get<int>());
}

int exposure_duration(DesignKind kind, int J, int j, int z) {
  if (j < 1 || j > J)
    throw std::domain_error("exposure_duration: period j=" + std::to_string(j) +
                            " outside 1.." + std::to_string(J));
  switch (kind) {
    case DesignKind::SteppedWedge:
      if (z == 0 || (z >= 2 && z <= J)) return (z >= 2 && z <= j) ? j - z + 1 : 0;
      break;
    case DesignKind::ParallelBaseline:
      if (z == 0 || z == 2) return (z == 2 && j >= 2) ? j - 1 : 0;
      break;
    case DesignKind::Crossover:
      if (z == 1) return (j % 2 == 1) ? (j + 1) / 2 : 0;
      if (z == 2) return (j % 2 == 0) ? j / 2 : 0;
      if (z == 0) return 0;
      break;
  }
  throw std::domain_error("exposure_duration: sequence z=" + std::to_string(z) +
                          " invalid for design " + to_string(kind));
}

bool structure_fits(const TrialDesign& design, TreatmentStructure s) {
  if (design.kind() == DesignKind::Crossover &&
      (s == TreatmentStructure::PeriodSpecific || s == TreatmentStructure::Saturated))
    return false;
  return true;
}

int structure_dim(const TrialDesign& design, TreatmentStructure s) {
  const int J = design.J();
  if (!structure_fits(design, s))
    throw std::domain_error("period-specific/saturated structures are collinear with period "
                            "effects in a crossover fit");
  switch (s) {
    case TreatmentStructure::Constant:
      return 1;
    case TreatmentStructure::DurationSpecific:
      return design.kind() == DesignKind::Crossover ? J / 2 : J - 1;
    case TreatmentStructure::PeriodSpecific:
      return design.kind() == DesignKind::SteppedWedge ? J - 2 : J - 1;
    case TreatmentStructure::Saturated:
      return design.kind() == DesignKind::SteppedWedge ? (J - 2) * (J - 1) / 2 : J - 1;
  }
  throw std::invalid_argument("bad structure");
}

namespace {

// Saturated SW cell index for (j, d), cells ordered (2,1), (3,1), (3,2), ...
int sw_saturated_cell(int j, int d) { return (j - 2) * (j - 1) / 2 + (d - 1); }

}  // namespace

std::vector<TreatmentCell> treatment_cells(const TrialDesign& design, TreatmentStructure s) {
  const int J = design.J();
  std::vector<TreatmentCell> cells;
  switch (s) {
    case TreatmentStructure::Constant:
      cells.push_back({0, 0, 0});
      break;
    case TreatmentStructure::DurationSpecific:
      for (int d = 1; d <= structure_dim(design, s); ++d) cells.push_back({d - 1, 0, d});
      break;
    case TreatmentStructure::PeriodSpecific: {
      int jmax = design.kind() == DesignKind::SteppedWedge ? J - 1 : J;
      for (int j = 2; j <= jmax; ++j) cells.push_back({j - 2, j, 0});
      break;
    }
    case TreatmentStructure::Saturated:
      if (design.kind() == DesignKind::SteppedWedge) {
        for (int j = 2; j <= J - 1; ++j)
          for (int d = 1; d <= j - 1; ++d) cells.push_back({sw_saturated_cell(j, d), j, d});
      } else {
        // PB: cells (j, d) with d = j-1; structures coincide
        for (int j = 2; j <= J; ++j) cells.push_back({j - 2, j, j - 1});
      }
      break;
  }
  return cells;
}

std::vector<std::string> treatment_labels(const TrialDesign& design, TreatmentStructure s) {
  std::vector<std::string> out;
  for (const auto& c : treatment_cells(design, s)) {
    if (c.period == 0 && c.duration == 0)
      out.push_back("Z");
    else if (c.period == 0)
      out.push_back("Z[d=" + std::to_string(c.duration) + "]");
    else if (c.duration == 0)
      out.push_back("Z[j=" + std::to_string(c.period) + "]");
    else
      out.push_back("Z[j=" + std::to_string(c.period) + ",d=" + std::to_string(c.duration) + "]");
  }
  return out;
}

Vector treatment_indicator_row(const TrialDesign& design, TreatmentStructure s, int j, int z) {
  if (!design.valid_sequence(z) && z != 0)
    throw std::domain_error("treatment_indicator_row: sequence z=" + std::to_string(z) +
                            " not in design");
  const int dim = structure_dim(design, s);
  Vector row = Vector::Zero(dim);
  const int d = exposure_duration(design, j, z);
  if (d == 0) return row;
  switch (s) {
    case TreatmentStructure::Constant:
      row[0] = 1.0;
      return row;
    case TreatmentStructure::DurationSpecific:
      row[d - 1] = 1.0;
      return row;
    case TreatmentStructure::PeriodSpecific:
      if (design.kind() == DesignKind::SteppedWedge && j >= design.J())
        throw std::domain_error(
            "period-specific effect at period J is not identified in a stepped wedge; drop "
            "period J before fitting");
      row[j - 2] = 1.0;
      return row;
    case TreatmentStructure::Saturated:
      if (design.kind() == DesignKind::SteppedWedge) {
        if (j >= design.J())
          throw std::domain_error(
              "saturated effects at period J are not identified in a stepped wedge; drop "
              "period J before fitting");
        row[sw_saturated_cell(j, d)] = 1.0;
      } else {
        row[j - 2] = 1.0;
      }
      return row;
  }
  throw std::invalid_argument("bad structure");
}

TiltingWeights tilting_weights(const TrialDesign& design) {
  const int J = design.J();
  TiltingWeights w;
  w.lambda = Vector::Zero(J);
  const double ns = design.num_sequences();
  for (int j = 1; j <= J; ++j) {
    int treated = 0;
    for (int z : design.sequences())
      if (exposure_duration(design, j, z) > 0) ++treated;
    double pi = treated / ns;
    w.lambda[j - 1] = pi * (1.0 - pi);
  }
  return w;
}

Vector delta_z_diagonal(const TrialDesign& design, int z) {
  Vector d = Vector::Zero(design.J());
  for (int j = 1; j <= design.J(); ++j)
    d[j - 1] = exposure_duration(design, j, z) > 0 ? 1.0 : 0.0;
  return d;
}

Vector lambda_d_diagonal(const TrialDesign& design, int z, int d) {
  Vector v = Vector::Zero(design.J());
  for (int j = 1; j <= design.J(); ++j)
    v[j - 1] = exposure_duration(design, j, z) == d ? 1.0 : 0.0;
  return v;
}

Matrix h_matrix(const TrialDesign& design, int z) {
  const int dim = structure_dim(design, TreatmentStructure::DurationSpecific);
  Matrix h = Matrix::Zero(design.J(), dim);
  for (int j = 1; j <= design.J(); ++j) {
    int d = exposure_duration(design, j, z);
    if (d >= 1) h(j - 1, d - 1) = 1.0;
  }
  return h;
}

Matrix h_matrix_mean(const TrialDesign& design) {
  const int dim = structure_dim(design, TreatmentStructure::DurationSpecific);
  Matrix h = Matrix::Zero(design.J(), dim);
  for (int z : design.sequences()) h += h_matrix(design, z);
  return h / design.num_sequences();
}

Matrix a_matrix(const TrialDesign& design, int d) {
  const int dim = structure_dim(design, TreatmentStructure::DurationSpecific);
  if (d < 1 || d > dim) throw std::domain_error("a_matrix: d outside 1..dim(D)");
  Matrix a = Matrix::Zero(design.J(), dim);
  a.col(d - 1).setOnes();
  return a;
}

std::vector<Matrix> duration_weight_blocks(const TrialDesign& design, int z,
                                           const Vector& cluster_period_sizes) {
  const int J = design.J();
  if (cluster_period_sizes.size() != J)
    throw std::invalid_argument("duration_weight_blocks: sizes vector must have length J");
  const int dim = structure_dim(design, TreatmentStructure::DurationSpecific);
  const Matrix hz = h_matrix(design, z);
  const Matrix hbar = h_matrix_mean(design);
  const Matrix hc = hz - hbar;
  std::vector<Matrix> blocks;
  blocks.reserve(dim);
  for (int d = 1; d <= dim; ++d) {
    Matrix lam = Matrix::Zero(dim, J);
    for (int c = 1; c <= J; ++c) {
      if (exposure_duration(design, c, z) != d) continue;
      for (int a = 0; a < dim; ++a) lam(a, c - 1) = cluster_period_sizes[c - 1] * hc(c - 1, a);
    }
    blocks.push_back(std::move(lam));
  }
  return blocks;
}

}  // namespace wedgefe
