#include "wedgefe/linear_fe.hpp"

#include <cmath>
#include <stdexcept>

namespace wedgefe {

std::vector<std::string> FitLayout::labels(const TrialDesign& design) const {
  std::vector<std::string> out;
  for (int j = 2; j <= J_data; ++j) out.push_back("period[" + std::to_string(j) + "]");
  for (const auto& s : treatment_labels(design, structure)) out.push_back(s);
  for (int k = 1; k <= p; ++k) out.push_back("x" + std::to_string(k));
  return out;
}

FitLayout make_layout(const TrialData& data, TreatmentStructure structure) {
  FitLayout layout;
  layout.structure = structure;
  layout.J_data = data.J();
  layout.n_period_cols = data.J() - 1;
  layout.treat_dim = structure_dim(data.design(), structure);
  layout.p = data.p();
  return layout;
}

bool needs_period_drop(const TrialDesign& design, TreatmentStructure structure) {
  return design.kind() == DesignKind::SteppedWedge &&
         (structure == TreatmentStructure::PeriodSpecific ||
          structure == TreatmentStructure::Saturated);
}

WithinTransform within_transform(const ClusterBlock& block) {
  const int n = static_cast<int>(block.y.size());
  if (n < 2) throw std::runtime_error("within_transform: degenerate cluster (fewer than two rows)");
  WithinTransform wt;
  wt.y = block.y.array() - block.y.mean();
  wt.Q = block.Q.rowwise() - block.Q.colwise().mean();
  return wt;
}

Vector LinearFitResult::contrast_kept(const Vector& c_full) const {
  if (c_full.size() != layout.ncols())
    throw std::invalid_argument("contrast length does not match coefficient layout");
  Vector ck(kept_index.size());
  for (size_t k = 0; k < kept_index.size(); ++k) ck[k] = c_full[kept_index[k]];
  double dropped_mass = 0.0;
  for (int c = 0; c < layout.ncols(); ++c)
    if (!kept[c]) dropped_mass += std::fabs(c_full[c]);
  if (dropped_mass > 0)
    throw std::invalid_argument("contrast places weight on a dropped (unidentified) column");
  return ck;
}

nlohmann::json LinearFitResult::to_json(const TrialDesign& design) const {
  nlohmann::json coef = nlohmann::json::object();
  auto labels = layout.labels(design);
  for (int c = 0; c < layout.ncols(); ++c)
    coef[labels[c]] = {{"estimate", beta[c]}, {"kept", static_cast<bool>(kept[c])}};
  nlohmann::json alpha_j = nlohmann::json::object();
  for (size_t i = 0; i < cluster_ids.size(); ++i)
    alpha_j[std::to_string(cluster_ids[i])] = alpha[static_cast<int>(i)];
  return {{"schema_version", 1},
          {"model", "linear_fe"},
          {"structure", to_string(layout.structure)},
          {"coefficients", coef},
          {"alpha", alpha_j},
          {"score_norm", score_norm},
          {"m", m},
          {"n", n}};
}

LinearFitResult fit_linear_fe(const TrialData& data_in, TreatmentStructure structure) {
  const TrialDesign& design = data_in.design();
  if (!structure_fits(design, structure))
    throw std::domain_error("collinearity: " + to_string(structure) +
                            " structure is not identified in a crossover fixed-effects fit");
  std::optional<TrialData> dropped;
  const TrialData* data = &data_in;
  if (needs_period_drop(design, structure) && data_in.J() == design.J()) {
    dropped = drop_period(data_in, design.J());
    data = &*dropped;
  }

  FitLayout layout = make_layout(*data, structure);
  const int ncols = layout.ncols();
  const int m = data->m();

  std::vector<WithinTransform> blocks;
  std::vector<ClusterBlock> raw;
  blocks.reserve(m);
  raw.reserve(m);
  int n = 0;
  Vector cent_max = Vector::Zero(ncols);
  Vector raw_max = Vector::Zero(ncols);
  for (int i = 0; i < m; ++i) {
    raw.push_back(cluster_view(*data, data->cluster_ids()[i], structure));
    blocks.push_back(within_transform(raw.back()));
    n += static_cast<int>(blocks.back().y.size());
    cent_max = cent_max.cwiseMax(blocks.back().Q.cwiseAbs().colwise().maxCoeff().transpose());
    raw_max = raw_max.cwiseMax(raw.back().Q.cwiseAbs().colwise().maxCoeff().transpose());
  }

  // Columns with no within-cluster variation carry no information after the
  // transformation (time-invariant covariates, unexposed cells).
  std::vector<bool> kept(ncols, true);
  std::vector<int> kept_index;
  for (int c = 0; c < ncols; ++c) {
    if (cent_max[c] <= 1e-12 * std::max(1.0, raw_max[c])) kept[c] = false;
    if (kept[c]) kept_index.push_back(c);
  }
  const int k = static_cast<int>(kept_index.size());
  if (k == 0) throw std::runtime_error("fit_linear_fe: no identifiable columns");

  Matrix X(n, k);
  Vector y(n);
  int row = 0;
  for (int i = 0; i < m; ++i) {
    const int ni = static_cast<int>(blocks[i].y.size());
    for (int kk = 0; kk < k; ++kk)
      X.block(row, kk, ni, 1) = blocks[i].Q.col(kept_index[kk]);
    y.segment(row, ni) = blocks[i].y;
    row += ni;
  }

  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    auto labels = layout.labels(design);
    std::string dep;
    const auto& perm = qr.colsPermutation().indices();
    for (int c = qr.rank(); c < k; ++c) {
      if (!dep.empty()) dep += ", ";
      dep += labels[kept_index[perm[c]]];
    }
    throw std::runtime_error("collinearity: centered design is rank deficient; dependent "
                             "columns: " + dep);
  }
  Vector beta_kept = qr.solve(y);

  LinearFitResult fit;
  fit.layout = layout;
  fit.cluster_ids = data->cluster_ids();
  for (int cid : fit.cluster_ids) fit.sequence.push_back(data->sequence_of(cid));
  fit.kept = kept;
  fit.kept_index = kept_index;
  fit.beta = Vector::Zero(ncols);
  for (int kk = 0; kk < k; ++kk) fit.beta[kept_index[kk]] = beta_kept[kk];
  fit.m = m;
  fit.n = n;
  fit.alpha.resize(m);
  fit.residuals.resize(n);
  fit.per_cluster_score.resize(m, k);
  fit.bread = Matrix::Zero(k, k);
  fit.cluster_gram.reserve(m);
  fit.cluster_moment.reserve(m);

  Vector score_sum = Vector::Zero(k);
  row = 0;
  for (int i = 0; i < m; ++i) {
    const int ni = static_cast<int>(blocks[i].y.size());
    Matrix Qc(ni, k);
    for (int kk = 0; kk < k; ++kk) Qc.col(kk) = blocks[i].Q.col(kept_index[kk]);
    Vector resid = blocks[i].y - Qc * beta_kept;
    fit.residuals.segment(row, ni) = resid;
    Vector psi = Qc.transpose() * resid;
    fit.per_cluster_score.row(i) = psi.transpose();
    score_sum += psi;
    Matrix A = Qc.transpose() * Qc;
    fit.bread += A;
    fit.cluster_gram.push_back(std::move(A));
    fit.cluster_moment.push_back(Qc.transpose() * blocks[i].y);
    // alpha-hat: cluster mean of (y - Q beta) on the raw scale
    Vector raw_fit = raw[i].Q * fit.beta;
    fit.alpha[i] = (raw[i].y - raw_fit).mean();
    row += ni;
  }
  fit.bread /= m;
  fit.score_norm = score_sum.cwiseAbs().maxCoeff();
  return fit;
}

PeriodAverage period_average(const LinearFitResult& fit) {
  if (fit.layout.structure == TreatmentStructure::Constant)
    throw std::invalid_argument("period_average: no averaging defined for a constant structure");
  const int off = fit.layout.treat_offset();
  std::vector<int> cells;
  for (int t = 0; t < fit.layout.treat_dim; ++t)
    if (fit.kept[off + t]) cells.push_back(off + t);
  if (cells.empty()) throw std::runtime_error("period_average: no identified treatment cells");
  PeriodAverage pa;
  pa.contrast = Vector::Zero(fit.layout.ncols());
  for (int c : cells) pa.contrast[c] = 1.0 / cells.size();
  pa.value = pa.contrast.dot(fit.beta);
  return pa;
}

}  // namespace wedgefe
