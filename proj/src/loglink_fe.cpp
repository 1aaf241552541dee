#include "wedgefe/loglink_fe.hpp"

#include <cmath>
#include <stdexcept>

namespace wedgefe {

namespace {

struct RawBlocks {
  std::vector<ClusterBlock> blocks;
  std::vector<double> total_y;  // T_i
  std::vector<bool> kept;
  std::vector<int> kept_index;
};

RawBlocks assemble_raw(const TrialData& data, TreatmentStructure structure,
                       const FitLayout& layout) {
  RawBlocks rb;
  const int ncols = layout.ncols();
  Vector cent_max = Vector::Zero(ncols);
  Vector raw_max = Vector::Zero(ncols);
  for (int i = 0; i < data.m(); ++i) {
    rb.blocks.push_back(cluster_view(data, data.cluster_ids()[i], structure));
    const auto& blk = rb.blocks.back();
    rb.total_y.push_back(blk.y.sum());
    Matrix cent = blk.Q.rowwise() - blk.Q.colwise().mean();
    cent_max = cent_max.cwiseMax(cent.cwiseAbs().colwise().maxCoeff().transpose());
    raw_max = raw_max.cwiseMax(blk.Q.cwiseAbs().colwise().maxCoeff().transpose());
  }
  rb.kept.assign(ncols, true);
  for (int c = 0; c < ncols; ++c) {
    if (cent_max[c] <= 1e-12 * std::max(1.0, raw_max[c])) rb.kept[c] = false;
    if (rb.kept[c]) rb.kept_index.push_back(c);
  }
  return rb;
}

// Per-cluster softmax pieces at the current beta (kept coordinates).
struct ClusterState {
  Vector p;        // e^{eta} / sum e^{eta}
  double log_sum;  // log sum_k e^{eta_k}
  Vector qbar;     // sum_k p_k q_k (kept coords)
};

ClusterState cluster_state(const Matrix& Qk, const Vector& beta_kept) {
  ClusterState st;
  Vector eta = Qk * beta_kept;
  double mx = eta.maxCoeff();
  Vector w = (eta.array() - mx).exp();
  double W = w.sum();
  st.p = w / W;
  st.log_sum = mx + std::log(W);
  st.qbar = Qk.transpose() * st.p;
  return st;
}

}  // namespace

Vector PoissonFitResult::contrast_kept(const Vector& c_full) const {
  if (c_full.size() != layout.ncols())
    throw std::invalid_argument("contrast length does not match coefficient layout");
  Vector ck(kept_index.size());
  for (size_t k = 0; k < kept_index.size(); ++k) ck[k] = c_full[kept_index[k]];
  for (int c = 0; c < layout.ncols(); ++c)
    if (!kept[c] && c_full[c] != 0.0)
      throw std::invalid_argument("contrast places weight on a dropped (unidentified) column");
  return ck;
}

nlohmann::json PoissonFitResult::to_json(const TrialDesign& design) const {
  nlohmann::json coef = nlohmann::json::object();
  auto labels = layout.labels(design);
  for (int c = 0; c < layout.ncols(); ++c)
    coef[labels[c]] = {{"estimate", beta[c]}, {"kept", static_cast<bool>(kept[c])}};
  return {{"schema_version", 1},
          {"model", "loglink_fe"},
          {"structure", to_string(layout.structure)},
          {"coefficients", coef},
          {"converged", converged},
          {"newton_iters", newton_iters},
          {"score_norm", score_norm},
          {"m", m},
          {"warnings", warnings}};
}

PoissonFitResult fit_poisson_fe(const TrialData& data_in, TreatmentStructure structure,
                                const PoissonFitOptions& opts, const Vector* beta_init) {
  const TrialDesign& design = data_in.design();
  if (!structure_fits(design, structure))
    throw std::domain_error("collinearity: " + to_string(structure) +
                            " structure is not identified in a crossover fixed-effects fit");
  auto stage = std::make_shared<TrialData>(
      needs_period_drop(design, structure) && data_in.J() == design.J()
          ? drop_period(data_in, design.J())
          : data_in);

  for (int r = 0; r < stage->n_rows(); ++r)
    if (stage->outcomes()[r] < 0)
      throw std::domain_error("fit_poisson_fe: negative outcome (log link requires y >= 0)");

  PoissonFitResult fit;
  // all-zero-total clusters contribute a constant to the conditional likelihood
  std::vector<int> excluded;
  for (int i = 0; i < stage->m(); ++i) {
    auto [b, e] = stage->cluster_rows(i);
    if (stage->outcomes().segment(b, e - b).sum() <= 0.0)
      excluded.push_back(stage->cluster_ids()[i]);
  }
  for (int cid : excluded) {
    fit.warnings.push_back("cluster " + std::to_string(cid) +
                           " excluded: all outcomes zero (no information for a log-link fit)");
    stage = std::make_shared<TrialData>(subset_excluding(*stage, cid));
  }
  fit.excluded_clusters = excluded;
  fit.data = stage;

  const TrialData& data = *stage;
  FitLayout layout = make_layout(data, structure);
  RawBlocks rb = assemble_raw(data, structure, layout);
  const int m = data.m();
  const int k = static_cast<int>(rb.kept_index.size());
  if (k == 0) throw std::runtime_error("fit_poisson_fe: no identifiable columns");

  // separation pre-check: a treatment cell whose exposed rows are all zero
  const int toff = layout.treat_offset();
  for (int t = 0; t < layout.treat_dim; ++t) {
    if (!rb.kept[toff + t]) continue;
    double cell_y = 0.0, cell_n = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto& blk = rb.blocks[i];
      for (int r = 0; r < blk.Q.rows(); ++r)
        if (blk.Q(r, toff + t) > 0) {
          cell_y += blk.y[r];
          cell_n += 1.0;
        }
    }
    if (cell_n > 0 && cell_y == 0.0)
      throw std::runtime_error("diverging coefficient: treatment cell " +
                               treatment_labels(design, structure)[t] +
                               " has all-zero outcomes (separation)");
  }

  std::vector<Matrix> Qk(m);
  for (int i = 0; i < m; ++i) {
    Qk[i].resize(rb.blocks[i].Q.rows(), k);
    for (int kk = 0; kk < k; ++kk) Qk[i].col(kk) = rb.blocks[i].Q.col(rb.kept_index[kk]);
  }

  Vector beta = Vector::Zero(k);
  if (beta_init && beta_init->size() == layout.ncols())
    for (int kk = 0; kk < k; ++kk) beta[kk] = (*beta_init)[rb.kept_index[kk]];

  auto loglik = [&](const Vector& b) {
    double ll = 0.0;
    for (int i = 0; i < m; ++i) {
      Vector eta = Qk[i] * b;
      double mx = eta.maxCoeff();
      double lse = mx + std::log((eta.array() - mx).exp().sum());
      ll += rb.blocks[i].y.dot(eta) - rb.total_y[i] * lse;
    }
    return ll;
  };

  double ll = loglik(beta);
  bool converged = false;
  int iter = 0;
  double score_norm = 0.0;
  for (; iter < opts.max_iters; ++iter) {
    Vector g = Vector::Zero(k);
    Matrix H = Matrix::Zero(k, k);
    for (int i = 0; i < m; ++i) {
      ClusterState st = cluster_state(Qk[i], beta);
      Vector mu = rb.total_y[i] * st.p;
      g += Qk[i].transpose() * (rb.blocks[i].y - mu);
      Matrix PQ = st.p.asDiagonal() * Qk[i];
      H += rb.total_y[i] * (Qk[i].transpose() * PQ - st.qbar * st.qbar.transpose());
    }
    score_norm = g.cwiseAbs().maxCoeff();
    if (score_norm < opts.tol_score) {
      converged = true;
      break;
    }
    Eigen::LDLT<Matrix> ldlt(H);
    Vector step;
    if (ldlt.info() == Eigen::Success) step = ldlt.solve(g);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(H);
      cod.setThreshold(1e-12);
      if (cod.rank() < k)
        throw std::runtime_error(
            "collinearity: concentrated information matrix is rank deficient");
      step = cod.solve(g);
    }
    double scale = 1.0;
    double ll_new = loglik(beta + step);
    int halvings = 0;
    while (ll_new < ll - 1e-12 * (1.0 + std::fabs(ll)) && halvings < opts.max_halvings) {
      scale *= 0.5;
      ll_new = loglik(beta + scale * step);
      ++halvings;
    }
    beta += scale * step;
    ll = ll_new;
    if (beta.cwiseAbs().maxCoeff() > opts.diverge_bound)
      throw std::runtime_error("diverging coefficient in the log-link fit (separation suspected); "
                               "sup-norm exceeded " + std::to_string(opts.diverge_bound));
    if ((scale * step).cwiseAbs().maxCoeff() < opts.tol_step) {
      Vector g2 = Vector::Zero(k);
      for (int i = 0; i < m; ++i) {
        ClusterState st = cluster_state(Qk[i], beta);
        g2 += Qk[i].transpose() * (rb.blocks[i].y - rb.total_y[i] * st.p);
      }
      score_norm = g2.cwiseAbs().maxCoeff();
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged)
    throw std::runtime_error("fit_poisson_fe: no convergence after " +
                             std::to_string(opts.max_iters) +
                             " iterations; last score sup-norm " + std::to_string(score_norm));

  fit.layout = layout;
  fit.cluster_ids = data.cluster_ids();
  for (int cid : fit.cluster_ids) fit.sequence.push_back(data.sequence_of(cid));
  fit.kept = rb.kept;
  fit.kept_index = rb.kept_index;
  fit.beta = Vector::Zero(layout.ncols());
  for (int kk = 0; kk < k; ++kk) fit.beta[rb.kept_index[kk]] = beta[kk];
  fit.newton_iters = iter;
  fit.converged = true;
  fit.score_norm = score_norm;
  fit.m = m;
  fit.alpha.resize(m);
  fit.fitted.resize(data.n_rows());
  fit.per_cluster_score.resize(m, k);
  fit.bread = Matrix::Zero(k, k);
  for (int i = 0; i < m; ++i) {
    ClusterState st = cluster_state(Qk[i], beta);
    fit.alpha[i] = std::log(rb.total_y[i]) - st.log_sum;
    Vector mu = rb.total_y[i] * st.p;
    auto [b, e] = data.cluster_rows(i);
    fit.fitted.segment(b, e - b) = mu;
    fit.per_cluster_score.row(i) = (Qk[i].transpose() * (rb.blocks[i].y - mu)).transpose();
    Matrix PQ = st.p.asDiagonal() * Qk[i];
    fit.bread -= rb.total_y[i] * (Qk[i].transpose() * PQ - st.qbar * st.qbar.transpose());
  }
  fit.bread /= m;
  return fit;
}

namespace {

// Treated-cell grids of the stacked parameter, per structure. For constant
// and duration-specific structures predictions span every period, so the grid
// is (coef, j); for period-specific/saturated each cell has its own period.
struct MuGrid {
  int n = 0;
  std::vector<int> coef;    // treatment coefficient index (-1: control)
  std::vector<int> period;  // calendar period
};

MuGrid treated_grid(const TrialDesign& design, const FitLayout& layout) {
  MuGrid g;
  switch (layout.structure) {
    case TreatmentStructure::Constant:
      for (int j = 1; j <= layout.J_data; ++j) {
        g.coef.push_back(0);
        g.period.push_back(j);
      }
      break;
    case TreatmentStructure::DurationSpecific:
      for (int d = 0; d < layout.treat_dim; ++d)
        for (int j = 1; j <= layout.J_data; ++j) {
          g.coef.push_back(d);
          g.period.push_back(j);
        }
      break;
    case TreatmentStructure::PeriodSpecific:
    case TreatmentStructure::Saturated:
      for (const auto& c : treatment_cells(design, layout.structure)) {
        g.coef.push_back(c.index);
        g.period.push_back(c.period);
      }
      break;
  }
  g.n = static_cast<int>(g.coef.size());
  return g;
}

}  // namespace

GCompReport g_compute(const PoissonFitResult& fit) {
  if (!fit.converged) throw std::runtime_error("g_compute: fit did not converge");
  const TrialData& data = *fit.data;
  const TrialDesign& design = data.design();
  const FitLayout& layout = fit.layout;
  const int J = layout.J_data;

  // standardization collapses over the shared covariate/intercept factor
  double total_base = 0.0;
  double total_n = 0.0;
  std::vector<double> cluster_base(fit.m, 0.0);
  for (int i = 0; i < fit.m; ++i) {
    auto [b, e] = data.cluster_rows(i);
    double s = 0.0;
    for (int r = b; r < e; ++r) {
      double cov_lin = 0.0;
      for (int c = 0; c < layout.p; ++c)
        cov_lin += data.covariates()(r, c) * fit.beta[layout.cov_offset() + c];
      s += std::exp(cov_lin + fit.alpha[i]);
    }
    cluster_base[i] = s;
    total_base += s;
    total_n += e - b;
  }
  auto period_term = [&](int j) { return j >= 2 ? fit.beta[layout.period_col(j)] : 0.0; };

  GCompReport rep;
  rep.structure = layout.structure;
  rep.J_eff = J;
  rep.mu0.resize(J);
  for (int j = 1; j <= J; ++j) rep.mu0[j - 1] = std::exp(period_term(j)) * total_base / total_n;

  const int toff = layout.treat_offset();
  switch (layout.structure) {
    case TreatmentStructure::Constant: {
      rep.mu_treated.resize(1, J);
      for (int j = 1; j <= J; ++j)
        rep.mu_treated(0, j - 1) = rep.mu0[j - 1] * std::exp(fit.beta[toff]);
      rep.lambda = tilting_weights(design).lambda;
      double num = 0.0, den = rep.lambda.sum();
      for (int j = 1; j <= J; ++j)
        num += rep.lambda[j - 1] * (rep.mu_treated(0, j - 1) - rep.mu0[j - 1]);
      rep.deltas = Vector::Constant(1, num / den);
      rep.delta_labels = {"delta"};
      break;
    }
    case TreatmentStructure::DurationSpecific: {
      const int D = layout.treat_dim;
      rep.mu_treated.resize(D, J);
      for (int d = 0; d < D; ++d)
        for (int j = 1; j <= J; ++j)
          rep.mu_treated(d, j - 1) = rep.mu0[j - 1] * std::exp(fit.beta[toff + d]);
      Matrix lhs = Matrix::Zero(D, D);
      Vector rhs = Vector::Zero(D);
      for (int i = 0; i < fit.m; ++i) {
        auto lam = duration_weight_blocks(design, fit.sequence[i],
                                          data.cluster_period_sizes(i));
        for (int d = 1; d <= D; ++d) {
          lhs += lam[d - 1] * a_matrix(design, d);
          Vector v(J);
          for (int j = 1; j <= J; ++j) v[j - 1] = rep.mu_treated(d - 1, j - 1) - rep.mu0[j - 1];
          rhs += lam[d - 1] * v;
        }
      }
      Eigen::FullPivLU<Matrix> lu(lhs);
      if (!lu.isInvertible())
        throw std::runtime_error(
            "g_compute: singular duration weighting matrix (degenerate design/sizes)");
      rep.deltas = lu.solve(rhs);
      rep.weight_matrix = lhs;
      for (int d = 1; d <= D; ++d) rep.delta_labels.push_back("delta[d=" + std::to_string(d) + "]");
      break;
    }
    case TreatmentStructure::PeriodSpecific:
    case TreatmentStructure::Saturated: {
      auto cells = treatment_cells(design, layout.structure);
      rep.deltas.resize(cells.size());
      for (size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = cells[c];
        double mu1 = rep.mu0[cell.period - 1] * std::exp(fit.beta[toff + cell.index]);
        rep.cells.push_back({cell.index, cell.period, cell.duration, mu1});
        rep.deltas[static_cast<int>(c)] = mu1 - rep.mu0[cell.period - 1];
        rep.delta_labels.push_back(
            layout.structure == TreatmentStructure::PeriodSpecific
                ? "delta[j=" + std::to_string(cell.period) + "]"
                : "delta[j=" + std::to_string(cell.period) + ",d=" +
                      std::to_string(cell.duration) + "]");
      }
      break;
    }
  }
  return rep;
}

nlohmann::json GCompReport::to_json() const {
  nlohmann::json j{{"schema_version", 1},
                   {"structure", to_string(structure)},
                   {"J", J_eff}};
  j["mu0"] = std::vector<double>(mu0.data(), mu0.data() + mu0.size());
  if (mu_treated.size() > 0) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < mu_treated.rows(); ++r)
      rows.push_back(std::vector<double>(mu_treated.row(r).begin(), mu_treated.row(r).end()));
    j["mu_treated"] = rows;
  }
  if (!cells.empty()) {
    nlohmann::json cj = nlohmann::json::array();
    for (const auto& c : cells)
      cj.push_back({{"period", c.period}, {"duration", c.duration}, {"mu", c.mu}});
    j["cells"] = cj;
  }
  nlohmann::json dj = nlohmann::json::object();
  for (size_t i = 0; i < delta_labels.size(); ++i) dj[delta_labels[i]] = deltas[static_cast<int>(i)];
  j["deltas"] = dj;
  return j;
}

SummaryMeasure summary_measure_from_string(const std::string& s) {
  if (s == "difference") return SummaryMeasure::Difference;
  if (s == "ratio") return SummaryMeasure::Ratio;
  if (s == "logodds" || s == "log-odds") return SummaryMeasure::LogOdds;
  throw std::invalid_argument("unknown summary measure '" + s + "'");
}

double apply_summary_measure(SummaryMeasure f, double mu1, double mu0) {
  switch (f) {
    case SummaryMeasure::Difference:
      return mu1 - mu0;
    case SummaryMeasure::Ratio:
      if (mu0 <= 0)
        throw std::domain_error("summary_measure: ratio undefined, mu_j(0)=" +
                                std::to_string(mu0));
      return mu1 / mu0;
    case SummaryMeasure::LogOdds:
      if (!(mu1 > 0 && mu1 < 1 && mu0 > 0 && mu0 < 1))
        throw std::domain_error("summary_measure: log-odds needs means in (0,1); got mu1=" +
                                std::to_string(mu1) + ", mu0=" + std::to_string(mu0));
      return std::log(mu1 / (1 - mu1)) - std::log(mu0 / (1 - mu0));
  }
  throw std::invalid_argument("bad summary measure");
}

std::vector<SummaryCell> summary_measure(const PoissonFitResult& fit, SummaryMeasure f) {
  if (fit.layout.structure != TreatmentStructure::Saturated)
    throw std::invalid_argument("summary_measure: requires the saturated structure");
  GCompReport rep = g_compute(fit);
  std::vector<SummaryCell> out;
  for (const auto& cell : rep.cells) {
    try {
      out.push_back({cell.period, cell.duration,
                     apply_summary_measure(f, cell.mu, rep.mu0[cell.period - 1])});
    } catch (const std::domain_error& e) {
      throw std::domain_error(std::string(e.what()) + " at j=" + std::to_string(cell.period) +
                              ", d=" + std::to_string(cell.duration));
    }
  }
  return out;
}

StackedScore::StackedScore(const PoissonFitResult& fit, bool profiled_alpha)
    : fit_(fit), profiled_(profiled_alpha) {
  const TrialData& data = *fit_.data;
  const TrialDesign& design = data.design();
  J_eff_ = fit_.layout.J_data;
  k_ = static_cast<int>(fit_.kept_index.size());
  switch (fit_.layout.structure) {
    case TreatmentStructure::Constant:
      delta_dim_ = 1;
      mu1_dim_ = J_eff_;
      lambda_ = tilting_weights(design).lambda;
      break;
    case TreatmentStructure::DurationSpecific:
      delta_dim_ = fit_.layout.treat_dim;
      mu1_dim_ = delta_dim_ * J_eff_;
      for (int i = 0; i < fit_.m; ++i)
        lambda_blocks_.push_back(duration_weight_blocks(design, fit_.sequence[i],
                                                        data.cluster_period_sizes(i)));
      break;
    case TreatmentStructure::PeriodSpecific:
    case TreatmentStructure::Saturated:
      treated_cells_ = treatment_cells(design, fit_.layout.structure);
      delta_dim_ = static_cast<int>(treated_cells_.size());
      mu1_dim_ = delta_dim_;
      break;
  }
  dim_ = delta_dim_ + mu1_dim_ + J_eff_ + k_;
  for (int i = 0; i < fit_.m; ++i) total_enrolled_ += data.cluster_total(i);
}

int StackedScore::m() const { return fit_.m; }

Vector StackedScore::theta_hat() const {
  GCompReport rep = g_compute(fit_);
  Vector th = Vector::Zero(dim_);
  th.segment(delta_offset(), delta_dim_) = rep.deltas;
  switch (fit_.layout.structure) {
    case TreatmentStructure::Constant:
      th.segment(mu1_offset(), mu1_dim_) = rep.mu_treated.row(0).transpose();
      break;
    case TreatmentStructure::DurationSpecific:
      for (int d = 0; d < delta_dim_; ++d)
        th.segment(mu1_offset() + d * J_eff_, J_eff_) = rep.mu_treated.row(d).transpose();
      break;
    default:
      for (int c = 0; c < delta_dim_; ++c) th[mu1_offset() + c] = rep.cells[c].mu;
      break;
  }
  th.segment(mu0_offset(), J_eff_) = rep.mu0;
  for (int kk = 0; kk < k_; ++kk) th[beta_offset() + kk] = fit_.beta[fit_.kept_index[kk]];
  return th;
}

namespace {

// Full-layout beta from the kept segment of theta.
Vector expand_beta(const PoissonFitResult& fit, const Vector& theta, int beta_offset) {
  Vector beta_full = Vector::Zero(fit.layout.ncols());
  for (size_t kk = 0; kk < fit.kept_index.size(); ++kk)
    beta_full[fit.kept_index[kk]] = theta[beta_offset + static_cast<int>(kk)];
  return beta_full;
}

// Full-layout design rows and the covariate linear term for one cluster.
Matrix cluster_design_rows(const TrialData& data, const FitLayout& layout, int i, int z,
                           Vector& cov_lin, const Vector& beta_full) {
  auto [b, e] = data.cluster_rows(i);
  const int ni = e - b;
  Matrix Qf = Matrix::Zero(ni, layout.ncols());
  cov_lin.resize(ni);
  for (int r = 0; r < ni; ++r) {
    int row = b + r;
    int j = data.periods()[row];
    if (j >= 2) Qf(r, layout.period_col(j)) = 1.0;
    Vector trow = treatment_indicator_row(data.design(), layout.structure, j, z);
    Qf.block(r, layout.treat_offset(), 1, layout.treat_dim) = trow.transpose();
    double cl = 0.0;
    for (int c = 0; c < layout.p; ++c) {
      Qf(r, layout.cov_offset() + c) = data.covariates()(row, c);
      cl += data.covariates()(row, c) * beta_full[layout.cov_offset() + c];
    }
    cov_lin[r] = cl;
  }
  return Qf;
}

}  // namespace

Matrix StackedScore::psi(const Vector& theta) const {
  if (theta.size() != dim_) throw std::invalid_argument("StackedScore::psi: bad theta length");
  const TrialData& data = *fit_.data;
  const FitLayout& layout = fit_.layout;
  const Vector beta_full = expand_beta(fit_, theta, beta_offset());
  const int toff = layout.treat_offset();
  MuGrid grid = treated_grid(data.design(), layout);

  Matrix out = Matrix::Zero(fit_.m, dim_);
  for (int i = 0; i < fit_.m; ++i) {
    auto [b, e] = data.cluster_rows(i);
    const int ni = e - b;
    Vector cov_lin;
    Matrix Qf = cluster_design_rows(data, layout, i, fit_.sequence[i], cov_lin, beta_full);
    Vector eta = Qf * beta_full;
    double T = data.outcomes().segment(b, ni).sum();
    double mx = eta.maxCoeff();
    Vector w = (eta.array() - mx).exp();
    double lse = mx + std::log(w.sum());
    double alpha = profiled_ ? std::log(T) - lse : fit_.alpha[i];
    double B = (cov_lin.array() + alpha).exp().sum();

    // GEE score block
    Vector mu = (eta.array() + alpha).exp();
    Vector resid = data.outcomes().segment(b, ni) - mu;
    for (int kk = 0; kk < k_; ++kk)
      out(i, beta_offset() + kk) = Qf.col(fit_.kept_index[kk]).dot(resid);

    // g-computation identity blocks
    auto period_term = [&](int j) { return j >= 2 ? beta_full[layout.period_col(j)] : 0.0; };
    double n_i = ni;
    for (int g = 0; g < grid.n; ++g) {
      double hsum = std::exp(period_term(grid.period[g]) + beta_full[toff + grid.coef[g]]) * B;
      out(i, mu1_offset() + g) = n_i * theta[mu1_offset() + g] - hsum;
    }
    for (int j = 1; j <= J_eff_; ++j) {
      double hsum = std::exp(period_term(j)) * B;
      out(i, mu0_offset() + j - 1) = n_i * theta[mu0_offset() + j - 1] - hsum;
    }

    // aggregation block
    switch (layout.structure) {
      case TreatmentStructure::Constant: {
        double s = 0.0;
        for (int j = 1; j <= J_eff_; ++j)
          s += lambda_[j - 1] *
               (theta[delta_offset()] - (theta[mu1_offset() + j - 1] - theta[mu0_offset() + j - 1]));
        out(i, delta_offset()) = s;
        break;
      }
      case TreatmentStructure::DurationSpecific: {
        Vector acc = Vector::Zero(delta_dim_);
        const Vector delta = theta.segment(delta_offset(), delta_dim_);
        for (int d = 1; d <= delta_dim_; ++d) {
          Vector v(J_eff_);
          for (int j = 1; j <= J_eff_; ++j)
            v[j - 1] = theta[mu1_offset() + (d - 1) * J_eff_ + (j - 1)] -
                       theta[mu0_offset() + j - 1];
          acc += lambda_blocks_[i][d - 1] *
                 (a_matrix(data.design(), d) * delta - v);
        }
        out.row(i).segment(delta_offset(), delta_dim_) = acc.transpose();
        break;
      }
      default: {
        for (int c = 0; c < delta_dim_; ++c) {
          int j = treated_cells_[c].period;
          out(i, delta_offset() + c) =
              theta[delta_offset() + c] -
              (theta[mu1_offset() + c] - theta[mu0_offset() + j - 1]);
        }
        break;
      }
    }
  }
  return out;
}

Matrix StackedScore::bread(const Vector& theta) const {
  if (theta.size() != dim_) throw std::invalid_argument("StackedScore::bread: bad theta length");
  const TrialData& data = *fit_.data;
  const FitLayout& layout = fit_.layout;
  const Vector beta_full = expand_beta(fit_, theta, beta_offset());
  const int toff = layout.treat_offset();
  MuGrid grid = treated_grid(data.design(), layout);

  Matrix br = Matrix::Zero(dim_, dim_);
  for (int i = 0; i < fit_.m; ++i) {
    auto [b, e] = data.cluster_rows(i);
    const int ni = e - b;
    Vector cov_lin;
    Matrix Qf = cluster_design_rows(data, layout, i, fit_.sequence[i], cov_lin, beta_full);
    Matrix Qk(ni, k_);
    for (int kk = 0; kk < k_; ++kk) Qk.col(kk) = Qf.col(fit_.kept_index[kk]);
    Vector eta = Qf * beta_full;
    double T = data.outcomes().segment(b, ni).sum();
    double mx = eta.maxCoeff();
    Vector w = (eta.array() - mx).exp();
    double W = w.sum();
    Vector p = w / W;
    double lse = mx + std::log(W);
    double alpha = profiled_ ? std::log(T) - lse : fit_.alpha[i];
    Vector mu = (eta.array() + alpha).exp();
    Vector base = (cov_lin.array() + alpha).exp();
    double B = base.sum();
    Vector C = Vector::Zero(layout.p);
    for (int c = 0; c < layout.p; ++c) C[c] = base.dot(Qf.col(layout.cov_offset() + c));
    Vector qbar_kept = Qk.transpose() * p;  // only used when profiling alpha

    // d psi3 / d beta'
    Matrix dmu(ni, k_);
    if (profiled_) {
      dmu = mu.asDiagonal() * (Qk - Vector::Ones(ni) * qbar_kept.transpose());
    } else {
      dmu = mu.asDiagonal() * Qk;
    }
    br.block(beta_offset(), beta_offset(), k_, k_) -= Qk.transpose() * dmu;

    double n_i = ni;
    auto period_term = [&](int j) { return j >= 2 ? beta_full[layout.period_col(j)] : 0.0; };
    // d psi2 / d mu and d psi2 / d beta'
    auto add_mu_row = [&](int theta_col, int j, int coef) {
      br(theta_col, theta_col) += n_i;
      double scale = std::exp(period_term(j) + (coef >= 0 ? beta_full[toff + coef] : 0.0));
      // sum_k h_k q_cell_k' in kept coordinates
      Vector hq = Vector::Zero(k_);
      for (int kk = 0; kk < k_; ++kk) {
        int c = fit_.kept_index[kk];
        double u = 0.0;
        if (c < layout.n_period_cols) {
          u = (j >= 2 && layout.period_col(j) == c) ? B : 0.0;
        } else if (c < layout.cov_offset()) {
          u = (coef >= 0 && c - toff == coef) ? B : 0.0;
        } else {
          u = C[c - layout.cov_offset()];
        }
        hq[kk] = u;
      }
      Vector row = scale * hq;
      if (profiled_) row -= scale * B * qbar_kept;
      br.row(theta_col).segment(beta_offset(), k_) -= row.transpose();
    };
    for (int g = 0; g < grid.n; ++g) add_mu_row(mu1_offset() + g, grid.period[g], grid.coef[g]);
    for (int j = 1; j <= J_eff_; ++j) add_mu_row(mu0_offset() + j - 1, j, -1);

    // d psi1 blocks
    switch (layout.structure) {
      case TreatmentStructure::Constant: {
        br(delta_offset(), delta_offset()) += lambda_.sum();
        for (int j = 1; j <= J_eff_; ++j) {
          br(delta_offset(), mu1_offset() + j - 1) -= lambda_[j - 1];
          br(delta_offset(), mu0_offset() + j - 1) += lambda_[j - 1];
        }
        break;
      }
      case TreatmentStructure::DurationSpecific: {
        for (int d = 1; d <= delta_dim_; ++d) {
          const Matrix& lam = lambda_blocks_[i][d - 1];
          br.block(delta_offset(), delta_offset(), delta_dim_, delta_dim_) +=
              lam * a_matrix(data.design(), d);
          for (int j = 1; j <= J_eff_; ++j) {
            br.block(delta_offset(), mu1_offset() + (d - 1) * J_eff_ + (j - 1), delta_dim_, 1) -=
                lam.col(j - 1);
            br.block(delta_offset(), mu0_offset() + j - 1, delta_dim_, 1) += lam.col(j - 1);
          }
        }
        break;
      }
      default: {
        for (int c = 0; c < delta_dim_; ++c) {
          br(delta_offset() + c, delta_offset() + c) += 1.0;
          br(delta_offset() + c, mu1_offset() + c) -= 1.0;
          br(delta_offset() + c, mu0_offset() + treated_cells_[c].period - 1) += 1.0;
        }
        break;
      }
    }
  }
  return br / fit_.m;
}

}  // namespace wedgefe
