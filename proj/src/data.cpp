#include "wedgefe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wedgefe {

nlohmann::json ValidationReport::to_json() const {
  return {{"schema_version", 1},
          {"rows_read", rows_read},
          {"clusters_dropped", clusters_dropped},
          {"warnings", warnings}};
}

TrialData::TrialData(TrialDesign design, std::vector<Observation> obs,
                     std::map<int, int> sequence_of, int p)
    : design_(std::move(design)), p_(p), seq_of_(std::move(sequence_of)) {
  if (obs.empty()) throw std::invalid_argument("TrialData: no observations");
  J_data_ = 0;
  for (const auto& o : obs) {
    if (o.period < 1 || o.period > design_.J())
      throw std::out_of_range("TrialData: period " + std::to_string(o.period) +
                              " outside 1.." + std::to_string(design_.J()));
    if (!std::isfinite(o.outcome)) throw std::invalid_argument("TrialData: non-finite outcome");
    if (static_cast<int>(o.covariates.size()) != p_)
      throw std::invalid_argument("TrialData: covariate length differs from p");
    J_data_ = std::max(J_data_, o.period);
  }
  std::stable_sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
    if (a.cluster != b.cluster) return a.cluster < b.cluster;
    if (a.period != b.period) return a.period < b.period;
    return a.individual < b.individual;
  });
  for (const auto& o : obs)
    if (cluster_ids_.empty() || cluster_ids_.back() != o.cluster) cluster_ids_.push_back(o.cluster);
  for (int c : cluster_ids_) {
    auto it = seq_of_.find(c);
    if (it == seq_of_.end())
      throw std::invalid_argument("TrialData: cluster " + std::to_string(c) +
                                  " has no sequence assignment");
    if (it->second != 0 && !design_.valid_sequence(it->second))
      throw std::invalid_argument("TrialData: cluster " + std::to_string(c) + " assigned z=" +
                                  std::to_string(it->second) + ", not a sequence of this design");
    if (it->second == 0 && design_.kind() != DesignKind::ParallelBaseline)
      throw std::invalid_argument("TrialData: cluster " + std::to_string(c) +
                                  " assigned z=0, not a sequence of this design");
  }
  for (size_t i = 0; i < cluster_ids_.size(); ++i) index_of_[cluster_ids_[i]] = static_cast<int>(i);

  const int n = static_cast<int>(obs.size());
  y_.resize(n);
  X_.resize(n, p_);
  period_.resize(n);
  individual_.resize(n);
  row_cluster_.resize(n);
  for (int r = 0; r < n; ++r) {
    y_[r] = obs[r].outcome;
    for (int k = 0; k < p_; ++k) X_(r, k) = obs[r].covariates[k];
    period_[r] = obs[r].period;
    individual_[r] = obs[r].individual;
    row_cluster_[r] = index_of_.at(obs[r].cluster);
  }
  cluster_ranges_.assign(cluster_ids_.size(), {n, 0});
  for (int r = 0; r < n; ++r) {
    auto& rg = cluster_ranges_[row_cluster_[r]];
    rg.first = std::min(rg.first, r);
    rg.second = std::max(rg.second, r + 1);
  }
  for (size_t i = 0; i < cluster_ids_.size(); ++i)
    if (cluster_ranges_[i].second - cluster_ranges_[i].first < 2)
      throw std::invalid_argument("TrialData: cluster " + std::to_string(cluster_ids_[i]) +
                                  " has fewer than two observations");
}

int TrialData::sequence_of(int cluster_id) const { return seq_of_.at(cluster_id); }

int TrialData::cluster_index(int cluster_id) const {
  auto it = index_of_.find(cluster_id);
  if (it == index_of_.end())
    throw std::out_of_range("unknown cluster id " + std::to_string(cluster_id));
  return it->second;
}

std::pair<int, int> TrialData::cluster_rows(int cluster_index) const {
  return cluster_ranges_.at(cluster_index);
}

Vector TrialData::cluster_period_sizes(int cluster_index) const {
  Vector n = Vector::Zero(design_.J());
  auto [b, e] = cluster_rows(cluster_index);
  for (int r = b; r < e; ++r) n[period_[r] - 1] += 1.0;
  return n;
}

Matrix TrialData::period_size_matrix() const {
  Matrix n = Matrix::Zero(m(), design_.J());
  for (int i = 0; i < m(); ++i) n.row(i) = cluster_period_sizes(i).transpose();
  return n;
}

int TrialData::cluster_total(int cluster_index) const {
  auto [b, e] = cluster_rows(cluster_index);
  return e - b;
}

ClusterBlock cluster_view(const TrialData& data, int cluster_id, TreatmentStructure structure) {
  const TrialDesign& design = data.design();
  const int i = data.cluster_index(cluster_id);
  const int z = data.sequence_of(cluster_id);
  const int n_period_cols = data.J() - 1;
  const int treat_dim = structure_dim(design, structure);
  const int p = data.p();
  auto [b, e] = data.cluster_rows(i);
  ClusterBlock blk;
  blk.cluster_id = cluster_id;
  blk.z = z;
  blk.y = data.outcomes().segment(b, e - b);
  blk.Q = Matrix::Zero(e - b, n_period_cols + treat_dim + p);
  blk.period.assign(data.periods().begin() + b, data.periods().begin() + e);
  blk.sizes = data.cluster_period_sizes(i);
  for (int r = b; r < e; ++r) {
    int row = r - b;
    int j = data.periods()[r];
    if (j >= 2) blk.Q(row, j - 2) = 1.0;
    Vector trow = treatment_indicator_row(design, structure, j, z);
    blk.Q.block(row, n_period_cols, 1, treat_dim) = trow.transpose();
    if (p > 0) blk.Q.block(row, n_period_cols + treat_dim, 1, p) = data.covariates().row(r);
  }
  return blk;
}

TrialData drop_period(const TrialData& data, int j) {
  if (j < 1 || j > data.J())
    throw std::out_of_range("drop_period: period " + std::to_string(j) + " not present");
  if (j != data.J())
    throw std::invalid_argument(
        "drop_period: only the last period can be dropped (labels must stay consecutive)");
  std::vector<Observation> obs;
  std::map<int, int> seq;
  std::map<int, int> kept_per_cluster;
  for (int r = 0; r < data.n_rows(); ++r) {
    int cid = data.cluster_ids()[data.row_cluster()[r]];
    if (data.periods()[r] == j) continue;
    Observation o;
    o.cluster = cid;
    o.period = data.periods()[r];
    o.individual = data.individuals()[r];
    o.outcome = data.outcomes()[r];
    o.covariates.resize(data.p());
    for (int k = 0; k < data.p(); ++k) o.covariates[k] = data.covariates()(r, k);
    obs.push_back(std::move(o));
    kept_per_cluster[cid] += 1;
  }
  for (int cid : data.cluster_ids()) {
    seq[cid] = data.sequence_of(cid);
    if (kept_per_cluster[cid] < 2)
      throw std::runtime_error("drop_period: cluster " + std::to_string(cid) +
                               " would be left with fewer than two observations");
  }
  return TrialData(data.design(), std::move(obs), std::move(seq), data.p());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& col, int lineno) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw std::runtime_error("csv line " + std::to_string(lineno) + ": non-numeric value '" + s +
                             "' in column " + col);
  }
}

}  // namespace

TrialData load_csv(const std::string& path, const TrialDesign& design, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("'" + path + "' is empty");
  auto header = split_csv_line(line);
  auto col_of = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_cluster = col_of(schema.cluster);
  const int c_period = col_of(schema.period);
  const int c_y = col_of(schema.outcome);
  const int c_z = col_of(schema.sequence);
  for (auto [c, name] : {std::pair{c_cluster, schema.cluster}, {c_period, schema.period},
                         {c_y, schema.outcome}, {c_z, schema.sequence}})
    if (c < 0) throw std::runtime_error("'" + path + "': missing required column '" + name + "'");

  std::vector<int> c_cov;
  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (int c = 0; c < static_cast<int>(header.size()); ++c)
      if (c != c_cluster && c != c_period && c != c_y && c != c_z) cov_names.push_back(header[c]);
  }
  for (const auto& name : cov_names) {
    int c = col_of(name);
    if (c < 0) throw std::runtime_error("'" + path + "': missing covariate column '" + name + "'");
    c_cov.push_back(c);
  }
  const int p = static_cast<int>(c_cov.size());

  std::vector<Observation> obs;
  std::map<int, int> seq;
  std::map<int, int> indiv_counter;
  ValidationReport report;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(f.size()));
    Observation o;
    o.cluster = static_cast<int>(parse_number(f[c_cluster], schema.cluster, lineno));
    double pj = parse_number(f[c_period], schema.period, lineno);
    o.period = static_cast<int>(pj);
    if (o.period < 1 || o.period > design.J())
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": period " +
                               std::to_string(o.period) + " outside 1.." +
                               std::to_string(design.J()));
    o.outcome = parse_number(f[c_y], schema.outcome, lineno);
    if (!std::isfinite(o.outcome))
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": missing or non-finite " +
                               "outcome (rows with missing outcomes are rejected)");
    int z = static_cast<int>(parse_number(f[c_z], schema.sequence, lineno));
    auto it = seq.find(o.cluster);
    if (it == seq.end()) {
      if (z != 0 && !design.valid_sequence(z))
        throw std::runtime_error("csv line " + std::to_string(lineno) + ": cluster " +
                                 std::to_string(o.cluster) + " assigned to unknown sequence z=" +
                                 std::to_string(z));
      seq[o.cluster] = z;
    } else if (it->second != z) {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": cluster " +
                               std::to_string(o.cluster) + " has conflicting sequence values");
    }
    o.individual = ++indiv_counter[o.cluster * 1000003 + o.period];
    o.covariates.resize(p);
    for (int k = 0; k < p; ++k) o.covariates[k] = parse_number(f[c_cov[k]], cov_names[k], lineno);
    obs.push_back(std::move(o));
    ++report.rows_read;
  }
  // clusters with zero usable enrollment are dropped with a warning
  std::map<int, int> rows_per_cluster;
  for (const auto& o : obs) rows_per_cluster[o.cluster]++;
  std::vector<Observation> kept;
  for (auto& o : obs) {
    if (rows_per_cluster[o.cluster] < 2) continue;
    kept.push_back(std::move(o));
  }
  for (auto [cid, cnt] : rows_per_cluster)
    if (cnt < 2) {
      report.warnings.push_back("cluster " + std::to_string(cid) +
                                " dropped: fewer than two enrolled observations");
      report.clusters_dropped++;
      seq.erase(cid);
    }
  if (kept.empty()) throw std::runtime_error("'" + path + "': no usable rows");
  TrialData data(design, std::move(kept), std::move(seq), p);
  data.set_report(std::move(report));
  return data;
}

void write_csv(const TrialData& data, const std::string& path, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty())
    for (int k = 1; k <= data.p(); ++k) cov_names.push_back("x" + std::to_string(k));
  out << schema.cluster << ',' << schema.period << ',' << schema.outcome << ',' << schema.sequence;
  for (const auto& name : cov_names) out << ',' << name;
  out << '\n';
  char buf[64];
  for (int r = 0; r < data.n_rows(); ++r) {
    int cid = data.cluster_ids()[data.row_cluster()[r]];
    out << cid << ',' << data.periods()[r] << ',';
    std::snprintf(buf, sizeof buf, "%.17g", data.outcomes()[r]);
    out << buf << ',' << data.sequence_of(cid);
    for (int k = 0; k < data.p(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.covariates()(r, k));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace wedgefe
