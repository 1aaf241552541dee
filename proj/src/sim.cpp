#include "wedgefe/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "wedgefe/inference.hpp"
#include "wedgefe/loglink_fe.hpp"
#include "wedgefe/numeric.hpp"
#include "wedgefe/parallel.hpp"

namespace wedgefe {

namespace {

enum Purpose : std::uint64_t { kAssign = 0, kEnroll = 1, kCluster = 2, kIndiv = 3, kOutcome = 4 };

Rng substream(const ScenarioSpec& spec, int replicate, Purpose purpose) {
  return Rng{spec.seed, static_cast<std::uint64_t>(spec.scenario),
             static_cast<std::uint64_t>(replicate), static_cast<std::uint64_t>(purpose)};
}

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Equal-allocation assignment: sequence blocks, Fisher-Yates shuffled.
std::vector<int> randomized_assignment(const TrialDesign& design, Rng& rng) {
  std::vector<int> z;
  for (int s : design.sequences())
    for (int c = 0; c < design.clusters_per_sequence(); ++c) z.push_back(s);
  for (int i = static_cast<int>(z.size()) - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform() * (i + 1));
    std::swap(z[i], z[j]);
  }
  return z;
}

Matrix gamma_chol(int J, double kappa, double decay) {
  Matrix S(J, J);
  for (int a = 0; a < J; ++a)
    for (int b = 0; b < J; ++b) S(a, b) = kappa * kappa * std::exp(-decay * std::abs(a - b));
  return Eigen::LLT<Matrix>(S).matrixL();
}

struct SizeDraw {
  std::vector<Matrix> n;  // per cluster, J sizes
};

Matrix draw_sizes(const ScenarioSpec& spec, int replicate, int m, int J) {
  Rng rng = substream(spec, replicate, kEnroll);
  Matrix n(m, J);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < J; ++j)
      n(i, j) = static_cast<double>(rng.poisson_truncated_positive(spec.mean_size));
  return n;
}

// Time-varying effect slopes of scenarios 2 (PB, j >= 2) and 3 (XO, all j).
double scenario2_effect(int j, int J) {
  double center = 0.0;
  for (int l = 2; l <= J; ++l) center += l;
  center /= (J - 1);
  return 0.7 * (1.0 + 0.6 * (j - center));
}

double scenario3_effect(int j, int J) { return 0.7 * (1.0 + 0.6 * (j - (J + 1) / 2.0)); }

constexpr double kMu0 = 1.5;
constexpr double kBetaZ = 0.7;
constexpr double kBetaX1 = 1.5;
constexpr double kTau2Logit = 0.176;                 // scenarios 1 and 4
const double kTau2Lin = 0.05 / 0.95;                 // scenarios 2 and 3
constexpr double kVarDelta = kBetaZ * kBetaZ / 100;  // treatment heterogeneity

}  // namespace

ScenarioSpec ScenarioSpec::preset(int scenario, int m, int replicates, std::uint64_t seed,
                                  std::optional<int> J_override) {
  ScenarioSpec spec;
  spec.scenario = scenario;
  spec.m = m;
  spec.replicates = replicates;
  spec.seed = seed;
  switch (scenario) {
    case 1: spec.J = J_override.value_or(m >= 100 ? 6 : 4); break;
    case 2:
    case 3: spec.J = J_override.value_or(4); break;
    case 4: spec.J = J_override.value_or(6); break;
    default: throw std::invalid_argument("scenario must be 1..4");
  }
  spec.design();  // validate divisibility
  return spec;
}

TrialDesign ScenarioSpec::design() const {
  TrialDesign d = [&] {
    switch (scenario) {
      case 1:
      case 4: {
        int nseq = J - 1;
        if (m % nseq != 0)
          throw std::invalid_argument("scenario " + std::to_string(scenario) + ": m=" +
                                      std::to_string(m) + " not divisible by " +
                                      std::to_string(nseq) + " sequences");
        return TrialDesign::stepped_wedge(J, m / nseq);
      }
      case 2:
        if (m % 2 != 0) throw std::invalid_argument("scenario 2: m must be even");
        return TrialDesign::parallel_baseline(J, m / 2);
      case 3:
        if (m % 2 != 0) throw std::invalid_argument("scenario 3: m must be even");
        return TrialDesign::crossover(J, m / 2);
      default:
        throw std::invalid_argument("scenario must be 1..4");
    }
  }();
  return d;
}

nlohmann::json ScenarioSpec::to_json() const {
  return {{"schema_version", 1},
          {"scenario", scenario},
          {"m", m},
          {"J", J},
          {"replicates", replicates},
          {"mean_size", mean_size},
          {"seed", seed},
          {"randomized_assignment", randomized_assignment}};
}

ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec spec = preset(j.at("scenario").get<int>(), j.at("m").get<int>(),
                             j.value("replicates", 1000), j.value("seed", std::uint64_t{1}),
                             j.contains("J") ? std::optional<int>(j["J"].get<int>())
                                             : std::nullopt);
  spec.mean_size = j.value("mean_size", 100.0);
  spec.randomized_assignment = j.value("randomized_assignment", false);
  return spec;
}

TrialData generate_scenario1(const ScenarioSpec& spec, int replicate) {
  TrialDesign design = spec.design();
  const int m = spec.m, J = spec.J;
  Rng assign_rng = substream(spec, replicate, kAssign);
  std::vector<int> z = randomized_assignment(design, assign_rng);
  Matrix sizes = draw_sizes(spec, replicate, m, J);

  Rng crng = substream(spec, replicate, kCluster);
  std::vector<double> alpha(m), delta(m), x1c(m);
  Matrix gam(m, J);
  for (int i = 0; i < m; ++i) {
    alpha[i] = std::sqrt(kTau2Logit) * crng.normal();
    delta[i] = std::sqrt(kVarDelta) * crng.normal();
    x1c[i] = crng.beta(6.0, 4.0);
    for (int j = 0; j < J; ++j) gam(i, j) = std::sqrt(kTau2Logit / 4.0) * crng.normal();
  }

  Rng irng = substream(spec, replicate, kIndiv);
  Rng orng = substream(spec, replicate, kOutcome);
  std::vector<Observation> obs;
  std::map<int, int> seq;
  for (int i = 0; i < m; ++i) {
    seq[i + 1] = z[i];
    for (int j = 1; j <= J; ++j) {
      int b = exposure_duration(design, j, z[i]) > 0 ? 1 : 0;
      int nij = static_cast<int>(sizes(i, j - 1));
      for (int k = 1; k <= nij; ++k) {
        double x1 = irng.bernoulli(x1c[i]);
        double eta = kMu0 + 0.2 * j + kBetaZ * (1 + delta[i]) * b + kBetaX1 * x1 + alpha[i] +
                     gam(i, j - 1);
        double y = orng.bernoulli(expit(eta));
        obs.push_back({i + 1, j, k, y, {x1}});
      }
    }
  }
  return TrialData(design, std::move(obs), std::move(seq), 1);
}

TrialData generate_scenario2(const ScenarioSpec& spec, int replicate) {
  TrialDesign design = spec.design();
  const int m = spec.m, J = spec.J;
  Matrix sizes = draw_sizes(spec, replicate, m, J);
  const double tau = std::sqrt(kTau2Lin);
  const Matrix L = gamma_chol(J, tau / 10.0, 0.5);

  Rng crng = substream(spec, replicate, kCluster);
  std::vector<double> u(m), alpha(m), delta(m), x1c(m), x2c(m);
  Matrix gam(m, J);
  for (int i = 0; i < m; ++i) {
    // latent cluster score; alpha / X1 / X2 each load 0.5 sd on it so that
    // treated clusters (top half by u) have higher alpha, X1, X2
    u[i] = crng.normal();
    auto coupled = [&](double load) { return load * u[i] + std::sqrt(1 - load * load) * crng.normal(); };
    alpha[i] = tau * coupled(0.5);
    x1c[i] = ibeta_inv(6.0, 4.0, norm_cdf(coupled(0.5)));
    double s2 = norm_cdf(coupled(0.5));
    double zq = norm_quantile((1.0 + s2) / 2.0);
    x2c[i] = 100.0 * zq * zq;  // Gamma(0.5, 200) by quantile coupling
    delta[i] = std::sqrt(kVarDelta) * crng.normal();
    Vector g0(J);
    for (int j = 0; j < J; ++j) g0[j] = crng.normal();
    gam.row(i) = (L * g0).transpose();
  }

  std::vector<int> z(m, 0);
  if (spec.randomized_assignment) {
    Rng assign_rng = substream(spec, replicate, kAssign);
    z = randomized_assignment(design, assign_rng);
  } else {
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return u[a] > u[b]; });
    for (int r = 0; r < m / 2; ++r) z[order[r]] = 2;
  }

  Rng irng = substream(spec, replicate, kIndiv);
  Rng orng = substream(spec, replicate, kOutcome);
  std::vector<Observation> obs;
  std::map<int, int> seq;
  for (int i = 0; i < m; ++i) {
    seq[i + 1] = z[i];
    for (int j = 1; j <= J; ++j) {
      int b = exposure_duration(design, j, z[i]) > 0 ? 1 : 0;
      int nij = static_cast<int>(sizes(i, j - 1));
      for (int k = 1; k <= nij; ++k) {
        double x1 = irng.bernoulli(x1c[i]);
        double x2 = static_cast<double>(irng.poisson(x2c[i]));
        double y = kMu0 + 0.2 * j + scenario2_effect(j, J) * (1 + delta[i]) * b + kBetaX1 * x1 +
                   0.02 * std::sqrt(x2) + alpha[i] + gam(i, j - 1) + orng.normal();
        obs.push_back({i + 1, j, k, y, {x1, x2}});
      }
    }
  }
  return TrialData(design, std::move(obs), std::move(seq), 2);
}

TrialData generate_scenario3(const ScenarioSpec& spec, int replicate) {
  TrialDesign design = spec.design();
  const int m = spec.m, J = spec.J;
  Rng assign_rng = substream(spec, replicate, kAssign);
  std::vector<int> z = randomized_assignment(design, assign_rng);
  Matrix sizes = draw_sizes(spec, replicate, m, J);
  const double tau = std::sqrt(kTau2Lin);
  const Matrix L = gamma_chol(J, tau / 10.0, 0.5);

  Rng crng = substream(spec, replicate, kCluster);
  std::vector<double> alpha(m), delta(m), x1c(m), x2c(m);
  Matrix gam(m, J);
  for (int i = 0; i < m; ++i) {
    alpha[i] = tau * crng.normal();
    delta[i] = std::sqrt(kVarDelta) * crng.normal();
    x1c[i] = crng.beta(6.0, 4.0);
    double zq = crng.normal();
    x2c[i] = 100.0 * zq * zq;  // Gamma(0.5, 200)
    Vector g0(J);
    for (int j = 0; j < J; ++j) g0[j] = crng.normal();
    gam.row(i) = (L * g0).transpose();
  }

  Rng irng = substream(spec, replicate, kIndiv);
  Rng orng = substream(spec, replicate, kOutcome);
  std::vector<Observation> obs;
  std::map<int, int> seq;
  for (int i = 0; i < m; ++i) {
    seq[i + 1] = z[i];
    for (int j = 1; j <= J; ++j) {
      int b = exposure_duration(design, j, z[i]) > 0 ? 1 : 0;
      int nij = static_cast<int>(sizes(i, j - 1));
      for (int k = 1; k <= nij; ++k) {
        double x1 = irng.bernoulli(x1c[i]);
        double x2 = static_cast<double>(irng.poisson(x2c[i]));
        double mult = 1 + delta[i] + (x2c[i] - 100.0) / 100.0;
        double y = kMu0 + 0.2 * j + scenario3_effect(j, J) * mult * b + kBetaX1 * std::sin(j * x1) +
                   2.0 * std::sqrt(x2) + 7.0 * std::cos(x2) + alpha[i] + gam(i, j - 1) +
                   orng.normal();
        obs.push_back({i + 1, j, k, y, {x1, x2}});
      }
    }
  }
  return TrialData(design, std::move(obs), std::move(seq), 2);
}

TrialData generate_scenario4(const ScenarioSpec& spec, int replicate) {
  TrialDesign design = spec.design();
  const int m = spec.m, J = spec.J;
  Rng assign_rng = substream(spec, replicate, kAssign);
  std::vector<int> z = randomized_assignment(design, assign_rng);
  Matrix sizes = draw_sizes(spec, replicate, m, J);

  Rng crng = substream(spec, replicate, kCluster);
  std::vector<double> alpha(m), delta(m), x1c(m);
  Matrix gam(m, J);
  for (int i = 0; i < m; ++i) {
    alpha[i] = std::sqrt(kTau2Logit) * crng.normal();
    delta[i] = std::sqrt(kVarDelta) * crng.normal();
    x1c[i] = crng.beta(6.0, 4.0);
    for (int j = 0; j < J; ++j) gam(i, j) = std::sqrt(kTau2Logit / 4.0) * crng.normal();
  }

  Rng irng = substream(spec, replicate, kIndiv);
  Rng orng = substream(spec, replicate, kOutcome);
  std::vector<Observation> obs;
  std::map<int, int> seq;
  for (int i = 0; i < m; ++i) {
    seq[i + 1] = z[i];
    for (int j = 1; j <= J; ++j) {
      int b = exposure_duration(design, j, z[i]) > 0 ? 1 : 0;
      int nij = static_cast<int>(sizes(i, j - 1));
      for (int k = 1; k <= nij; ++k) {
        double x1 = irng.bernoulli(x1c[i]);
        double eta = kMu0 + 1.0 * j + kBetaZ * (1 + delta[i]) * b + kBetaX1 * x1 + alpha[i] +
                     gam(i, j - 1);
        double y = static_cast<double>(orng.neg_binomial_mean(50.0, std::exp(eta)));
        obs.push_back({i + 1, j, k, y, {x1}});
      }
    }
  }
  return TrialData(design, std::move(obs), std::move(seq), 1);
}

TrialData generate(const ScenarioSpec& spec, int replicate) {
  switch (spec.scenario) {
    case 1: return generate_scenario1(spec, replicate);
    case 2: return generate_scenario2(spec, replicate);
    case 3: return generate_scenario3(spec, replicate);
    case 4: return generate_scenario4(spec, replicate);
  }
  throw std::invalid_argument("scenario must be 1..4");
}

nlohmann::json OracleResult::to_json() const {
  nlohmann::json pp = nlohmann::json::object();
  for (size_t i = 0; i < periods.size(); ++i)
    pp["delta[j=" + std::to_string(periods[i]) + "]"] = per_period[static_cast<int>(i)];
  return {{"schema_version", 1}, {"per_period", pp},      {"p_avg", p_avg},
          {"p_ato", p_ato},      {"method", method},      {"numeric_error", numeric_error}};
}

namespace {

// Scenario 1: the Bernoulli covariate is linear in its cluster-level
// probability, so the Beta mixture collapses to its mean; the cluster,
// cluster-period, and (for the treated arm) heterogeneity normals collapse
// into a single Gaussian convolution, evaluated by Gauss-Hermite.
double s1_arm_mean(int j, int b, const GaussHermite& gh) {
  const double sig2 = kTau2Logit + kTau2Logit / 4.0 + (b ? kBetaZ * kBetaZ * kVarDelta : 0.0);
  const double sig = std::sqrt(sig2);
  double out = 0.0;
  for (auto [x1, w] : {std::pair{0.0, 0.4}, {1.0, 0.6}}) {
    double acc = 0.0;
    for (int q = 0; q < gh.nodes.size(); ++q)
      acc += gh.weights[q] *
             expit(kMu0 + 0.2 * j + kBetaZ * b + kBetaX1 * x1 + sig * gh.nodes[q]);
    out += w * acc;
  }
  return out;
}

OracleResult oracle_s1(const ScenarioSpec& spec) {
  OracleResult o;
  o.method = "quadrature";
  const int J = spec.J;
  GaussHermite gh64 = gauss_hermite_normal(64);
  GaussHermite gh48 = gauss_hermite_normal(48);
  Vector all(J);
  double err = 0.0;
  for (int j = 1; j <= J; ++j) {
    double d64 = s1_arm_mean(j, 1, gh64) - s1_arm_mean(j, 0, gh64);
    double d48 = s1_arm_mean(j, 1, gh48) - s1_arm_mean(j, 0, gh48);
    all[j - 1] = d64;
    err = std::max(err, std::fabs(d64 - d48));
  }
  o.numeric_error = err;
  if (err > 1e-4)
    throw std::runtime_error("oracle quadrature error " + std::to_string(err) +
                             " above tolerance 1e-4");
  for (int j = 2; j <= J - 1; ++j) o.periods.push_back(j);
  o.per_period.resize(o.periods.size());
  for (size_t i = 0; i < o.periods.size(); ++i)
    o.per_period[static_cast<int>(i)] = all[o.periods[i] - 1];
  o.p_avg = o.per_period.mean();
  TiltingWeights tw = tilting_weights(spec.design());
  double num = 0.0;
  for (int j = 1; j <= J; ++j) num += tw.lambda[j - 1] * all[j - 1];
  o.p_ato = num / tw.lambda.sum();
  return o;
}

OracleResult oracle_linear(const ScenarioSpec& spec) {
  OracleResult o;
  o.method = "analytic";
  const int J = spec.J;
  const bool xo = spec.scenario == 3;
  for (int j = xo ? 1 : 2; j <= J; ++j) o.periods.push_back(j);
  o.per_period.resize(o.periods.size());
  for (size_t i = 0; i < o.periods.size(); ++i) {
    int j = o.periods[i];
    o.per_period[static_cast<int>(i)] = xo ? scenario3_effect(j, J) : scenario2_effect(j, J);
  }
  o.p_avg = o.per_period.mean();
  o.p_ato = o.p_avg;  // uniform tilting over the identified periods in PB/XO
  return o;
}

OracleResult oracle_s4(const ScenarioSpec& spec) {
  OracleResult o;
  o.method = "closed-form";
  const int J = spec.J;
  const double f_x1 = 1.0 - 0.6 + 0.6 * std::exp(kBetaX1);
  const double g_re = std::exp(0.5 * (kTau2Logit + kTau2Logit / 4.0));
  const double t_eff = std::exp(kBetaZ + 0.5 * kBetaZ * kBetaZ * kVarDelta);
  Vector all(J);
  for (int j = 1; j <= J; ++j) all[j - 1] = std::exp(kMu0 + j) * f_x1 * g_re * (t_eff - 1.0);
  for (int j = 2; j <= J - 1; ++j) o.periods.push_back(j);
  o.per_period.resize(o.periods.size());
  for (size_t i = 0; i < o.periods.size(); ++i)
    o.per_period[static_cast<int>(i)] = all[o.periods[i] - 1];
  o.p_avg = o.per_period.mean();
  TiltingWeights tw = tilting_weights(spec.design());
  double num = 0.0;
  for (int j = 1; j <= J; ++j) num += tw.lambda[j - 1] * all[j - 1];
  o.p_ato = num / tw.lambda.sum();
  return o;
}

}  // namespace

OracleResult oracle_estimands(const ScenarioSpec& spec) {
  switch (spec.scenario) {
    case 1: return oracle_s1(spec);
    case 2:
    case 3: return oracle_linear(spec);
    case 4: return oracle_s4(spec);
  }
  throw std::invalid_argument("scenario must be 1..4");
}

McOracle mc_oracle_scenario4(const ScenarioSpec& spec, std::int64_t draws, std::uint64_t seed) {
  Rng rng{seed, 4};
  double sum = 0.0, sumsq = 0.0;
  for (std::int64_t t = 0; t < draws; ++t) {
    double delta = std::sqrt(kVarDelta) * rng.normal();
    double x1 = rng.bernoulli(rng.beta(6.0, 4.0));
    double al = std::sqrt(kTau2Logit) * rng.normal();
    double ga = std::sqrt(kTau2Logit / 4.0) * rng.normal();
    double base = std::exp(kBetaX1 * x1 + al + ga);
    double d = base * (std::exp(kBetaZ * (1 + delta)) - 1.0);
    sum += d;
    sumsq += d * d;
  }
  double mean = sum / draws;
  double sd = std::sqrt((sumsq / draws - mean * mean) / (draws - 1.0));
  McOracle mc;
  const int J = spec.J;
  mc.per_period.resize(J - 2);
  mc.three_se.resize(J - 2);
  for (int j = 2; j <= J - 1; ++j) {
    double scale = std::exp(kMu0 + j);
    mc.per_period[j - 2] = scale * mean;
    mc.three_se[j - 2] = 3.0 * scale * sd;
  }
  return mc;
}

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::LinearConstant: return "linear_fe_constant";
    case EstimatorKind::LinearPAvg: return "linear_fe_pavg";
    case EstimatorKind::GCompConstant: return "gcomp_constant";
    case EstimatorKind::GCompPAvg: return "gcomp_pavg";
  }
  return "?";
}

std::vector<EstimatorKind> default_estimators(int scenario) {
  switch (scenario) {
    case 1:
    case 4:
      return {EstimatorKind::LinearConstant, EstimatorKind::LinearPAvg,
              EstimatorKind::GCompConstant, EstimatorKind::GCompPAvg};
    case 2: return {EstimatorKind::LinearConstant, EstimatorKind::LinearPAvg};
    case 3: return {EstimatorKind::LinearConstant};
  }
  throw std::invalid_argument("scenario must be 1..4");
}

ReplicateOutcome apply_estimator(EstimatorKind kind, const TrialData& data,
                                 const VarianceMenu& variance) {
  ReplicateOutcome out;
  try {
    switch (kind) {
      case EstimatorKind::LinearConstant:
      case EstimatorKind::LinearPAvg: {
        const bool constant = kind == EstimatorKind::LinearConstant;
        LinearFitResult fit = fit_linear_fe(
            data, constant ? TreatmentStructure::Constant : TreatmentStructure::PeriodSpecific);
        Vector c = Vector::Zero(fit.layout.ncols());
        if (constant)
          c[fit.layout.treat_offset()] = 1.0;
        else
          c = period_average(fit).contrast;
        out.estimate = c.dot(fit.beta);
        if (variance.cr0) {
          Matrix V = sandwich_cr0(fit.per_cluster_score, fit.bread);
          Vector ck = fit.contrast_kept(c);
          out.var_cr0 = ck.dot(V * ck);
        }
        if (variance.jackknife) out.var_jk = jackknife_linear_contrast(fit, c).variance;
        break;
      }
      case EstimatorKind::GCompConstant:
      case EstimatorKind::GCompPAvg: {
        const bool constant = kind == EstimatorKind::GCompConstant;
        const TreatmentStructure structure =
            constant ? TreatmentStructure::Constant : TreatmentStructure::PeriodSpecific;
        PoissonFitResult fit = fit_poisson_fe(data, structure);
        GCompReport rep = g_compute(fit);
        Vector cdelta = constant ? Vector::Constant(1, 1.0)
                                 : Vector::Constant(rep.deltas.size(),
                                                    1.0 / rep.deltas.size());
        out.estimate = cdelta.dot(rep.deltas);
        if (variance.cr0) {
          StackedScore ss(fit);
          Vector th = ss.theta_hat();
          Matrix V = sandwich_cr0(ss.psi(th), ss.bread(th));
          Vector c = Vector::Zero(ss.dim());
          c.segment(ss.delta_offset(), ss.delta_dim()) = cdelta;
          out.var_cr0 = c.dot(V * c);
        }
        if (variance.jackknife && variance.jackknife_gcomp) {
          Vector warm = fit.beta;
          auto estimator = [structure, constant, warm](const TrialData& d) {
            PoissonFitResult f = fit_poisson_fe(d, structure, PoissonFitOptions{}, &warm);
            GCompReport r = g_compute(f);
            return constant ? r.deltas[0] : r.deltas.mean();
          };
          out.var_jk = jackknife(data, estimator).variance;
        }
        break;
      }
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

StudyResult run_study(const ScenarioSpec& spec, const std::vector<EstimatorKind>& menu,
                      const VarianceMenu& variance) {
  StudyResult result;
  result.spec = spec;
  result.replicates.assign(spec.replicates, std::vector<ReplicateOutcome>(menu.size()));
  parallel_for(spec.replicates, spec.threads, [&](int r) {
    TrialData data = generate(spec, r);
    for (size_t e = 0; e < menu.size(); ++e)
      result.replicates[r][e] = apply_estimator(menu[e], data, variance);
  });

  OracleResult oracle = oracle_estimands(spec);
  const double z975 = norm_quantile(0.975);
  const double t975 = spec.m >= 3 ? t_quantile(0.975, spec.m - 2) : 0.0;
  for (size_t e = 0; e < menu.size(); ++e) {
    StudyRow row;
    row.estimator = menu[e];
    const bool constant_target = menu[e] == EstimatorKind::LinearConstant ||
                                 menu[e] == EstimatorKind::GCompConstant;
    row.oracle = constant_target ? oracle.p_ato : oracle.p_avg;
    row.estimand = (constant_target && spec.scenario != 2 && spec.scenario != 3) ? "P-ATO"
                                                                                 : "P-avg";
    const bool have_jk = variance.jackknife &&
                         (variance.jackknife_gcomp || menu[e] == EstimatorKind::LinearConstant ||
                          menu[e] == EstimatorKind::LinearPAvg);
    double sum = 0.0, sumsq = 0.0, sum_cr0 = 0.0, sum_jk = 0.0;
    int hits_cr0 = 0, hits_jk = 0;
    for (int r = 0; r < spec.replicates; ++r) {
      const auto& rep = result.replicates[r][e];
      if (!rep.ok) {
        ++row.n_fail;
        continue;
      }
      ++row.n_ok;
      sum += rep.estimate;
      sumsq += rep.estimate * rep.estimate;
      sum_cr0 += rep.var_cr0;
      sum_jk += rep.var_jk;
      if (variance.cr0) {
        double h = z975 * std::sqrt(std::max(0.0, rep.var_cr0));
        if (std::fabs(rep.estimate - row.oracle) <= h) ++hits_cr0;
      }
      if (have_jk) {
        double h = t975 * std::sqrt(std::max(0.0, rep.var_jk));
        if (std::fabs(rep.estimate - row.oracle) <= h) ++hits_jk;
      }
    }
    if (row.n_ok > 1) {
      row.mean_estimate = sum / row.n_ok;
      row.emp_var = (sumsq - sum * sum / row.n_ok) / (row.n_ok - 1.0);
      row.pct_rel_bias = 100.0 * (row.mean_estimate - row.oracle) / row.oracle;
      row.mean_cr0 = variance.cr0 ? sum_cr0 / row.n_ok : std::nan("");
      row.mean_jk = have_jk ? sum_jk / row.n_ok : std::nan("");
      row.cp_cr0 = variance.cr0 ? static_cast<double>(hits_cr0) / row.n_ok : std::nan("");
      row.cp_jk_t = have_jk ? static_cast<double>(hits_jk) / row.n_ok : std::nan("");
    }
    result.rows.push_back(row);
  }
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::pair<std::string, std::string> table_names(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::LinearConstant: return {"linear FE", "Constant"};
    case EstimatorKind::LinearPAvg: return {"linear FE", "P-avg"};
    case EstimatorKind::GCompConstant: return {"g-comp", "Constant"};
    case EstimatorKind::GCompPAvg: return {"g-comp", "P-avg"};
  }
  return {"?", "?"};
}

}  // namespace

std::string StudyResult::table_csv(bool with_failures) const {
  std::ostringstream os;
  os << "scenario,model,estimand,point_est,pct_rel_bias,emp_var,cr0,jk,cp_cr0,cp_jk_t";
  if (with_failures) os << ",n_fail";
  os << "\n";
  for (const auto& row : rows) {
    auto [model, point] = table_names(row.estimator);
    os << spec.scenario << ',' << model << ',' << row.estimand << ',' << point << ','
       << fmt(row.pct_rel_bias) << ',' << fmt(row.emp_var) << ',' << fmt(row.mean_cr0) << ','
       << fmt(row.mean_jk) << ',' << fmt(row.cp_cr0) << ',' << fmt(row.cp_jk_t);
    if (with_failures) os << ',' << row.n_fail;
    os << "\n";
  }
  return os.str();
}

std::string StudyResult::replicate_csv() const {
  std::ostringstream os;
  os << "replicate,estimator,ok,estimate,var_cr0,var_jk,error\n";
  for (size_t r = 0; r < replicates.size(); ++r)
    for (size_t e = 0; e < rows.size(); ++e) {
      const auto& rep = replicates[r][e];
      os << r << ',' << to_string(rows[e].estimator) << ',' << (rep.ok ? 1 : 0) << ','
         << fmt(rep.estimate) << ',' << fmt(rep.var_cr0) << ',' << fmt(rep.var_jk) << ",\""
         << rep.error << "\"\n";
    }
  return os.str();
}

std::string StudyResult::plot_data_csv() const {
  std::ostringstream os;
  os << "estimator,estimand,metric,value\n";
  for (const auto& row : rows) {
    auto [model, point] = table_names(row.estimator);
    std::string id = model + "/" + point;
    auto emit = [&](const std::string& metric, double v) {
      os << id << ',' << row.estimand << ',' << metric << ',' << fmt(v) << "\n";
    };
    emit("pct_rel_bias", row.pct_rel_bias);
    emit("emp_var", row.emp_var);
    emit("cr0", row.mean_cr0);
    emit("jk", row.mean_jk);
    emit("cp_cr0", row.cp_cr0);
    emit("cp_jk_t", row.cp_jk_t);
  }
  return os.str();
}

nlohmann::json StudyResult::to_json() const {
  nlohmann::json rj = nlohmann::json::array();
  for (const auto& row : rows) {
    auto [model, point] = table_names(row.estimator);
    rj.push_back({{"model", model},
                  {"point_est", point},
                  {"estimand", row.estimand},
                  {"oracle", row.oracle},
                  {"mean_estimate", row.mean_estimate},
                  {"pct_rel_bias", row.pct_rel_bias},
                  {"emp_var", row.emp_var},
                  {"cr0", row.mean_cr0},
                  {"jk", row.mean_jk},
                  {"cp_cr0", row.cp_cr0},
                  {"cp_jk_t", row.cp_jk_t},
                  {"n_fail", row.n_fail},
                  {"n_ok", row.n_ok}});
  }
  return {{"schema_version", 1}, {"spec", spec.to_json()}, {"rows", rj}};
}

}  // namespace wedgefe
