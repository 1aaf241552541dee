#pragma once

#include <cstdint>
#include <optional>

#include "wedgefe/data.hpp"
#include "wedgefe/rng.hpp"

namespace wedgefe {

// Scenario presets: 1 SW-CRT binary (J=4 small-m, J=6 at m>=100), 2 PB-CQT
// continuous with cluster-level confounding, 3 CRXO continuous, 4 SW-CRT
// negative-binomial counts (J=6).
struct ScenarioSpec {
  int scenario = 1;
  int m = 6;
  int J = 4;
  int replicates = 1000;
  double mean_size = 100.0;
  std::uint64_t seed = 1;
  int threads = 1;
  bool randomized_assignment = false;  // scenario-2 variant (A3 instead of confounding)

  static ScenarioSpec preset(int scenario, int m, int replicates, std::uint64_t seed,
                             std::optional<int> J_override = std::nullopt);
  TrialDesign design() const;
  nlohmann::json to_json() const;
  static ScenarioSpec from_json(const nlohmann::json& j);
};

TrialData generate_scenario1(const ScenarioSpec& spec, int replicate);
TrialData generate_scenario2(const ScenarioSpec& spec, int replicate);
TrialData generate_scenario3(const ScenarioSpec& spec, int replicate);
TrialData generate_scenario4(const ScenarioSpec& spec, int replicate);
TrialData generate(const ScenarioSpec& spec, int replicate);

struct OracleResult {
  std::vector<int> periods;  // identified periods (j = 2..J-1 for SW, 2..J PB, 1..J XO)
  Vector per_period;         // Delta_j on those periods
  double p_avg = 0.0;
  double p_ato = 0.0;
  std::string method;        // quadrature | closed-form | analytic | monte-carlo
  double numeric_error = 0.0;
  nlohmann::json to_json() const;
};

// True estimands: scenario 1 by Gauss-Hermite quadrature of the logit mixture,
// scenarios 2-3 analytic, scenario 4 by exact moment evaluation of the
// log-mean mixture.
OracleResult oracle_estimands(const ScenarioSpec& spec);

// Brute-force Monte Carlo oracle for scenario 4 (mean + 3-SE band) used to
// cross-check the closed form.
struct McOracle {
  Vector per_period;
  Vector three_se;
};
McOracle mc_oracle_scenario4(const ScenarioSpec& spec, std::int64_t draws,
                             std::uint64_t seed = 991);

enum class EstimatorKind { LinearConstant, LinearPAvg, GCompConstant, GCompPAvg };
std::string to_string(EstimatorKind k);

struct VarianceMenu {
  bool cr0 = true;
  bool jackknife = true;
  // g-comp jackknife refits the whole pipeline per cluster; allow turning it
  // off separately when only point estimates of the g-comp rows are needed
  bool jackknife_gcomp = true;
};

struct ReplicateOutcome {
  bool ok = false;
  double estimate = 0.0;
  double var_cr0 = 0.0;
  double var_jk = 0.0;
  std::string error;
};

struct StudyRow {
  EstimatorKind estimator;
  std::string estimand;  // target label (P-ATO / P-avg)
  double oracle = 0.0;
  double mean_estimate = 0.0;
  double pct_rel_bias = 0.0;
  double emp_var = 0.0;
  double mean_cr0 = 0.0;
  double mean_jk = 0.0;
  double cp_cr0 = 0.0;
  double cp_jk_t = 0.0;
  int n_fail = 0;
  int n_ok = 0;
};

struct StudyResult {
  ScenarioSpec spec;
  std::vector<StudyRow> rows;
  // per replicate x estimator
  std::vector<std::vector<ReplicateOutcome>> replicates;
  std::string table_csv(bool with_failures = true) const;
  std::string replicate_csv() const;
  std::string plot_data_csv() const;
  nlohmann::json to_json() const;
};

std::vector<EstimatorKind> default_estimators(int scenario);

// Monte Carlo replicate loop; deterministic given spec.seed regardless of
// thread count. Failed replicates are recorded per estimator and excluded
// from the summaries, never silently dropped.
StudyResult run_study(const ScenarioSpec& spec, const std::vector<EstimatorKind>& menu,
                      const VarianceMenu& variance = VarianceMenu{});

// One estimator on one dataset (shared by run_study and the CLI).
ReplicateOutcome apply_estimator(EstimatorKind kind, const TrialData& data,
                                 const VarianceMenu& variance);

}  // namespace wedgefe
