#pragma once

#include "retention/artifact.hpp"
#include "retention/gcomp.hpp"
#include "retention/simulator.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace retention {

// Mann-Whitney AUC with ties counted half. Throws OneClassOnly.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Share of exact matches. Throws LengthMismatch.
double optimal_accuracy(const std::vector<double>& estimated, const std::vector<double>& truth);
double optimal_accuracy(const std::vector<double>& estimated, const std::vector<TruthRecord>& truth);

enum class Method { Btm, Logistic };
std::string method_name(Method m);
Method parse_method(const std::string& text);

struct MethodResult {
  std::vector<double> scores;  // predicted retention under the assigned schedule
  std::vector<double> modes;   // estimated optimal schedule
  std::size_t fallbacks = 0;   // test subjects without a fitted stratum
};

// Pattern-stratified logistic regression of the dichotomized label on the
// observed covariates and schedule indicators, censored records counted as
// not retained.
MethodResult logistic_method(const Cohort& train, const Cohort& test, double delta);

MethodResult btm_method(const Cohort& train, const Cohort& test, const FitConfig& fit, const GcompConfig& gcomp);

struct ExperimentConfig {
  std::vector<DgpConfig> scenarios;
  std::size_t replications = 50;
  std::vector<Method> methods{Method::Btm, Method::Logistic};
  FitConfig fit;
  GcompConfig gcomp;
  std::uint64_t seed = 20240101;
  int threads = 0;

  nlohmann::json to_json() const;
  // {"scenarios": [...], "replications", "seed", "fit", "gcomp", "methods"};
  // the default grid is the six censoring x missingness presets.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static std::vector<DgpConfig> default_grid();
};

struct ReplicateResult {
  std::size_t scenario = 0;
  std::size_t replicate = 0;
  Method method = Method::Btm;
  double auc = 0.0;
  double accuracy = 0.0;
  std::size_t fallbacks = 0;
  double censored = 0.0;
  double any_missing = 0.0;
};

struct ReportRow {
  std::string scenario;
  std::string censoring;
  std::string missingness;
  Method method = Method::Btm;
  std::size_t replications = 0;
  double auc_mean = 0.0;
  double auc_se = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_se = 0.0;
  double fallbacks_mean = 0.0;
  double censored_mean = 0.0;
  double any_missing_mean = 0.0;
};

struct ExperimentReport {
  std::vector<ReplicateResult> replicates;
  std::vector<ReportRow> rows;

  const ReportRow& row(const std::string& censoring, const std::string& missingness, Method method) const;
  void write_csv(std::ostream& out) const;
  void write_replicates_csv(std::ostream& out) const;
  // Two panels (AUC, optimal accuracy) with censoring across and
  // missingness down.
  void write_table(std::ostream& out) const;
};

ReplicateResult run_replicate(const DgpConfig& scenario, Method method, const SimulatedData& data,
                              const ExperimentConfig& config, std::uint64_t seed);

ExperimentReport run_experiment(const ExperimentConfig& config);

}  // namespace retention
