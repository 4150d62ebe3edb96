#pragma once

#include "retention/dataset.hpp"
#include "retention/random.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace retention {

inline constexpr std::size_t kDgpCovariates = 6;
using CovariateVector = std::array<double, kDgpCovariates>;

enum class MissingnessLevel { None, Low, High };
enum class CensoringLevel { Low, High };

std::string level_name(MissingnessLevel level);
std::string level_name(CensoringLevel level);
MissingnessLevel parse_missingness(const std::string& text);
CensoringLevel parse_censoring(const std::string& text);

// Linear predictor intercept + coef . x over the six latent covariates.
struct LinearPredictor {
  double intercept = 0.0;
  CovariateVector coef{};

  double operator()(const CovariateVector& x) const;
  nlohmann::json to_json() const;
  static LinearPredictor from_json(const nlohmann::json& j);
};

// Covariates x1..x3 are binary, x4..x6 standard normal; x3 and x6 can be
// masked, with masking driven by the four always-observed covariates.
struct DgpParams {
  std::array<double, 3> binary_prob{0.5, 0.4, 0.5};
  bool missingness = true;
  LinearPredictor miss_x3;
  LinearPredictor miss_x6;

  std::vector<double> schedule_options{2.0, 4.0, 8.0};
  // Multinomial-logit scores on the observed (zero-filled) covariates,
  // one per option; the first is the reference.
  std::vector<LinearPredictor> schedule;

  // Weibull proportional hazards: H(t) = exp(lp) * t^shape.
  double death_shape = 1.2;
  LinearPredictor death;
  double censor_shape = 1.0;
  LinearPredictor censor;
  double censor_schedule = 0.0;  // coefficient on log(s / 4)
  bool censoring = true;

  // Return time: point mass at the schedule with weight point_mass, else
  // Weibull(return_shape) with scale exp(lp) * (s / 4)^gamma(x).
  double point_mass = 0.3;
  double return_shape = 2.5;
  LinearPredictor return_scale;
  LinearPredictor return_gamma;  // on the logit scale

  double return_scale_at(const CovariateVector& x, double schedule) const;
  double gamma_at(const CovariateVector& x) const;

  nlohmann::json to_json() const;
  static DgpParams from_json(const nlohmann::json& j);
  // Fixed parameter block of a named scenario.
  static DgpParams preset(MissingnessLevel missingness, CensoringLevel censoring);
};

struct DgpConfig {
  std::size_t n_train = 500;
  std::size_t n_test = 500;
  MissingnessLevel missingness = MissingnessLevel::None;
  CensoringLevel censoring = CensoringLevel::Low;
  double delta = 2.0;
  std::uint64_t seed = 1;
  DgpParams params = DgpParams::preset(MissingnessLevel::None, CensoringLevel::Low);

  std::string name() const;
  nlohmann::json to_json() const;
  // Missing "params" falls back to the preset of the named levels.
  static DgpConfig from_json(const nlohmann::json& j);
};

struct LatentSubject {
  CovariateVector x{};
  std::array<bool, kDgpCovariates> monitored{};
  double schedule = 0.0;
  double return_time = 0.0;
  double death_time = 0.0;
  double censor_time = 0.0;
};

struct TruthRecord {
  std::string subject_id;
  double schedule = 0.0;
  std::vector<double> psi;  // per schedule option
  double optimal = 0.0;
  int label = 0;  // realized Y(delta) under the assigned schedule

  nlohmann::json to_json() const;
};

struct SimulatedData {
  Cohort train;
  Cohort test;
  std::vector<TruthRecord> truth;
  std::vector<LatentSubject> train_latent;
  std::vector<LatentSubject> test_latent;
};

LatentSubject draw_subject(const DgpParams& params, bool censored, Rng& rng);
VisitRecord to_record(const LatentSubject& subject, const std::string& id);

SimulatedData simulate_cohort(const DgpConfig& config);

// P(return within s + delta and before death) by adaptive quadrature.
double true_retention(const DgpParams& params, const CovariateVector& x, double schedule, double delta);
// The same probability by brute-force simulation of return/death pairs.
double true_retention_mc(const DgpParams& params, const CovariateVector& x, double schedule, double delta,
                         std::size_t draws, std::uint64_t seed);
// Argmax over the options of true_retention, smallest schedule on ties.
double true_optimal(const DgpParams& params, const CovariateVector& x, double delta);

struct CohortSummary {
  double censored = 0.0;
  double died = 0.0;
  double any_missing = 0.0;
  std::vector<double> schedule_shares;
};

CohortSummary summarize(const std::vector<LatentSubject>& subjects, const std::vector<double>& options);

// Bisection on the shared masking intercept to hit an any-missing share.
double calibrate_missingness(DgpParams params, double target, std::size_t n, std::uint64_t seed);
// Bisection on the censoring intercept to hit a censored share.
double calibrate_censoring(DgpParams params, double target, std::size_t n, std::uint64_t seed);

}  // namespace retention
