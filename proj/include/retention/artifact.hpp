#pragma once

#include "retention/dataset.hpp"
#include "retention/design.hpp"
#include "retention/hazard_model.hpp"
#include "retention/hmc.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace retention {

inline constexpr double kLtfuDelta = 90.0 / 7.0;

struct FitConfig {
  HmcConfig hmc;
  std::size_t intervals = 20;
  bool stratify_site = false;
  std::vector<std::string> spline_covariates;
  PriorConfig prior;
  int min_return_events = kLowInformationEvents;
  int threads = 0;

  nlohmann::json to_json() const;
  static FitConfig from_json(const nlohmann::json& j);
};

// Posterior draws of one cause model, one row per draw.
struct PosteriorDraws {
  Eigen::MatrixXd log_theta;
  Eigen::MatrixXd beta;
  Eigen::VectorXd eta;
  Eigen::VectorXd rho;
  Eigen::VectorXd sigma;

  std::size_t size() const { return static_cast<std::size_t>(eta.size()); }
  HazardParams draw(std::size_t a) const;
  void resize(std::size_t draws, std::size_t intervals, std::size_t predictors);
  void set(std::size_t a, const HazardParams& params);
};

struct ModelDiagnostics {
  std::vector<std::string> names;
  std::vector<ParameterDiagnostics> parameters;
  int divergences = 0;
  double accept_rate = 0.0;
  std::vector<double> step_sizes;
};

struct FittedModel {
  StratumKey key;
  Partition partition;
  DesignSpec design;
  PosteriorDraws draws;
  ModelDiagnostics diagnostics;
  std::size_t n_records = 0;
  std::size_t n_events = 0;
  bool low_information = false;
};

struct ArtifactMetadata {
  int visit = 1;
  std::vector<std::string> covariate_names;
  std::vector<double> schedule_options;
  bool stratify_site = false;
  double default_delta = kLtfuDelta;
  FitConfig fit;
};

class PosteriorArtifact {
 public:
  static constexpr int kVersion = 1;

  ArtifactMetadata metadata;
  std::map<StratumKey, FittedModel> models;

  // Throws UnknownStratum.
  const FittedModel& model(const StratumKey& key) const;
  bool contains(const StratumKey& key) const { return models.count(key) > 0; }
  std::size_t draw_count() const;
  std::size_t cell_count() const;

  nlohmann::json to_json() const;
  static PosteriorArtifact from_json(const nlohmann::json& j);

  // `.json` paths are written as text, anything else as CBOR.
  void save(const std::filesystem::path& path) const;
  static PosteriorArtifact load(const std::filesystem::path& path);
};

// Samples one (stratum, cause) model.
FittedModel fit_model(const StratumKey& key, const std::vector<const VisitRecord*>& records,
                      const std::vector<std::string>& covariate_names, const FitConfig& config);

// One HMC fit per (stratum, cause) of the visit-j risk set.
PosteriorArtifact fit_all_strata(const Cohort& cohort, int visit, const FitConfig& config);

}  // namespace retention
