#pragma once

#include "retention/artifact.hpp"
#include "retention/dataset.hpp"
#include "retention/hazard_model.hpp"
#include "retention/random.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace retention {

struct GcompConfig {
  std::size_t simulations = 1000;  // B per posterior draw
  std::optional<double> horizon;   // defaults to twice the partition end
  double delta = kLtfuDelta;
  std::uint64_t seed = 20240101;
  std::size_t max_draws = 0;  // 0 uses every posterior draw
  int threads = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GcompConfig from_json(const nlohmann::json& j);
};

// Piecewise-constant hazard for one covariate vector, with the last rate
// carried on to the horizon.
class PiecewiseHazard {
 public:
  PiecewiseHazard(const HazardParams& params, const Partition& partition, const Eigen::VectorXd& x, double horizon);
  PiecewiseHazard(std::vector<double> rates, const Partition& partition, double horizon);

  double cumulative(double w) const;
  double cdf(double w) const { return 1.0 - std::exp(-cumulative(w)); }
  double horizon() const { return horizon_; }
  // Exact inversion of one uniform; nullopt past the horizon.
  std::optional<double> invert(double u) const;
  std::optional<double> sample(Rng& rng) const { return invert(uniform_open(rng)); }

 private:
  void build();

  std::vector<double> rates_;
  std::vector<double> starts_;  // left edge of each interval
  std::vector<double> cum_;     // cumulative hazard at each left edge, plus the horizon
  double horizon_;
};

std::optional<double> sample_waiting_time(const HazardParams& params, const Partition& partition,
                                          const Eigen::VectorXd& x, double horizon, Rng& rng);

struct RetentionEstimate {
  std::string key;  // return-cause stratum key
  double schedule = 0.0;
  double delta = 0.0;
  std::vector<double> draws;
  double mean = 0.0;
  double median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;

  static RetentionEstimate summarize(std::vector<double> draws);
  nlohmann::json to_json() const;
};

struct OptimalSchedulePMF {
  std::vector<double> options;
  std::vector<std::size_t> counts;
  std::vector<double> pmf;
  double mode = 0.0;
  std::pair<double, double> triangle{0.0, 0.0};
  std::vector<RetentionEstimate> estimates;

  nlohmann::json to_json() const;
};

struct RetentionCurve {
  std::string key;
  double schedule = 0.0;
  std::vector<double> deltas;
  std::vector<RetentionEstimate> points;

  nlohmann::json to_json() const;
};

RetentionEstimate retention_probability(const PosteriorArtifact& artifact, const StratumCell& cell,
                                        const Observation& obs, const GcompConfig& config);

OptimalSchedulePMF optimal_schedule(const PosteriorArtifact& artifact, const std::string& pattern,
                                    const std::string& site, const Observation& obs,
                                    const std::vector<double>& options, const GcompConfig& config);

RetentionCurve subdistribution_curve(const PosteriorArtifact& artifact, const StratumCell& cell, const Observation& obs,
                                     const std::vector<double>& delta_grid, const GcompConfig& config);

// "LL", "LH", "HL" or "HH": posterior mean then CI width against the
// collection means, ties on the high side.
std::vector<std::string> triage_quadrants(const std::vector<RetentionEstimate>& estimates);

}  // namespace retention
