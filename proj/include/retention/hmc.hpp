#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace retention {

struct HmcConfig {
  int warmup = 1000;
  int samples = 2000;
  int leapfrog = 32;
  double target_accept = 0.8;
  int chains = 4;
  std::uint64_t seed = 20240101;
  double max_energy_error = 1000.0;
  // Sampling-phase step sizes are drawn uniformly within +-step_jitter of
  // the adapted value to break periodic fixed-length trajectories.
  double step_jitter = 0.1;
  int threads = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static HmcConfig from_json(const nlohmann::json& j);
};

// Returns the log density at q and writes its gradient; returns -inf (or
// NaN) outside the support, which the sampler treats as a divergence.
using LogDensity = std::function<double(const Eigen::VectorXd& q, Eigen::VectorXd& grad)>;

struct ChainResult {
  Eigen::MatrixXd draws;  // samples x dim
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;
  int divergences = 0;
  double accept_rate = 0.0;
};

struct HmcResult {
  std::vector<ChainResult> chains;

  Eigen::MatrixXd pooled() const;
  int divergences() const;
  double mean_accept_rate() const;
};

ChainResult hmc_chain(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config,
                      std::uint64_t chain_seed);

// Runs config.chains independent chains; chain c draws from the stream
// derive_seed(config.seed, {stream, c}).
HmcResult hmc_sample(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config,
                     std::uint64_t stream = 0);

struct ParameterDiagnostics {
  double rhat = 0.0;
  double ess = 0.0;
  bool flagged = false;
};

double split_rhat(const std::vector<Eigen::VectorXd>& chains);
double effective_sample_size(const std::vector<Eigen::VectorXd>& chains);

// Split R-hat and ESS for every column of the per-chain draw matrices.
// Flags a parameter whose statistics are undefined, whose R-hat exceeds
// 1.05, or whose ESS is below 100.
std::vector<ParameterDiagnostics> diagnostics(const std::vector<Eigen::MatrixXd>& chains);

}  // namespace retention
