#pragma once

#include "retention/dataset.hpp"
#include "retention/design.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace retention {

// U equal-width intervals covering (0, end]. Interval u (0-based) is
// [u*width, (u+1)*width); times at or beyond `end` map to the last one.
class Partition {
 public:
  Partition() = default;
  Partition(std::size_t intervals, double end);

  std::size_t intervals() const { return intervals_; }
  double end() const { return end_; }
  double width() const { return end_ / static_cast<double>(intervals_); }
  double cutpoint(std::size_t u) const;
  std::vector<double> cutpoints() const;
  std::size_t lookup(double w) const;

 private:
  std::size_t intervals_ = 1;
  double end_ = 1.0;
};

// Natural-scale parameters of one cause-specific hazard model.
struct HazardParams {
  Eigen::VectorXd log_theta;
  Eigen::VectorXd beta;
  double eta = 0.0;
  double rho = 0.5;
  double sigma = 1.0;

  void validate() const;
};

// At-risk records of one stratum. Each cause model reads the same rows and
// treats records of the other event types as censored for that cause.
struct StratumData {
  Eigen::MatrixXd x;
  Eigen::VectorXd waiting;
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }
  std::vector<int> cause_indicator(int cause) const;

  static StratumData from_records(const std::vector<const VisitRecord*>& records, const DesignSpec& design);
};

Partition build_partition(const StratumData& stratum, std::size_t intervals);

double hazard_at(const HazardParams& params, const Partition& partition, double w, const Eigen::VectorXd& x);
double cumulative_hazard(const HazardParams& params, const Partition& partition, double w, const Eigen::VectorXd& x);

// Sum over records of the log cause-specific subdensity (events) or the
// log joint survival (censored records) under the two cause models.
double log_likelihood(const HazardParams& params_return, const HazardParams& params_death, const Partition& partition,
                      const StratumData& data);

// The part of log_likelihood that depends on one cause's parameters.
double cause_log_likelihood(const HazardParams& params, const Partition& partition, const StratumData& data, int cause);

struct PriorConfig {
  double coef_variance = 3.0;  // beta ~ N(0, coef_variance)
  double eta_sd = 5.0;         // eta ~ N(0, eta_sd^2)
  double sigma_scale = 1.0;    // sigma ~ HalfNormal(sigma_scale)
};

// Log density of the AR(1) process on log_theta, the coefficient prior and
// the hyperpriors, on the natural scale (no change-of-variable terms).
double log_prior(const HazardParams& params, const PriorConfig& prior = {});

// Log posterior of one (stratum, cause) model in the sampler's coordinates:
// [eps_1..eps_U, beta, eta, logit(rho), log(sigma)], with log_theta rebuilt
// from the innovations eps (non-centered AR(1)).
class CauseModel {
 public:
  CauseModel(Partition partition, const StratumData& data, int cause, PriorConfig prior = {});

  std::size_t dim() const { return intervals_ + predictors_ + 3; }
  std::size_t intervals() const { return intervals_; }
  std::size_t predictors() const { return predictors_; }
  const Partition& partition() const { return partition_; }

  HazardParams unpack(const Eigen::VectorXd& q) const;
  Eigen::VectorXd pack(const HazardParams& params) const;

  // Throws NonFiniteValue when the value or gradient overflows.
  std::pair<double, Eigen::VectorXd> log_posterior_and_grad(const Eigen::VectorXd& q) const;
  double log_posterior(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const;

  // Constant hazard at the crude event rate, beta = 0, rho = sigma = 0.5.
  Eigen::VectorXd initial_point() const;
  std::vector<std::string> parameter_names() const;

  std::size_t events() const { return n_events_; }
  double exposure() const { return exposure_; }

 private:
  Partition partition_;
  PriorConfig prior_;
  std::size_t intervals_;
  std::size_t predictors_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd event_;
  std::vector<std::size_t> interval_of_;
  Eigen::VectorXd partial_;
  Eigen::VectorXd events_per_interval_;
  std::size_t n_events_ = 0;
  double exposure_ = 0.0;
};

}  // namespace retention
