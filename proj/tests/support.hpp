#pragma once

#include "retention/artifact.hpp"
#include "retention/random.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace retention::testing {

// Per-draw interval rates of one cause model.
using RateDraws = std::vector<std::vector<double>>;

inline RateDraws constant_rates(double rate, std::size_t draws, std::size_t intervals = 1) {
  return RateDraws(draws, std::vector<double>(intervals, rate));
}

// Covariate-free visit-1 artifact; each cell gets a return and a death
// model with the given rate draws on a partition ending at `end`.
class ArtifactBuilder {
 public:
  explicit ArtifactBuilder(std::vector<std::string> covariates = {}) : covariates_(std::move(covariates)) {
    artifact_.metadata.covariate_names = covariates_;
  }

  ArtifactBuilder& cell(double schedule, const RateDraws& ret, const RateDraws& death, double end = 10.0,
                        const std::string& pattern = "") {
    const std::string p = pattern.empty() ? std::string(covariates_.size(), '0') : pattern;
    const StratumCell c{schedule, p, ""};
    add(make_key(1, 1, c), ret, end, p);
    add(make_key(1, 0, c), death, end, p);
    auto& opts = artifact_.metadata.schedule_options;
    if (std::find(opts.begin(), opts.end(), schedule) == opts.end()) {
      opts.push_back(schedule);
      std::sort(opts.begin(), opts.end());
    }
    return *this;
  }

  // Gives model `key` a coefficient vector on the monitored covariates.
  ArtifactBuilder& beta(const StratumKey& key, const std::vector<double>& b) {
    auto& m = artifact_.models.at(key);
    for (std::size_t a = 0; a < m.draws.size(); ++a) {
      for (std::size_t p = 0; p < b.size(); ++p) m.draws.beta(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(p)) = b[p];
    }
    return *this;
  }

  PosteriorArtifact build() const { return artifact_; }

 private:
  void add(const StratumKey& key, const RateDraws& rates, double end, const std::string& pattern) {
    VisitRecord dummy;
    dummy.waiting_time = end;
    dummy.scheduled_return = key.schedule;
    for (std::size_t i = 0; i < covariates_.size(); ++i) {
      dummy.obs.monitored.push_back(pattern[i] == '1');
      dummy.obs.values.push_back(pattern[i] == '1' ? 0.0 : std::nan(""));
    }
    FittedModel m;
    m.key = key;
    m.partition = Partition(rates.front().size(), end);
    m.design = build_design({&dummy}, covariates_, {}, 1);
    const auto predictors = m.design.dim();
    m.draws.resize(rates.size(), rates.front().size(), predictors);
    for (std::size_t a = 0; a < rates.size(); ++a) {
      HazardParams h;
      h.log_theta.resize(static_cast<Eigen::Index>(rates[a].size()));
      for (std::size_t u = 0; u < rates[a].size(); ++u) {
        // log(0) is stored as a very negative finite value.
        h.log_theta[static_cast<Eigen::Index>(u)] = rates[a][u] > 0 ? std::log(rates[a][u]) : -700.0;
      }
      h.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(predictors));
      h.eta = 0.0;
      h.rho = 0.5;
      h.sigma = 1.0;
      m.draws.set(a, h);
    }
    m.n_records = 1;
    artifact_.models[key] = std::move(m);
  }

  std::vector<std::string> covariates_;
  PosteriorArtifact artifact_;
};

inline Observation empty_observation(std::size_t covariates = 0) {
  Observation obs;
  obs.values.assign(covariates, std::nan(""));
  obs.monitored.assign(covariates, false);
  return obs;
}

}  // namespace retention::testing
