#pragma once

#include "retention/dataset.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace retention {

// Cubic B-spline basis without the intercept column, matching the usual
// bs(x, df = 4) construction: boundary knots at the sample range and one
// interior knot at the median. Inputs outside the range are clamped.
class SplineBasis {
 public:
  SplineBasis() = default;
  SplineBasis(double lower, double upper, std::vector<double> interior, int degree = 3);

  static SplineBasis from_sample(std::vector<double> sample, int df = 4, int degree = 3);

  std::size_t size() const { return interior_.size() + static_cast<std::size_t>(degree_); }
  std::vector<double> evaluate(double x) const;
  // All interior_ + degree + 1 functions, including the dropped first one.
  std::vector<double> evaluate_full(double x) const;

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  const std::vector<double>& interior() const { return interior_; }
  int degree() const { return degree_; }

 private:
  double lower_ = 0.0;
  double upper_ = 1.0;
  std::vector<double> interior_;
  int degree_ = 3;
  std::vector<double> knots_;
};

enum class ColumnKind { Covariate, Spline, PrevWaiting, PrevSchedule };

struct DesignColumn {
  ColumnKind kind = ColumnKind::Covariate;
  std::size_t covariate = 0;
  std::size_t basis_index = 0;
};

// Column layout of the predictor vector X_j for one stratum: the monitored
// covariates of its pattern in covariate order, then the previous waiting
// time and schedule for visits after the first.
class DesignSpec {
 public:
  DesignSpec() = default;

  std::size_t dim() const { return columns_.size(); }
  const std::vector<DesignColumn>& columns() const { return columns_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& pattern() const { return pattern_; }
  const std::map<std::size_t, SplineBasis>& splines() const { return splines_; }

  Eigen::VectorXd row(const Observation& obs) const;
  Eigen::MatrixXd matrix(const std::vector<const VisitRecord*>& records) const;

  nlohmann::json to_json() const;
  static DesignSpec from_json(const nlohmann::json& j);

  friend DesignSpec build_design(const std::vector<const VisitRecord*>& records,
                                 const std::vector<std::string>& covariate_names,
                                 const std::vector<std::string>& spline_covariates, int visit);

 private:
  std::string pattern_;
  std::vector<DesignColumn> columns_;
  std::vector<std::string> names_;
  std::vector<std::string> covariate_names_;
  std::map<std::size_t, SplineBasis> splines_;
};

DesignSpec build_design(const std::vector<const VisitRecord*>& records,
                        const std::vector<std::string>& covariate_names,
                        const std::vector<std::string>& spline_covariates, int visit);

}  // namespace retention
