#pragma once

#include <Eigen/Dense>

namespace retention {

struct LogisticFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  int iterations = 0;
  bool converged = false;  // false when the iteration cap was hit

  double predict(const Eigen::VectorXd& x) const;
};

// Maximum likelihood by iteratively reweighted least squares. Stops once
// the largest absolute score is below `tolerance`; throws
// SingularInformation when the information matrix is not positive definite.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_iterations = 100,
                         double tolerance = 1e-8);

}  // namespace retention
