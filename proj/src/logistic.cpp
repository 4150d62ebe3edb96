#include "retention/logistic.hpp"

#include "retention/error.hpp"

#include <cmath>

namespace retention {

namespace {

double plogis(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double LogisticFit::predict(const Eigen::VectorXd& x) const { return plogis(x.dot(coef)); }

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_iterations, double tolerance) {
  if (x.rows() != y.size()) throw Error(ErrorCode::LengthMismatch, "design rows and labels differ in length");
  if (x.rows() == 0) throw Error(ErrorCode::InvalidArgument, "no observations");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  }
  LogisticFit fit;
  fit.coef = Eigen::VectorXd::Zero(x.cols());
  Eigen::MatrixXd info;
  for (int it = 0;; ++it) {
    const Eigen::VectorXd eta = x * fit.coef;
    Eigen::VectorXd p(eta.size());
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p[i] = plogis(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd score = x.transpose() * (y - p);
    info = x.transpose() * w.asDiagonal() * x;
    fit.iterations = it;
    if (score.cwiseAbs().maxCoeff() < tolerance) {
      fit.converged = true;
      break;
    }
    if (it == max_iterations) break;
    const Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularInformation, "information matrix is singular");
    const Eigen::VectorXd step = llt.solve(score);
    if (!step.allFinite()) throw Error(ErrorCode::SingularInformation, "information matrix is singular");
    fit.coef += step;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularInformation, "information matrix is singular");
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
  fit.se = cov.diagonal().cwiseSqrt();
  return fit;
}

}  // namespace retention
