#include "retention/hazard_model.hpp"

#include "retention/error.hpp"

#include <cmath>
#include <numbers>

namespace retention {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

void check_time(double w) {
  if (!(w > 0)) throw Error(ErrorCode::NonPositiveTime, "time must be positive");
}

void check_dims(const HazardParams& params, const Partition& partition, Eigen::Index predictors) {
  if (static_cast<std::size_t>(params.log_theta.size()) != partition.intervals()) {
    throw Error(ErrorCode::DimensionMismatch, "log_theta has " + std::to_string(params.log_theta.size()) +
                                                  " entries for " + std::to_string(partition.intervals()) + " intervals");
  }
  if (params.beta.size() != predictors) {
    throw Error(ErrorCode::DimensionMismatch, "beta has " + std::to_string(params.beta.size()) + " entries for " +
                                                  std::to_string(predictors) + " predictors");
  }
}

}  // namespace

Partition::Partition(std::size_t intervals, double end) : intervals_(intervals), end_(end) {
  if (intervals == 0) throw Error(ErrorCode::InvalidArgument, "partition needs at least one interval");
  if (!(end > 0) || !std::isfinite(end)) throw Error(ErrorCode::InvalidArgument, "partition end must be positive");
}

double Partition::cutpoint(std::size_t u) const {
  return u == intervals_ ? end_ : static_cast<double>(u) * width();
}

std::vector<double> Partition::cutpoints() const {
  std::vector<double> c(intervals_ + 1);
  for (std::size_t u = 0; u <= intervals_; ++u) c[u] = cutpoint(u);
  return c;
}

std::size_t Partition::lookup(double w) const {
  if (w <= 0) return 0;
  const double pos = w / width();
  if (pos >= static_cast<double>(intervals_)) return intervals_ - 1;
  auto u = static_cast<std::size_t>(pos);
  // Guard the floor against rounding at cutpoints.
  if (u + 1 < intervals_ && w >= cutpoint(u + 1)) ++u;
  if (u > 0 && w < cutpoint(u)) --u;
  return u;
}

void HazardParams::validate() const {
  if (!log_theta.allFinite() || !beta.allFinite() || !std::isfinite(eta)) {
    throw Error(ErrorCode::NonFiniteValue, "hazard parameters must be finite");
  }
  if (!(rho >= 0 && rho < 1)) throw Error(ErrorCode::InvalidArgument, "rho must lie in [0, 1)");
  if (!(sigma > 0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
}

std::vector<int> StratumData::cause_indicator(int cause) const {
  const Event target = cause == 1 ? Event::Return : Event::Death;
  std::vector<int> d(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) d[i] = events[i] == target ? 1 : 0;
  return d;
}

StratumData StratumData::from_records(const std::vector<const VisitRecord*>& records, const DesignSpec& design) {
  StratumData data;
  data.x = design.matrix(records);
  data.waiting.resize(static_cast<Eigen::Index>(records.size()));
  data.events.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    data.waiting[static_cast<Eigen::Index>(i)] = records[i]->waiting_time;
    data.events.push_back(records[i]->event);
  }
  return data;
}

Partition build_partition(const StratumData& stratum, std::size_t intervals) {
  if (stratum.size() == 0) throw Error(ErrorCode::EmptyStratum, "cannot partition an empty stratum");
  if (intervals < 2) throw Error(ErrorCode::InvalidArgument, "partition needs at least two intervals");
  return Partition(intervals, stratum.waiting.maxCoeff());
}

double hazard_at(const HazardParams& params, const Partition& partition, double w, const Eigen::VectorXd& x) {
  check_time(w);
  check_dims(params, partition, x.size());
  return std::exp(params.log_theta[static_cast<Eigen::Index>(partition.lookup(w))] + x.dot(params.beta));
}

double cumulative_hazard(const HazardParams& params, const Partition& partition, double w, const Eigen::VectorXd& x) {
  check_time(w);
  check_dims(params, partition, x.size());
  const std::size_t last = partition.lookup(w);
  double base = 0.0;
  for (std::size_t u = 0; u < last; ++u) base += std::exp(params.log_theta[static_cast<Eigen::Index>(u)]) * partition.width();
  base += std::exp(params.log_theta[static_cast<Eigen::Index>(last)]) * (w - partition.cutpoint(last));
  return base * std::exp(x.dot(params.beta));
}

double cause_log_likelihood(const HazardParams& params, const Partition& partition, const StratumData& data, int cause) {
  check_dims(params, partition, data.x.cols());
  if (data.x.rows() != static_cast<Eigen::Index>(data.size()) || data.waiting.size() != data.x.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "stratum rows are misaligned");
  }
  const auto d = data.cause_indicator(cause);
  double ll = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = data.x.row(static_cast<Eigen::Index>(i)).transpose();
    const double w = data.waiting[static_cast<Eigen::Index>(i)];
    if (d[i]) ll += std::log(hazard_at(params, partition, w, row));
    ll -= cumulative_hazard(params, partition, w, row);
  }
  return ll;
}

double log_likelihood(const HazardParams& params_return, const HazardParams& params_death, const Partition& partition,
                      const StratumData& data) {
  return cause_log_likelihood(params_return, partition, data, 1) + cause_log_likelihood(params_death, partition, data, 0);
}

double log_prior(const HazardParams& params, const PriorConfig& prior) {
  params.validate();
  const auto& lt = params.log_theta;
  double lp = 0.0;
  for (Eigen::Index u = 0; u < lt.size(); ++u) {
    const double mean = u == 0 ? params.eta : params.eta * (1 - params.rho) + params.rho * lt[u - 1];
    lp += normal_logpdf(lt[u], mean, params.sigma);
  }
  const double coef_sd = std::sqrt(prior.coef_variance);
  for (Eigen::Index p = 0; p < params.beta.size(); ++p) lp += normal_logpdf(params.beta[p], 0.0, coef_sd);
  lp += normal_logpdf(params.eta, 0.0, prior.eta_sd);
  lp += std::log(2.0) + normal_logpdf(params.sigma, 0.0, prior.sigma_scale);
  return lp;  // rho ~ Uniform(0, 1) contributes log 1
}

CauseModel::CauseModel(Partition partition, const StratumData& data, int cause, PriorConfig prior)
    : partition_(partition),
      prior_(prior),
      intervals_(partition.intervals()),
      predictors_(static_cast<std::size_t>(data.x.cols())),
      x_(data.x) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyStratum, "cause model needs at least one record");
  if (x_.rows() != static_cast<Eigen::Index>(data.size()) || data.waiting.size() != x_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "stratum rows are misaligned");
  }
  const auto d = data.cause_indicator(cause);
  const auto n = static_cast<Eigen::Index>(data.size());
  event_.resize(n);
  partial_.resize(n);
  interval_of_.resize(data.size());
  events_per_interval_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(intervals_));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = data.waiting[i];
    if (!(w > 0)) throw Error(ErrorCode::NonPositiveTime, "waiting times must be positive");
    const std::size_t u = partition_.lookup(w);
    interval_of_[static_cast<std::size_t>(i)] = u;
    partial_[i] = std::min(w, partition_.end()) - partition_.cutpoint(u);
    event_[i] = d[static_cast<std::size_t>(i)];
    events_per_interval_[static_cast<Eigen::Index>(u)] += event_[i];
    n_events_ += static_cast<std::size_t>(d[static_cast<std::size_t>(i)]);
    exposure_ += w;
  }
}

HazardParams CauseModel::unpack(const Eigen::VectorXd& q) const {
  if (static_cast<std::size_t>(q.size()) != dim()) throw Error(ErrorCode::DimensionMismatch, "parameter vector has wrong size");
  const auto U = static_cast<Eigen::Index>(intervals_);
  const auto P = static_cast<Eigen::Index>(predictors_);
  HazardParams h;
  h.eta = q[U + P];
  h.rho = 1.0 / (1.0 + std::exp(-q[U + P + 1]));
  h.sigma = std::exp(q[U + P + 2]);
  h.beta = q.segment(U, P);
  h.log_theta.resize(U);
  for (Eigen::Index u = 0; u < U; ++u) {
    const double mean = u == 0 ? h.eta : h.eta * (1 - h.rho) + h.rho * h.log_theta[u - 1];
    h.log_theta[u] = mean + h.sigma * q[u];
  }
  return h;
}

Eigen::VectorXd CauseModel::pack(const HazardParams& params) const {
  params.validate();
  if (params.rho <= 0) throw Error(ErrorCode::InvalidArgument, "rho must be strictly positive to pack");
  const auto U = static_cast<Eigen::Index>(intervals_);
  const auto P = static_cast<Eigen::Index>(predictors_);
  if (params.log_theta.size() != U || params.beta.size() != P) throw Error(ErrorCode::DimensionMismatch, "parameter sizes");
  Eigen::VectorXd q(static_cast<Eigen::Index>(dim()));
  for (Eigen::Index u = 0; u < U; ++u) {
    const double mean = u == 0 ? params.eta : params.eta * (1 - params.rho) + params.rho * params.log_theta[u - 1];
    q[u] = (params.log_theta[u] - mean) / params.sigma;
  }
  q.segment(U, P) = params.beta;
  q[U + P] = params.eta;
  q[U + P + 1] = std::log(params.rho / (1 - params.rho));
  q[U + P + 2] = std::log(params.sigma);
  return q;
}

double CauseModel::log_posterior(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const {
  if (static_cast<std::size_t>(q.size()) != dim()) throw Error(ErrorCode::DimensionMismatch, "parameter vector has wrong size");
  if (!q.allFinite()) throw Error(ErrorCode::NonFiniteValue, "non-finite parameter vector");
  const auto U = static_cast<Eigen::Index>(intervals_);
  const auto P = static_cast<Eigen::Index>(predictors_);
  const double width = partition_.width();

  const double eta = q[U + P];
  const double z = q[U + P + 1];
  const double tau = q[U + P + 2];
  const double rho = 1.0 / (1.0 + std::exp(-z));
  const double sigma = std::exp(tau);
  const auto eps = q.head(U);
  const auto beta = q.segment(U, P);

  Eigen::VectorXd log_theta(U);
  for (Eigen::Index u = 0; u < U; ++u) {
    const double mean = u == 0 ? eta : eta * (1 - rho) + rho * log_theta[u - 1];
    log_theta[u] = mean + sigma * eps[u];
  }
  const Eigen::VectorXd theta = log_theta.array().exp();

  // cum[u] = integrated baseline hazard up to cutpoint u
  Eigen::VectorXd cum(U + 1);
  cum[0] = 0.0;
  for (Eigen::Index u = 0; u < U; ++u) cum[u + 1] = cum[u] + theta[u] * width;

  const Eigen::VectorXd lin = x_ * beta;
  double ll = 0.0;
  Eigen::VectorXd resid(lin.size());
  Eigen::VectorXd full_mass = Eigen::VectorXd::Zero(U);     // sum of exp(lin) over records past interval u
  Eigen::VectorXd partial_mass = Eigen::VectorXd::Zero(U);  // sum of exp(lin) * partial over records ending in u
  for (Eigen::Index i = 0; i < lin.size(); ++i) {
    const auto u = static_cast<Eigen::Index>(interval_of_[static_cast<std::size_t>(i)]);
    const double e = std::exp(lin[i]);
    const double cumhaz = e * (cum[u] + theta[u] * partial_[i]);
    ll += event_[i] * (log_theta[u] + lin[i]) - cumhaz;
    resid[i] = event_[i] - cumhaz;
    partial_mass[u] += e * partial_[i];
    if (u > 0) full_mass[u - 1] += e;
  }

  const double coef_var = prior_.coef_variance;
  const double s2 = prior_.sigma_scale * prior_.sigma_scale;
  const double log_rho = -std::log1p(std::exp(-z));
  const double log_one_minus_rho = -std::log1p(std::exp(z));
  double lp = -0.5 * eps.squaredNorm() - static_cast<double>(U) * kLogSqrt2Pi;
  lp += -0.5 * beta.squaredNorm() / coef_var - static_cast<double>(P) * (0.5 * std::log(coef_var) + kLogSqrt2Pi);
  lp += normal_logpdf(eta, 0.0, prior_.eta_sd);
  lp += std::log(2.0) + normal_logpdf(sigma, 0.0, prior_.sigma_scale);
  lp += tau + log_rho + log_one_minus_rho;  // change of variables

  const double value = ll + lp;
  if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteValue, "log posterior is not finite");

  if (grad != nullptr) {
    grad->resize(q.size());
    // Records ending past interval u are exposed for its full width.
    Eigen::VectorXd g(U);
    double tail = 0.0;
    for (Eigen::Index u = U - 1; u >= 0; --u) {
      tail += full_mass[u];
      g[u] = events_per_interval_[u] - theta[u] * (width * tail + partial_mass[u]);
    }
    // Reverse pass through log_theta[u] = eta(1-rho) + rho log_theta[u-1] + sigma eps[u].
    Eigen::VectorXd adj(U);
    double carry = 0.0;
    for (Eigen::Index u = U - 1; u >= 0; --u) {
      adj[u] = g[u] + rho * carry;
      carry = adj[u];
    }
    double d_eta = adj[0];
    double d_rho = 0.0;
    double d_sigma = 0.0;
    for (Eigen::Index u = 0; u < U; ++u) {
      if (u > 0) {
        d_eta += (1 - rho) * adj[u];
        d_rho += adj[u] * (log_theta[u - 1] - eta);
      }
      d_sigma += adj[u] * eps[u];
    }
    grad->head(U) = sigma * adj - eps;
    grad->segment(U, P) = x_.transpose() * resid - beta / coef_var;
    (*grad)[U + P] = d_eta - eta / (prior_.eta_sd * prior_.eta_sd);
    (*grad)[U + P + 1] = d_rho * rho * (1 - rho) + (1 - 2 * rho);
    (*grad)[U + P + 2] = d_sigma * sigma - sigma * sigma / s2 + 1.0;
    if (!grad->allFinite()) throw Error(ErrorCode::NonFiniteValue, "log posterior gradient is not finite");
  }
  return value;
}

std::pair<double, Eigen::VectorXd> CauseModel::log_posterior_and_grad(const Eigen::VectorXd& q) const {
  Eigen::VectorXd g;
  const double v = log_posterior(q, &g);
  return {v, std::move(g)};
}

Eigen::VectorXd CauseModel::initial_point() const {
  const double events = n_events_ > 0 ? static_cast<double>(n_events_) : 0.5;
  const double log_rate = std::log(events / std::max(exposure_, 1e-12));
  HazardParams h;
  h.log_theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(intervals_), log_rate);
  h.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(predictors_));
  h.eta = log_rate;
  h.rho = 0.5;
  h.sigma = 0.5;
  return pack(h);
}

std::vector<std::string> CauseModel::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t u = 0; u < intervals_; ++u) names.push_back("eps[" + std::to_string(u) + "]");
  for (std::size_t p = 0; p < predictors_; ++p) names.push_back("beta[" + std::to_string(p) + "]");
  names.insert(names.end(), {"eta", "logit_rho", "log_sigma"});
  return names;
}

}  // namespace retention
