#include "retention/error.hpp"
#include "retention/hazard_model.hpp"
#include "retention/random.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace retention;

namespace {

HazardParams constant(std::size_t intervals, double rate, Eigen::Index predictors = 0) {
  HazardParams h;
  h.log_theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(intervals), std::log(rate));
  h.beta = Eigen::VectorXd::Zero(predictors);
  return h;
}

StratumData one_record(double w, Event e, Eigen::Index p = 0) {
  StratumData d;
  d.x = Eigen::MatrixXd::Zero(1, p);
  d.waiting = Eigen::VectorXd::Constant(1, w);
  d.events = {e};
  return d;
}

StratumData random_stratum(std::size_t n, Eigen::Index p, Rng& rng) {
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> ev(-1, 1);
  StratumData d;
  d.x.resize(static_cast<Eigen::Index>(n), p);
  d.waiting.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < p; ++c) d.x(static_cast<Eigen::Index>(i), c) = z(rng);
    d.waiting[static_cast<Eigen::Index>(i)] = 0.1 + 10 * uniform_open(rng);
    d.events.push_back(event_from_code(ev(rng)));
  }
  return d;
}

StratumData doubled(const StratumData& d) {
  StratumData out;
  out.x.resize(2 * d.x.rows(), d.x.cols());
  out.x << d.x, d.x;
  out.waiting.resize(2 * d.waiting.size());
  out.waiting << d.waiting, d.waiting;
  out.events = d.events;
  out.events.insert(out.events.end(), d.events.begin(), d.events.end());
  return out;
}

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2 * M_PI);
}

}  // namespace

TEST_CASE("partitions have equal widths up to the largest waiting time") {
  StratumData d;
  d.x = Eigen::MatrixXd::Zero(3, 0);
  d.waiting = Eigen::Vector3d(4, 20, 11);
  d.events = {Event::Return, Event::Death, Event::Censor};
  const auto p = build_partition(d, 4);
  CHECK(p.cutpoints() == std::vector<double>{0, 5, 10, 15, 20});
  CHECK(p.lookup(4.999) == 0);
  CHECK(p.lookup(5.0) == 1);
  CHECK(p.lookup(20.0) == 3);
  CHECK(p.lookup(100.0) == 3);

  d.waiting = Eigen::Vector3d(4, 13, 11);
  const auto unit = build_partition(d, 13);
  CHECK(unit.width() == doctest::Approx(1.0));
  CHECK(unit.intervals() == 13);

  const auto single = build_partition(one_record(7, Event::Return), 2);
  CHECK(single.cutpoints() == std::vector<double>{0, 3.5, 7});

  CHECK_THROWS_AS(build_partition(StratumData{}, 4), Error);
}

TEST_CASE("hazard and cumulative hazard examples") {
  const auto flat = constant(4, 0.3);
  const Partition p4(4, 20);
  const Eigen::VectorXd none(0);
  CHECK(hazard_at(flat, p4, 0.1, none) == doctest::Approx(0.3));
  CHECK(hazard_at(flat, p4, 17.5, none) == doctest::Approx(0.3));
  CHECK(cumulative_hazard(flat, p4, 7.0, none) == doctest::Approx(2.1));

  HazardParams step;
  step.log_theta = Eigen::Vector2d(std::log(1.0), std::log(2.0));
  step.beta = Eigen::VectorXd::Zero(0);
  const Partition p2(2, 2);
  CHECK(hazard_at(step, p2, 1.5, none) == doctest::Approx(2.0));
  CHECK(cumulative_hazard(step, p2, 1.5, none) == doctest::Approx(2.0));
  CHECK(cumulative_hazard(step, p2, 1e-12, none) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(cumulative_hazard(step, p2, 0.0, none), Error);

  auto ph = constant(4, 0.3, 1);
  ph.beta[0] = std::log(2.0);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  CHECK(hazard_at(ph, p4, 3.0, one) == doctest::Approx(0.6));
  CHECK_THROWS_AS(hazard_at(ph, p4, 3.0, none), Error);
}

TEST_CASE("cumulative hazard is continuous, nondecreasing and piecewise linear") {
  HazardParams h;
  h.log_theta = Eigen::Vector4d(std::log(0.5), std::log(0.05), std::log(2.0), std::log(0.3));
  h.beta = Eigen::VectorXd::Zero(0);
  const Partition p(4, 8);
  const Eigen::VectorXd none(0);
  double prev = 0.0;
  for (double w = 0.01; w < 12; w += 0.01) {
    const double c = cumulative_hazard(h, p, w, none);
    CHECK(c >= prev);
    CHECK(c - prev <= 2.0 * 0.01 + 1e-9);
    prev = c;
  }
  for (double cut : {2.0, 4.0, 6.0}) {
    const double left = cumulative_hazard(h, p, cut - 1e-9, none);
    const double right = cumulative_hazard(h, p, cut + 1e-9, none);
    CHECK(right - left < 1e-8);
  }
}

TEST_CASE("hazards are proportional in the predictors") {
  Rng rng(3);
  HazardParams h;
  h.log_theta = Eigen::VectorXd::Random(5);
  h.beta = Eigen::Vector2d(0.7, -0.4);
  const Partition p(5, 10);
  const Eigen::Vector2d x1(1.0, 0.5);
  const Eigen::Vector2d x2(-0.3, 2.0);
  const double expected = std::exp((x1 - x2).dot(h.beta));
  for (double w : {0.5, 3.3, 7.1, 9.9, 14.0}) {
    CHECK(hazard_at(h, p, w, x1) / hazard_at(h, p, w, x2) == doctest::Approx(expected));
  }
}

TEST_CASE("log likelihood of single records under constant rates") {
  const double t1 = 0.4;
  const double t0 = 0.1;
  const double w = 2.5;
  const Partition p(3, 3);
  const auto r = constant(3, t1);
  const auto d = constant(3, t0);
  CHECK(log_likelihood(r, d, p, one_record(w, Event::Return)) == doctest::Approx(std::log(t1) - (t1 + t0) * w));
  CHECK(log_likelihood(r, d, p, one_record(w, Event::Death)) == doctest::Approx(std::log(t0) - (t1 + t0) * w));
  CHECK(log_likelihood(r, d, p, one_record(w, Event::Censor)) == doctest::Approx(-(t1 + t0) * w));

  const auto single = one_record(w, Event::Return);
  CHECK(log_likelihood(r, d, p, doubled(single)) == doctest::Approx(2 * log_likelihood(r, d, p, single)));
}

TEST_CASE("log likelihood ignores record order") {
  Rng rng(5);
  auto data = random_stratum(30, 2, rng);
  const auto p = build_partition(data, 6);
  HazardParams r;
  r.log_theta = Eigen::VectorXd::Random(6);
  r.beta = Eigen::Vector2d(0.3, -0.2);
  HazardParams d = r;
  d.log_theta.array() -= 1.0;
  const double base = log_likelihood(r, d, p, data);
  StratumData rev;
  rev.x = data.x.colwise().reverse();
  rev.waiting = data.waiting.reverse();
  rev.events.assign(data.events.rbegin(), data.events.rend());
  CHECK(log_likelihood(r, d, p, rev) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("subdensities integrate to one minus the limiting survival") {
  const double t1 = 0.3;
  const double t0 = 0.05;
  const double horizon = 15.0;
  const Partition p(5, 10);
  const auto r = constant(5, t1);
  const auto d = constant(5, t0);
  const Eigen::VectorXd none(0);
  const int n = 150000;
  const double dw = horizon / n;
  double mass = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = (i + 0.5) * dw;
    const double surv = std::exp(-cumulative_hazard(r, p, w, none) - cumulative_hazard(d, p, w, none));
    mass += (hazard_at(r, p, w, none) + hazard_at(d, p, w, none)) * surv * dw;
  }
  CHECK(mass <= 1.0);
  CHECK(mass == doctest::Approx(1 - std::exp(-(t1 + t0) * horizon)).epsilon(1e-6));
}

TEST_CASE("log prior reduces to independent normals when rho is zero") {
  HazardParams h;
  h.log_theta = Eigen::Vector3d(-1.0, 0.5, -2.0);
  h.beta = Eigen::Vector2d(0.3, -1.1);
  h.eta = -0.5;
  h.rho = 0.0;
  h.sigma = 0.8;
  double expected = 0.0;
  for (int u = 0; u < 3; ++u) expected += normal_logpdf(h.log_theta[u], h.eta, h.sigma);
  expected += normal_logpdf(0.3, 0, std::sqrt(3.0)) + normal_logpdf(-1.1, 0, std::sqrt(3.0));
  expected += normal_logpdf(h.eta, 0, 5.0);
  expected += std::log(2.0) + normal_logpdf(h.sigma, 0, 1.0);
  CHECK(log_prior(h) == doctest::Approx(expected));

  h.rho = 0.6;
  double ar = normal_logpdf(-1.0, -0.5, 0.8) + normal_logpdf(0.5, -0.5 * 0.4 + 0.6 * -1.0, 0.8) +
              normal_logpdf(-2.0, -0.5 * 0.4 + 0.6 * 0.5, 0.8);
  ar += normal_logpdf(0.3, 0, std::sqrt(3.0)) + normal_logpdf(-1.1, 0, std::sqrt(3.0));
  ar += normal_logpdf(h.eta, 0, 5.0) + std::log(2.0) + normal_logpdf(h.sigma, 0, 1.0);
  CHECK(log_prior(h) == doctest::Approx(ar));
}

TEST_CASE("non-centered innovations give the AR(1) prior mean and correlation") {
  // Unpacking standard-normal innovations is exactly a draw from the prior
  // process given (eta, rho, sigma).
  const std::size_t U = 20;
  const auto model = CauseModel(Partition(U, 20), one_record(1, Event::Censor), 1);
  Eigen::VectorXd q = model.initial_point();
  const double eta = -1.5;
  const double rho = 0.5;
  q[U] = eta;
  q[U + 1] = std::log(rho / (1 - rho));
  q[U + 2] = std::log(0.7);
  Rng rng(11);
  std::normal_distribution<double> z;
  const int n = 100000;
  const Eigen::Index a = 19;
  double s[4] = {0, 0, 0, 0};
  double ss[4] = {0, 0, 0, 0};
  double cross[4] = {0, 0, 0, 0};
  double mean_first = 0.0;
  for (int i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < U; ++u) q[static_cast<Eigen::Index>(u)] = z(rng);
    const auto lt = model.unpack(q).log_theta;
    mean_first += lt[0];
    for (int v = 0; v < 4; ++v) {
      s[v] += lt[a - v];
      ss[v] += lt[a - v] * lt[a - v];
      cross[v] += lt[a] * lt[a - v];
    }
  }
  CHECK(mean_first / n == doctest::Approx(eta).epsilon(0.01));
  CHECK(s[0] / n == doctest::Approx(eta).epsilon(0.01));
  for (int v = 1; v <= 3; ++v) {
    const double ma = s[0] / n;
    const double mb = s[v] / n;
    const double cov = cross[v] / n - ma * mb;
    const double corr = cov / std::sqrt((ss[0] / n - ma * ma) * (ss[v] / n - mb * mb));
    CHECK(std::abs(corr - std::pow(rho, v)) < 0.015);
  }
}

TEST_CASE("the unconstrained posterior adds the Jacobian of the reparameterization") {
  Rng rng(17);
  const auto data = random_stratum(40, 2, rng);
  const auto partition = build_partition(data, 5);
  for (int cause : {0, 1}) {
    const CauseModel model(partition, data, cause);
    Eigen::VectorXd q = Eigen::VectorXd::Random(static_cast<Eigen::Index>(model.dim()));
    const auto h = model.unpack(q);
    const double expected = cause_log_likelihood(h, partition, data, cause) + log_prior(h) +
                            5 * std::log(h.sigma) + std::log(h.sigma) + std::log(h.rho) + std::log(1 - h.rho);
    CHECK(model.log_posterior(q, nullptr) == doctest::Approx(expected).epsilon(1e-10));
    const auto back = model.pack(h);
    CHECK((back - q).norm() < 1e-10);
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(23);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    const auto data = random_stratum(25 + static_cast<std::size_t>(trial), trial % 3, rng);
    const auto partition = build_partition(data, 4 + static_cast<std::size_t>(trial % 5));
    const CauseModel model(partition, data, trial % 2);
    Eigen::VectorXd q(static_cast<Eigen::Index>(model.dim()));
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = 0.5 * z(rng);
    Eigen::VectorXd grad;
    model.log_posterior(q, &grad);
    Eigen::VectorXd fd(q.size());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      Eigen::VectorXd up = q;
      Eigen::VectorXd dn = q;
      up[i] += h;
      dn[i] -= h;
      fd[i] = (model.log_posterior(up, nullptr) - model.log_posterior(dn, nullptr)) / (2 * h);
    }
    CHECK((grad - fd).norm() / std::max(1.0, fd.norm()) < 1e-5);
  }
}

TEST_CASE("with negligible data the gradient is the prior gradient") {
  // One record censored at a tiny time contributes almost nothing.
  const CauseModel model(Partition(3, 1), one_record(1e-12, Event::Censor), 1);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.dim()));
  q[3] = 0.3;
  Eigen::VectorXd grad;
  model.log_posterior(q, &grad);
  // eps ~ N(0,1): gradient -eps = 0; eta ~ N(0,25): -eta/25.
  CHECK(grad.head(3).norm() < 1e-9);
  CHECK(grad[3] == doctest::Approx(-0.3 / 25.0).epsilon(1e-6));
  // logit(rho) = 0: Jacobian gradient 1 - 2 rho = 0; log sigma = 0: 1 - sigma^2 = 0.
  CHECK(std::abs(grad[4]) < 1e-9);
  CHECK(std::abs(grad[5]) < 1e-9);
}

TEST_CASE("doubling the data doubles the likelihood part of the gradient") {
  Rng rng(29);
  const auto data = random_stratum(30, 2, rng);
  const auto partition = build_partition(data, 5);
  const CauseModel empty(partition, one_record(1e-300, Event::Censor, 2), 1);
  const CauseModel once(partition, data, 1);
  const CauseModel twice(partition, doubled(data), 1);
  const Eigen::VectorXd q = Eigen::VectorXd::Random(static_cast<Eigen::Index>(once.dim()));
  Eigen::VectorXd g0, g1, g2;
  empty.log_posterior(q, &g0);
  once.log_posterior(q, &g1);
  twice.log_posterior(q, &g2);
  CHECK(((g2 - g0) - 2 * (g1 - g0)).norm() < 1e-8 * (1 + (g1 - g0).norm()));
}

TEST_CASE("non-finite parameters are rejected") {
  const CauseModel model(Partition(2, 2), one_record(1, Event::Return), 1);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(5);
  q[0] = std::nan("");
  CHECK_THROWS_AS(model.log_posterior(q, nullptr), Error);
  CHECK_THROWS_AS(model.log_posterior(Eigen::VectorXd::Zero(3), nullptr), Error);
  q[0] = 800.0;  // exp overflow in the cumulative hazard
  try {
    model.log_posterior(q, nullptr);
    FAIL("expected NonFiniteValue");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteValue);
  }
}

TEST_CASE("initial point uses the crude event rate") {
  StratumData d;
  d.x = Eigen::MatrixXd::Zero(4, 1);
  d.waiting = Eigen::Vector4d(1, 2, 3, 4);
  d.events = {Event::Return, Event::Return, Event::Death, Event::Censor};
  const CauseModel model(build_partition(d, 4), d, 1);
  CHECK(model.events() == 2);
  CHECK(model.exposure() == doctest::Approx(10));
  const auto h = model.unpack(model.initial_point());
  for (Eigen::Index u = 0; u < 4; ++u) CHECK(h.log_theta[u] == doctest::Approx(std::log(0.2)));
  CHECK(h.beta[0] == 0.0);
  CHECK(h.rho == doctest::Approx(0.5));
  CHECK(h.sigma == doctest::Approx(0.5));
}
