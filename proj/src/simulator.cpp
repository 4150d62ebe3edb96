#include "retention/simulator.hpp"

#include "retention/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace retention {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double plogis(double x) { return 1.0 / (1.0 + std::exp(-x)); }

CovariateVector coef(std::initializer_list<std::pair<std::size_t, double>> entries) {
  CovariateVector c{};
  for (const auto& [p, v] : entries) c[p] = v;
  return c;
}

// Intercepts from calibrate_missingness / calibrate_censoring at
// n = 200000 (seeds 7 and 11), indexed [missingness][censoring].
struct Calibration {
  double miss_intercept;
  double censor_intercept[2];
};

constexpr Calibration kCalibration[3] = {
    {0.0, {-2.9210, -2.0067}},
    {-1.2100, {-2.9212, -2.0066}},
    {-0.6644, {-2.9213, -2.0066}},
};

double weibull_time(double log_rate, double shape, Rng& rng) {
  return std::pow(standard_exponential(rng) * std::exp(-log_rate), 1.0 / shape);
}

}  // namespace

std::string level_name(MissingnessLevel level) {
  switch (level) {
    case MissingnessLevel::None: return "none";
    case MissingnessLevel::Low: return "low";
    case MissingnessLevel::High: return "high";
  }
  return "none";
}

std::string level_name(CensoringLevel level) { return level == CensoringLevel::Low ? "low" : "high"; }

MissingnessLevel parse_missingness(const std::string& text) {
  if (text == "none") return MissingnessLevel::None;
  if (text == "low") return MissingnessLevel::Low;
  if (text == "high") return MissingnessLevel::High;
  throw Error(ErrorCode::InvalidArgument, "missingness must be none, low or high, got '" + text + "'");
}

CensoringLevel parse_censoring(const std::string& text) {
  if (text == "low") return CensoringLevel::Low;
  if (text == "high") return CensoringLevel::High;
  throw Error(ErrorCode::InvalidArgument, "censoring must be low or high, got '" + text + "'");
}

double LinearPredictor::operator()(const CovariateVector& x) const {
  double lp = intercept;
  for (std::size_t p = 0; p < kDgpCovariates; ++p) lp += coef[p] * x[p];
  return lp;
}

json LinearPredictor::to_json() const { return {{"intercept", intercept}, {"coef", coef}}; }

LinearPredictor LinearPredictor::from_json(const json& j) {
  LinearPredictor lp;
  lp.intercept = j.at("intercept").get<double>();
  lp.coef = j.at("coef").get<CovariateVector>();
  return lp;
}

double DgpParams::return_scale_at(const CovariateVector& x, double schedule) const {
  return std::exp(return_scale(x)) * std::pow(schedule / 4.0, gamma_at(x));
}

double DgpParams::gamma_at(const CovariateVector& x) const { return plogis(return_gamma(x)); }

json DgpParams::to_json() const {
  json sched = json::array();
  for (const auto& s : schedule) sched.push_back(s.to_json());
  return {{"binary_prob", binary_prob},
          {"missingness", missingness},
          {"miss_x3", miss_x3.to_json()},
          {"miss_x6", miss_x6.to_json()},
          {"schedule_options", schedule_options},
          {"schedule", sched},
          {"death_shape", death_shape},
          {"death", death.to_json()},
          {"censoring", censoring},
          {"censor_shape", censor_shape},
          {"censor", censor.to_json()},
          {"censor_schedule", censor_schedule},
          {"point_mass", point_mass},
          {"return_shape", return_shape},
          {"return_scale", return_scale.to_json()},
          {"return_gamma", return_gamma.to_json()}};
}

DgpParams DgpParams::from_json(const json& j) {
  try {
    DgpParams p;
    p.binary_prob = j.at("binary_prob").get<std::array<double, 3>>();
    p.missingness = j.at("missingness").get<bool>();
    p.miss_x3 = LinearPredictor::from_json(j.at("miss_x3"));
    p.miss_x6 = LinearPredictor::from_json(j.at("miss_x6"));
    p.schedule_options = j.at("schedule_options").get<std::vector<double>>();
    p.schedule.clear();
    for (const auto& s : j.at("schedule")) p.schedule.push_back(LinearPredictor::from_json(s));
    p.death_shape = j.at("death_shape").get<double>();
    p.death = LinearPredictor::from_json(j.at("death"));
    p.censoring = j.at("censoring").get<bool>();
    p.censor_shape = j.at("censor_shape").get<double>();
    p.censor = LinearPredictor::from_json(j.at("censor"));
    p.censor_schedule = j.value("censor_schedule", 0.0);
    p.point_mass = j.at("point_mass").get<double>();
    p.return_shape = j.at("return_shape").get<double>();
    p.return_scale = LinearPredictor::from_json(j.at("return_scale"));
    p.return_gamma = LinearPredictor::from_json(j.at("return_gamma"));
    if (p.schedule.size() != p.schedule_options.size()) {
      throw Error(ErrorCode::InvalidArgument, "one schedule score per option is required");
    }
    if (!(p.point_mass >= 0 && p.point_mass <= 1)) throw Error(ErrorCode::InvalidArgument, "point_mass must lie in [0, 1]");
    if (!(p.death_shape > 0 && p.censor_shape > 0 && p.return_shape > 0)) {
      throw Error(ErrorCode::InvalidArgument, "Weibull shapes must be positive");
    }
    return p;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad DGP parameters: ") + e.what());
  }
}

DgpParams DgpParams::preset(MissingnessLevel missingness, CensoringLevel censoring) {
  // Covariate order: x1 x2 x3 (binary), x4 x5 x6 (normal).
  DgpParams p;
  const auto& cal = kCalibration[static_cast<int>(missingness)];
  p.missingness = missingness != MissingnessLevel::None;
  p.miss_x3 = {cal.miss_intercept, coef({{0, 0.6}, {3, -0.5}})};
  p.miss_x6 = {cal.miss_intercept, coef({{1, -0.5}, {4, 0.6}})};
  p.schedule = {
      {0.0, {}},
      {0.1, coef({{0, 0.5}, {2, 0.3}, {3, -0.4}, {5, 0.3}})},
      {-0.1, coef({{1, -0.4}, {3, 0.3}, {4, 0.5}, {5, -0.3}})},
  };
  p.death = {-4.7, coef({{0, 0.3}, {3, 0.4}, {4, -0.3}})};
  p.censor = {cal.censor_intercept[static_cast<int>(censoring)], coef({{0, -0.4}, {3, 0.3}, {4, -0.5}})};
  p.return_scale = {std::log(5.5), coef({{0, 0.2}, {1, -0.15}, {3, 0.1}, {4, 0.25}})};
  p.return_gamma = {0.0, coef({{0, -1.2}, {2, 0.8}, {3, 2.0}, {5, 1.0}})};
  return p;
}

std::string DgpConfig::name() const { return "censoring-" + level_name(censoring) + "/missing-" + level_name(missingness); }

json DgpConfig::to_json() const {
  return {{"n_train", n_train},
          {"n_test", n_test},
          {"missingness", level_name(missingness)},
          {"censoring", level_name(censoring)},
          {"delta", delta},
          {"seed", seed},
          {"params", params.to_json()}};
}

DgpConfig DgpConfig::from_json(const json& j) {
  DgpConfig c;
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.missingness = parse_missingness(j.value("missingness", std::string("none")));
  c.censoring = parse_censoring(j.value("censoring", std::string("low")));
  c.delta = j.value("delta", c.delta);
  c.seed = j.value("seed", c.seed);
  c.params = j.contains("params") ? DgpParams::from_json(j.at("params")) : DgpParams::preset(c.missingness, c.censoring);
  if (!(c.delta > 0)) throw Error(ErrorCode::NonPositiveDelta, "delta must be positive");
  if (c.n_train == 0 || c.n_test == 0) throw Error(ErrorCode::InvalidArgument, "cohort sizes must be positive");
  return c;
}

json TruthRecord::to_json() const {
  return {{"subject_id", subject_id}, {"schedule", schedule}, {"psi", psi}, {"optimal", optimal}, {"label", label}};
}

LatentSubject draw_subject(const DgpParams& params, bool censored, Rng& rng) {
  LatentSubject s;
  std::normal_distribution<double> normal;
  for (std::size_t p = 0; p < 3; ++p) s.x[p] = uniform_open(rng) < params.binary_prob[p] ? 1.0 : 0.0;
  for (std::size_t p = 3; p < kDgpCovariates; ++p) s.x[p] = normal(rng);
  s.monitored.fill(true);
  const double u3 = uniform_open(rng);
  const double u6 = uniform_open(rng);
  if (params.missingness) {
    s.monitored[2] = !(u3 < plogis(params.miss_x3(s.x)));
    s.monitored[5] = !(u6 < plogis(params.miss_x6(s.x)));
  }

  CovariateVector observed = s.x;
  for (std::size_t p = 0; p < kDgpCovariates; ++p) {
    if (!s.monitored[p]) observed[p] = 0.0;
  }
  std::vector<double> weight(params.schedule.size());
  double total = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) total += weight[k] = std::exp(params.schedule[k](observed));
  double pick = uniform_open(rng) * total;
  std::size_t k = 0;
  while (k + 1 < weight.size() && pick >= weight[k]) pick -= weight[k++];
  s.schedule = params.schedule_options[k];

  const double u_mix = uniform_open(rng);
  const double e_ret = standard_exponential(rng);
  s.return_time = u_mix < params.point_mass
                      ? s.schedule
                      : params.return_scale_at(s.x, s.schedule) * std::pow(e_ret, 1.0 / params.return_shape);
  s.death_time = weibull_time(params.death(s.x), params.death_shape, rng);
  const double c = weibull_time(params.censor(s.x) + params.censor_schedule * std::log(s.schedule / 4.0),
                                params.censor_shape, rng);
  s.censor_time = censored && params.censoring ? c : kInf;
  return s;
}

VisitRecord to_record(const LatentSubject& subject, const std::string& id) {
  VisitRecord r;
  r.subject_id = id;
  r.visit_index = 1;
  r.visit_time = 0.0;
  r.scheduled_return = subject.schedule;
  const double w = std::min({subject.return_time, subject.death_time, subject.censor_time});
  r.waiting_time = w;
  r.event = w == subject.return_time ? Event::Return : (w == subject.death_time ? Event::Death : Event::Censor);
  r.obs.values.resize(kDgpCovariates);
  r.obs.monitored.resize(kDgpCovariates);
  for (std::size_t p = 0; p < kDgpCovariates; ++p) {
    r.obs.monitored[p] = subject.monitored[p];
    r.obs.values[p] = subject.monitored[p] ? subject.x[p] : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

namespace {

Cohort empty_cohort(const DgpParams& params) {
  Cohort c;
  for (std::size_t p = 0; p < kDgpCovariates; ++p) c.covariate_names.push_back("x" + std::to_string(p + 1));
  c.schedule_options = params.schedule_options;
  return c;
}

std::string subject_id(const char* prefix, std::size_t i) { return prefix + std::to_string(i + 1); }

}  // namespace

SimulatedData simulate_cohort(const DgpConfig& config) {
  SimulatedData out;
  const auto& params = config.params;
  out.train = empty_cohort(params);
  out.test = empty_cohort(params);
  Rng train_rng(derive_seed(config.seed, {0}));
  for (std::size_t i = 0; i < config.n_train; ++i) {
    out.train_latent.push_back(draw_subject(params, true, train_rng));
    out.train.records.push_back(to_record(out.train_latent.back(), subject_id("train", i)));
  }
  Rng test_rng(derive_seed(config.seed, {1}));
  for (std::size_t i = 0; i < config.n_test; ++i) {
    const auto s = draw_subject(params, false, test_rng);
    out.test_latent.push_back(s);
    auto record = to_record(s, subject_id("test", i));
    TruthRecord t;
    t.subject_id = record.subject_id;
    t.schedule = s.schedule;
    std::size_t best = 0;
    for (std::size_t k = 0; k < params.schedule_options.size(); ++k) {
      t.psi.push_back(true_retention(params, s.x, params.schedule_options[k], config.delta));
      if (t.psi[k] > t.psi[best]) best = k;
    }
    t.optimal = params.schedule_options[best];
    t.label = retention_label(record.waiting_time, record.event, s.schedule, config.delta) == Retention::Retained ? 1 : 0;
    out.truth.push_back(std::move(t));
    out.test.records.push_back(std::move(record));
  }
  return out;
}

double true_retention(const DgpParams& params, const CovariateVector& x, double schedule, double delta) {
  if (!(delta > 0)) throw Error(ErrorCode::NonPositiveDelta, "delta must be positive");
  const double death_rate = std::exp(params.death(x));
  const auto death_survival = [&](double t) { return std::exp(-death_rate * std::pow(t, params.death_shape)); };
  const double scale = params.return_scale_at(x, schedule);
  const double k = params.return_shape;
  const auto integrand = [&](double w) {
    if (w <= 0) return 0.0;
    const double z = w / scale;
    return k / scale * std::pow(z, k - 1.0) * std::exp(-std::pow(z, k)) * death_survival(w);
  };
  using boost::math::quadrature::gauss_kronrod;
  const double continuous = gauss_kronrod<double, 31>::integrate(integrand, 0.0, schedule + delta, 20, 1e-12);
  return params.point_mass * death_survival(schedule) + (1.0 - params.point_mass) * continuous;
}

double true_retention_mc(const DgpParams& params, const CovariateVector& x, double schedule, double delta,
                         std::size_t draws, std::uint64_t seed) {
  Rng rng(seed);
  const double scale = params.return_scale_at(x, schedule);
  const double death_lp = params.death(x);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < draws; ++b) {
    const double u_mix = uniform_open(rng);
    const double e_ret = standard_exponential(rng);
    const double v = u_mix < params.point_mass ? schedule : scale * std::pow(e_ret, 1.0 / params.return_shape);
    const double t = weibull_time(death_lp, params.death_shape, rng);
    if (v < t && v - schedule <= delta) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(draws);
}

double true_optimal(const DgpParams& params, const CovariateVector& x, double delta) {
  std::size_t best = 0;
  double best_psi = -1.0;
  for (std::size_t k = 0; k < params.schedule_options.size(); ++k) {
    const double psi = true_retention(params, x, params.schedule_options[k], delta);
    if (psi > best_psi) {
      best_psi = psi;
      best = k;
    }
  }
  return params.schedule_options[best];
}

CohortSummary summarize(const std::vector<LatentSubject>& subjects, const std::vector<double>& options) {
  CohortSummary s;
  s.schedule_shares.assign(options.size(), 0.0);
  if (subjects.empty()) return s;
  for (const auto& subj : subjects) {
    const auto r = to_record(subj, "");
    if (r.event == Event::Censor) s.censored += 1;
    if (r.event == Event::Death) s.died += 1;
    if (!subj.monitored[2] || !subj.monitored[5]) s.any_missing += 1;
    for (std::size_t k = 0; k < options.size(); ++k) {
      if (subj.schedule == options[k]) s.schedule_shares[k] += 1;
    }
  }
  const double n = static_cast<double>(subjects.size());
  s.censored /= n;
  s.died /= n;
  s.any_missing /= n;
  for (auto& share : s.schedule_shares) share /= n;
  return s;
}

namespace {

template <class F>
double bisect(F f, double target, double lo, double hi) {
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<LatentSubject> draw_many(const DgpParams& params, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LatentSubject> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_subject(params, true, rng));
  return out;
}

}  // namespace

double calibrate_missingness(DgpParams params, double target, std::size_t n, std::uint64_t seed) {
  params.missingness = true;
  return bisect(
      [&](double a) {
        params.miss_x3.intercept = a;
        params.miss_x6.intercept = a;
        return summarize(draw_many(params, n, seed), params.schedule_options).any_missing;
      },
      target, -10.0, 10.0);
}

double calibrate_censoring(DgpParams params, double target, std::size_t n, std::uint64_t seed) {
  params.censoring = true;
  return bisect(
      [&](double c) {
        params.censor.intercept = c;
        return summarize(draw_many(params, n, seed), params.schedule_options).censored;
      },
      target, -15.0, 5.0);
}

}  // namespace retention
