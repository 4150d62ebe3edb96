#include "retention/gcomp.hpp"

#include "retention/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace retention {

using nlohmann::json;

void GcompConfig::validate() const {
  if (simulations < 1) throw Error(ErrorCode::InvalidArgument, "simulations must be at least 1");
  if (!(delta > 0)) throw Error(ErrorCode::NonPositiveDelta, "delta must be positive");
  if (horizon && !(*horizon > 0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
}

json GcompConfig::to_json() const {
  json j = {{"simulations", simulations}, {"delta", delta}, {"seed", seed}, {"max_draws", max_draws}};
  if (horizon) j["horizon"] = *horizon;
  return j;
}

GcompConfig GcompConfig::from_json(const json& j) {
  GcompConfig c;
  c.simulations = j.value("simulations", c.simulations);
  if (j.contains("horizon") && !j.at("horizon").is_null()) c.horizon = j.at("horizon").get<double>();
  c.delta = j.value("delta", c.delta);
  c.seed = j.value("seed", c.seed);
  c.max_draws = j.value("max_draws", c.max_draws);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

PiecewiseHazard::PiecewiseHazard(const HazardParams& params, const Partition& partition, const Eigen::VectorXd& x,
                                 double horizon)
    : horizon_(horizon) {
  if (params.beta.size() != x.size()) throw Error(ErrorCode::DimensionMismatch, "predictor length does not match beta");
  if (static_cast<std::size_t>(params.log_theta.size()) != partition.intervals()) {
    throw Error(ErrorCode::DimensionMismatch, "log_theta length does not match the partition");
  }
  const double lp = x.dot(params.beta);
  rates_.resize(partition.intervals());
  for (std::size_t u = 0; u < rates_.size(); ++u) rates_[u] = std::exp(params.log_theta[static_cast<Eigen::Index>(u)] + lp);
  starts_ = partition.cutpoints();
  starts_.pop_back();
  if (horizon_ < partition.end()) throw Error(ErrorCode::InvalidArgument, "horizon must not precede the partition end");
  build();
}

PiecewiseHazard::PiecewiseHazard(std::vector<double> rates, const Partition& partition, double horizon)
    : rates_(std::move(rates)), horizon_(horizon) {
  if (rates_.size() != partition.intervals()) throw Error(ErrorCode::DimensionMismatch, "rate count does not match the partition");
  starts_ = partition.cutpoints();
  starts_.pop_back();
  if (horizon_ < partition.end()) throw Error(ErrorCode::InvalidArgument, "horizon must not precede the partition end");
  build();
}

void PiecewiseHazard::build() {
  cum_.assign(rates_.size() + 1, 0.0);
  for (std::size_t u = 0; u < rates_.size(); ++u) {
    const double right = u + 1 < rates_.size() ? starts_[u + 1] : horizon_;
    cum_[u + 1] = cum_[u] + rates_[u] * (right - starts_[u]);
  }
}

double PiecewiseHazard::cumulative(double w) const {
  if (w <= 0) return 0.0;
  if (w >= horizon_) w = horizon_;
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), w);
  const auto u = static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
  return cum_[u] + rates_[u] * (w - starts_[u]);
}

std::optional<double> PiecewiseHazard::invert(double u) const {
  const double e = -std::log(u);
  if (!(e < cum_.back())) return std::nullopt;
  // First interval whose right-edge cumulative hazard exceeds e; it has a
  // positive rate, so zero-rate intervals never receive draws.
  const auto it = std::upper_bound(cum_.begin() + 1, cum_.end(), e);
  const auto k = static_cast<std::size_t>(std::distance(cum_.begin() + 1, it));
  const double right = k + 1 < rates_.size() ? starts_[k + 1] : horizon_;
  const double w = starts_[k] + (e - cum_[k]) / rates_[k];
  return std::min(w, right);
}

std::optional<double> sample_waiting_time(const HazardParams& params, const Partition& partition,
                                          const Eigen::VectorXd& x, double horizon, Rng& rng) {
  return PiecewiseHazard(params, partition, x, horizon).sample(rng);
}

RetentionEstimate RetentionEstimate::summarize(std::vector<double> draws) {
  if (draws.empty()) throw Error(ErrorCode::InvalidArgument, "no draws to summarize");
  RetentionEstimate r;
  r.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  std::vector<double> sorted = draws;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const double last = static_cast<double>(n - 1);
  r.ci_low = sorted[static_cast<std::size_t>(std::floor(0.025 * last))];
  r.ci_high = sorted[static_cast<std::size_t>(std::ceil(0.975 * last))];
  r.draws = std::move(draws);
  return r;
}

json RetentionEstimate::to_json() const {
  return {{"key", key},         {"schedule", schedule},         {"delta", delta},        {"psi_mean", mean},
          {"psi_median", median}, {"psi_ci", {ci_low, ci_high}}, {"n_draws", draws.size()}};
}

json OptimalSchedulePMF::to_json() const {
  json pmf_json = json::object();
  json counts_json = json::object();
  json est = json::array();
  for (std::size_t i = 0; i < options.size(); ++i) {
    pmf_json[format_number(options[i])] = pmf[i];
    counts_json[format_number(options[i])] = counts[i];
  }
  for (const auto& e : estimates) est.push_back(e.to_json());
  return {{"options", options}, {"pmf", pmf_json},   {"counts", counts_json},
          {"mode", mode},       {"triangle", {triangle.first, triangle.second}}, {"estimates", est}};
}

json RetentionCurve::to_json() const {
  json pts = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    pts.push_back({{"delta", deltas[i]}, {"mean", points[i].mean}, {"lo", points[i].ci_low}, {"hi", points[i].ci_high}});
  }
  return {{"key", key}, {"schedule", schedule}, {"curve", pts}};
}

namespace {

// Return-then-death waiting times for one stratum cell, draw by draw.
class CellSimulator {
 public:
  CellSimulator(const PosteriorArtifact& artifact, const StratumCell& cell, const Observation& obs,
                const GcompConfig& config)
      : ret_(artifact.model(make_key(artifact.metadata.visit, 1, cell))),
        death_(artifact.model(make_key(artifact.metadata.visit, 0, cell))),
        x_ret_(ret_.design.row(obs)),
        x_death_(death_.design.row(obs)),
        horizon_(config.horizon.value_or(2.0 * ret_.partition.end())),
        simulations_(config.simulations),
        schedule_(cell.schedule) {
    if (ret_.draws.size() != death_.draws.size()) {
      throw Error(ErrorCode::ArtifactLoadError, "cause models of " + ret_.key.to_string() + " hold different draw counts");
    }
    if (horizon_ < std::max(ret_.partition.end(), death_.partition.end())) {
      throw Error(ErrorCode::InvalidArgument, "horizon must not precede the partition end");
    }
  }

  std::size_t draws() const { return ret_.draws.size(); }
  const std::string key() const { return ret_.key.to_string(); }
  double schedule() const { return schedule_; }

  // Margins W_V - s of the simulated returns that precede death and the
  // horizon; every other pair is not retained under any delta.
  std::vector<double> margins(std::size_t a, std::uint64_t seed) const {
    const PiecewiseHazard ret(ret_.draws.draw(a), ret_.partition, x_ret_, horizon_);
    const PiecewiseHazard death(death_.draws.draw(a), death_.partition, x_death_, horizon_);
    Rng rng(seed);
    std::vector<double> out;
    out.reserve(simulations_);
    for (std::size_t b = 0; b < simulations_; ++b) {
      const double u_ret = uniform_open(rng);
      const double u_death = uniform_open(rng);
      const auto v = ret.invert(u_ret);
      if (!v) continue;
      const auto t = death.invert(u_death);
      if (t && !(*v < *t)) continue;
      out.push_back(*v - schedule_);
    }
    return out;
  }

  double psi(std::size_t a, std::uint64_t seed, double delta) const {
    const auto m = margins(a, seed);
    const auto hits = std::count_if(m.begin(), m.end(), [delta](double x) { return x <= delta; });
    return static_cast<double>(hits) / static_cast<double>(simulations_);
  }

 private:
  const FittedModel& ret_;
  const FittedModel& death_;
  Eigen::VectorXd x_ret_;
  Eigen::VectorXd x_death_;
  double horizon_;
  std::size_t simulations_;
  double schedule_;
};

std::vector<std::size_t> draw_indices(std::size_t available, std::size_t max_draws) {
  const std::size_t n = max_draws == 0 ? available : std::min(available, max_draws);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * available / n;
  return idx;
}

// Common random numbers: draw a uses the same stream under every schedule.
std::uint64_t draw_seed(const GcompConfig& config, std::size_t a) { return derive_seed(config.seed, {a}); }

}  // namespace

RetentionEstimate retention_probability(const PosteriorArtifact& artifact, const StratumCell& cell,
                                        const Observation& obs, const GcompConfig& config) {
  config.validate();
  const CellSimulator sim(artifact, cell, obs, config);
  const auto idx = draw_indices(sim.draws(), config.max_draws);
  std::vector<double> psi(idx.size());
  parallel_for(idx.size(), config.threads,
               [&](std::size_t i) { psi[i] = sim.psi(idx[i], draw_seed(config, idx[i]), config.delta); });
  auto est = RetentionEstimate::summarize(std::move(psi));
  est.key = sim.key();
  est.schedule = cell.schedule;
  est.delta = config.delta;
  return est;
}

OptimalSchedulePMF optimal_schedule(const PosteriorArtifact& artifact, const std::string& pattern,
                                    const std::string& site, const Observation& obs,
                                    const std::vector<double>& options, const GcompConfig& config) {
  config.validate();
  if (options.empty()) throw Error(ErrorCode::InvalidArgument, "no schedule options");
  std::vector<double> sorted = options;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::InvalidArgument, "schedule options must be distinct");
  }
  std::vector<CellSimulator> sims;
  for (double s : sorted) sims.emplace_back(artifact, StratumCell{s, pattern, site}, obs, config);
  const std::size_t available = sims.front().draws();
  for (const auto& sim : sims) {
    if (sim.draws() != available) throw Error(ErrorCode::ArtifactLoadError, "option strata hold different draw counts");
  }
  const auto idx = draw_indices(available, config.max_draws);
  const std::size_t k = sorted.size();
  std::vector<double> psi(idx.size() * k);
  parallel_for(idx.size(), config.threads, [&](std::size_t i) {
    const auto seed = draw_seed(config, idx[i]);
    for (std::size_t o = 0; o < k; ++o) psi[i * k + o] = sims[o].psi(idx[i], seed, config.delta);
  });

  OptimalSchedulePMF out;
  out.options = sorted;
  out.counts.assign(k, 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    // Strict comparison keeps the smallest schedule on ties.
    std::size_t best = 0;
    for (std::size_t o = 1; o < k; ++o) {
      if (psi[i * k + o] > psi[i * k + best]) best = o;
    }
    ++out.counts[best];
  }
  out.pmf.resize(k);
  for (std::size_t o = 0; o < k; ++o) out.pmf[o] = static_cast<double>(out.counts[o]) / static_cast<double>(idx.size());
  const auto mode = std::max_element(out.counts.begin(), out.counts.end());
  out.mode = sorted[static_cast<std::size_t>(std::distance(out.counts.begin(), mode))];
  if (k >= 2) out.triangle = {out.pmf[0], out.pmf[1]};
  for (std::size_t o = 0; o < k; ++o) {
    std::vector<double> d(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) d[i] = psi[i * k + o];
    auto est = RetentionEstimate::summarize(std::move(d));
    est.key = sims[o].key();
    est.schedule = sorted[o];
    est.delta = config.delta;
    out.estimates.push_back(std::move(est));
  }
  return out;
}

RetentionCurve subdistribution_curve(const PosteriorArtifact& artifact, const StratumCell& cell, const Observation& obs,
                                     const std::vector<double>& delta_grid, const GcompConfig& config) {
  config.validate();
  if (delta_grid.empty()) throw Error(ErrorCode::InvalidArgument, "delta_grid is empty");
  for (std::size_t t = 0; t < delta_grid.size(); ++t) {
    if (!(delta_grid[t] > 0)) throw Error(ErrorCode::NonPositiveDelta, "delta_grid values must be positive");
    if (t > 0 && !(delta_grid[t] > delta_grid[t - 1])) {
      throw Error(ErrorCode::InvalidArgument, "delta_grid must be strictly increasing");
    }
  }
  const CellSimulator sim(artifact, cell, obs, config);
  const auto idx = draw_indices(sim.draws(), config.max_draws);
  const std::size_t g = delta_grid.size();
  std::vector<double> psi(idx.size() * g);
  const double b = static_cast<double>(config.simulations);
  parallel_for(idx.size(), config.threads, [&](std::size_t i) {
    auto m = sim.margins(idx[i], draw_seed(config, idx[i]));
    std::sort(m.begin(), m.end());
    for (std::size_t t = 0; t < g; ++t) {
      const auto hits = std::upper_bound(m.begin(), m.end(), delta_grid[t]) - m.begin();
      psi[i * g + t] = static_cast<double>(hits) / b;
    }
  });
  RetentionCurve curve;
  curve.key = sim.key();
  curve.schedule = cell.schedule;
  curve.deltas = delta_grid;
  for (std::size_t t = 0; t < g; ++t) {
    std::vector<double> d(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) d[i] = psi[i * g + t];
    auto est = RetentionEstimate::summarize(std::move(d));
    est.key = curve.key;
    est.schedule = cell.schedule;
    est.delta = delta_grid[t];
    curve.points.push_back(std::move(est));
  }
  return curve;
}

std::vector<std::string> triage_quadrants(const std::vector<RetentionEstimate>& estimates) {
  if (estimates.empty()) throw Error(ErrorCode::InvalidArgument, "no estimates to triage");
  double mean_t = 0.0;
  double width_t = 0.0;
  for (const auto& e : estimates) {
    mean_t += e.mean;
    width_t += e.ci_high - e.ci_low;
  }
  mean_t /= static_cast<double>(estimates.size());
  width_t /= static_cast<double>(estimates.size());
  // Averaging identical values can land an ulp away from them.
  constexpr double kTieTolerance = 1e-12;
  std::vector<std::string> labels;
  labels.reserve(estimates.size());
  for (const auto& e : estimates) {
    std::string label;
    label += e.mean < mean_t - kTieTolerance ? 'L' : 'H';
    label += (e.ci_high - e.ci_low) < width_t - kTieTolerance ? 'L' : 'H';
    labels.push_back(label);
  }
  return labels;
}

}  // namespace retention
