#include "retention/hmc.hpp"

#include "retention/error.hpp"
#include "retention/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace retention {

void HmcConfig::validate() const {
  if (warmup < 0 || samples <= 0 || leapfrog <= 0 || chains <= 0) {
    throw Error(ErrorCode::InvalidArgument, "HMC iteration counts must be positive");
  }
  if (!(target_accept > 0 && target_accept < 1)) throw Error(ErrorCode::InvalidArgument, "target_accept must lie in (0,1)");
  if (!(max_energy_error > 0)) throw Error(ErrorCode::InvalidArgument, "max_energy_error must be positive");
  if (!(step_jitter >= 0 && step_jitter < 1)) throw Error(ErrorCode::InvalidArgument, "step_jitter must lie in [0,1)");
}

nlohmann::json HmcConfig::to_json() const {
  return {{"warmup", warmup},           {"samples", samples}, {"leapfrog", leapfrog},
          {"target_accept", target_accept}, {"chains", chains},   {"seed", seed},
          {"max_energy_error", max_energy_error}, {"step_jitter", step_jitter}};
}

HmcConfig HmcConfig::from_json(const nlohmann::json& j) {
  HmcConfig c;
  c.warmup = j.value("warmup", c.warmup);
  c.samples = j.value("samples", c.samples);
  c.leapfrog = j.value("leapfrog", c.leapfrog);
  c.target_accept = j.value("target_accept", c.target_accept);
  c.chains = j.value("chains", c.chains);
  c.seed = j.value("seed", c.seed);
  c.max_energy_error = j.value("max_energy_error", c.max_energy_error);
  c.step_jitter = j.value("step_jitter", c.step_jitter);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

namespace {

class DualAveraging {
 public:
  DualAveraging(double step, double target) : mu_(std::log(10 * step)), target_(target) {}

  double update(double accept) {
    ++t_;
    const double eta = 1.0 / (t_ + kT0);
    h_bar_ = (1 - eta) * h_bar_ + eta * (target_ - accept);
    const double log_step = mu_ - std::sqrt(t_) / kGamma * h_bar_;
    const double w = std::pow(t_, -kKappa);
    log_step_bar_ = w * log_step + (1 - w) * log_step_bar_;
    return std::exp(log_step);
  }
  double final_step() const { return std::exp(log_step_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_;
  double target_;
  double t_ = 0.0;
  double h_bar_ = 0.0;
  double log_step_bar_ = 0.0;
};

struct State {
  Eigen::VectorXd q;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

class Integrator {
 public:
  Integrator(const LogDensity& target, const Eigen::VectorXd& inv_metric) : target_(target), inv_metric_(inv_metric) {}

  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * (p.array().square() * inv_metric_.array()).sum(); }

  // Returns false once the trajectory leaves the support.
  bool leapfrog(State& s, Eigen::VectorXd& p, double step, int steps) const {
    for (int l = 0; l < steps; ++l) {
      p += 0.5 * step * s.grad;
      s.q += step * inv_metric_.cwiseProduct(p);
      s.log_density = target_(s.q, s.grad);
      if (!std::isfinite(s.log_density) || !s.grad.allFinite()) return false;
      p += 0.5 * step * s.grad;
    }
    return true;
  }

  Eigen::VectorXd draw_momentum(Rng& rng) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd p(inv_metric_.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = normal(rng) / std::sqrt(inv_metric_[i]);
    return p;
  }

 private:
  const LogDensity& target_;
  const Eigen::VectorXd& inv_metric_;
};

double find_reasonable_step(const Integrator& integ, const State& start, Rng& rng, double step) {
  Eigen::VectorXd p = integ.draw_momentum(rng);
  const double h0 = -start.log_density + integ.kinetic(p);
  auto log_accept = [&](double eps) {
    State s = start;
    Eigen::VectorXd pp = p;
    if (!integ.leapfrog(s, pp, eps, 1)) return -std::numeric_limits<double>::infinity();
    const double h = -s.log_density + integ.kinetic(pp);
    return std::isfinite(h) ? h0 - h : -std::numeric_limits<double>::infinity();
  };
  double la = log_accept(step);
  const double dir = la > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100; ++i) {
    if (dir > 0 ? !(la > std::log(0.5)) : la > std::log(0.5)) break;
    const double next = step * std::pow(2.0, dir);
    if (next < 1e-10 || next > 1e4) break;
    step = next;
    la = log_accept(step);
  }
  return step;
}

}  // namespace

ChainResult hmc_chain(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config,
                      std::uint64_t chain_seed) {
  config.validate();
  Rng rng(chain_seed);
  const Eigen::Index dim = init.size();
  State state;
  state.q = init;
  state.grad.resize(dim);
  state.log_density = target(state.q, state.grad);
  if (!std::isfinite(state.log_density) || !state.grad.allFinite()) {
    throw Error(ErrorCode::NonFiniteValue, "log density is not finite at the initial point");
  }

  Eigen::VectorXd inv_metric = Eigen::VectorXd::Ones(dim);
  Integrator integ(target, inv_metric);
  double step = find_reasonable_step(integ, state, rng, 1.0);
  DualAveraging adapt(step, config.target_accept);

  const int warmup = config.warmup;
  const bool adapt_metric = warmup >= 20;
  const int window_start = warmup / 2;
  const int window_end = warmup - std::max(warmup * 3 / 20, 5);
  Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd w_m2 = Eigen::VectorXd::Zero(dim);
  int w_count = 0;

  ChainResult out;
  out.draws.resize(config.samples, dim);
  std::uniform_real_distribution<double> jitter(1.0 - config.step_jitter, 1.0 + config.step_jitter);
  double accept_sum = 0.0;

  for (int it = 0; it < warmup + config.samples; ++it) {
    const bool warming = it < warmup;
    const double eps = warming ? step : step * jitter(rng);

    Eigen::VectorXd p = integ.draw_momentum(rng);
    const double h0 = -state.log_density + integ.kinetic(p);
    State proposal = state;
    bool ok = integ.leapfrog(proposal, p, eps, config.leapfrog);
    double h1 = ok ? -proposal.log_density + integ.kinetic(p) : std::numeric_limits<double>::infinity();
    const bool divergent = !ok || !std::isfinite(h1) || h1 - h0 > config.max_energy_error;
    const double accept_prob = divergent ? 0.0 : std::min(1.0, std::exp(h0 - h1));
    if (!divergent && uniform_open(rng) < accept_prob) state = std::move(proposal);

    if (warming) {
      if (divergent) ++out.warmup_divergences;
      step = adapt.update(accept_prob);
      if (adapt_metric && it >= window_start && it < window_end) {
        ++w_count;
        const Eigen::VectorXd delta = state.q - w_mean;
        w_mean += delta / w_count;
        w_m2 += delta.cwiseProduct(state.q - w_mean);
      }
      if (adapt_metric && it + 1 == window_end && w_count > 2) {
        const double n = w_count;
        const Eigen::VectorXd var = w_m2 / (n - 1);
        inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
        step = find_reasonable_step(integ, state, rng, step);
        adapt = DualAveraging(step, config.target_accept);
      }
      if (it + 1 == warmup) {
        if (out.warmup_divergences == warmup) {
          throw Error(ErrorCode::AllDivergent, "every warmup trajectory diverged");
        }
        step = adapt.final_step();
      }
    } else {
      if (divergent) ++out.divergences;
      accept_sum += accept_prob;
      out.draws.row(it - warmup) = state.q.transpose();
    }
  }
  if (warmup == 0 && out.divergences == config.samples) {
    throw Error(ErrorCode::AllDivergent, "every trajectory diverged");
  }
  out.step_size = step;
  out.inv_metric = inv_metric;
  out.accept_rate = accept_sum / config.samples;
  return out;
}

HmcResult hmc_sample(const LogDensity& target, const Eigen::VectorXd& init, const HmcConfig& config,
                     std::uint64_t stream) {
  config.validate();
  HmcResult result;
  result.chains.resize(static_cast<std::size_t>(config.chains));
  parallel_for(result.chains.size(), config.threads, [&](std::size_t c) {
    const std::uint64_t seed = derive_seed(config.seed, {stream, c});
    // Small per-chain dispersion of the start so R-hat can see non-mixing.
    Rng rng(derive_seed(seed, {0xd15ea5e}));
    Eigen::VectorXd start = init;
    for (Eigen::Index i = 0; i < start.size(); ++i) start[i] += 0.2 * (uniform_open(rng) - 0.5);
    Eigen::VectorXd g(start.size());
    if (!std::isfinite(target(start, g))) start = init;
    result.chains[c] = hmc_chain(target, start, config, seed);
  });
  return result;
}

Eigen::MatrixXd HmcResult::pooled() const {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.draws.rows();
  Eigen::MatrixXd out(rows, chains.empty() ? 0 : chains.front().draws.cols());
  Eigen::Index r = 0;
  for (const auto& c : chains) {
    out.middleRows(r, c.draws.rows()) = c.draws;
    r += c.draws.rows();
  }
  return out;
}

int HmcResult::divergences() const {
  int n = 0;
  for (const auto& c : chains) n += c.divergences;
  return n;
}

double HmcResult::mean_accept_rate() const {
  double s = 0.0;
  for (const auto& c : chains) s += c.accept_rate;
  return chains.empty() ? 0.0 : s / static_cast<double>(chains.size());
}

namespace {

std::vector<Eigen::VectorXd> split_halves(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::TooFewChains, "diagnostics need at least two chains");
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    if (half < 2) throw Error(ErrorCode::InvalidArgument, "chains are too short for diagnostics");
    halves.emplace_back(c.head(half));
    halves.emplace_back(c.tail(half));
  }
  return halves;
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  const auto halves = split_halves(chains);
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves.front().size());
  double grand = 0.0;
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    const double mean = h.mean();
    means.push_back(mean);
    vars.push_back((h.array() - mean).square().sum() / (n - 1));
    grand += mean / m;
  }
  double between = 0.0, within = 0.0;
  for (std::size_t i = 0; i < halves.size(); ++i) {
    between += (means[i] - grand) * (means[i] - grand);
    within += vars[i] / m;
  }
  between *= n / (m - 1);
  if (!(within > 0)) return std::numeric_limits<double>::quiet_NaN();
  const double var_plus = (n - 1) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  const auto halves = split_halves(chains);
  const std::size_t m = halves.size();
  const Eigen::Index n = halves.front().size();
  const double nd = static_cast<double>(n);

  std::vector<Eigen::VectorXd> centered;
  std::vector<double> means;
  double within = 0.0, grand = 0.0;
  for (const auto& h : halves) {
    const double mean = h.mean();
    means.push_back(mean);
    centered.emplace_back(h.array() - mean);
    within += centered.back().squaredNorm() / (nd - 1) / static_cast<double>(m);
    grand += mean / static_cast<double>(m);
  }
  if (!(within > 0)) return std::numeric_limits<double>::quiet_NaN();
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between /= static_cast<double>(m - 1);
  const double var_plus = within * (nd - 1) / nd + between;

  auto autocorr = [&](Eigen::Index lag) {
    double acov = 0.0;
    for (const auto& c : centered) {
      acov += c.head(n - lag).dot(c.tail(n - lag)) / nd;
    }
    acov /= static_cast<double>(m);
    return 1.0 - (within - acov) / var_plus;
  };

  // Geyer's initial positive sequence with the monotone adjustment.
  double tau = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    const double rho_even = t == 0 ? 1.0 : autocorr(t);
    const double rho_odd = autocorr(t + 1);
    double pair = rho_even + rho_odd;
    if (pair <= 0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2 * pair;
  }
  tau -= 1.0;
  const double total = static_cast<double>(m) * nd;
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

std::vector<ParameterDiagnostics> diagnostics(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::TooFewChains, "diagnostics need at least two chains");
  const Eigen::Index dim = chains.front().cols();
  std::vector<ParameterDiagnostics> out(static_cast<std::size_t>(dim));
  for (Eigen::Index d = 0; d < dim; ++d) {
    std::vector<Eigen::VectorXd> cols;
    for (const auto& c : chains) cols.emplace_back(c.col(d));
    auto& r = out[static_cast<std::size_t>(d)];
    r.rhat = split_rhat(cols);
    r.ess = effective_sample_size(cols);
    r.flagged = !std::isfinite(r.rhat) || !std::isfinite(r.ess) || r.rhat > 1.05 || r.ess < 100;
  }
  return out;
}

}  // namespace retention
