#include "retention/evaluation.hpp"

#include "retention/error.hpp"
#include "retention/logistic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace retention {

using nlohmann::json;

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    if (labels[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw Error(ErrorCode::OneClassOnly, "AUC needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double optimal_accuracy(const std::vector<double>& estimated, const std::vector<double>& truth) {
  if (estimated.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "estimates and truth differ in length");
  if (estimated.empty()) throw Error(ErrorCode::InvalidArgument, "no subjects");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < estimated.size(); ++i) hits += estimated[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(estimated.size());
}

double optimal_accuracy(const std::vector<double>& estimated, const std::vector<TruthRecord>& truth) {
  std::vector<double> t;
  t.reserve(truth.size());
  for (const auto& r : truth) t.push_back(r.optimal);
  return optimal_accuracy(estimated, t);
}

std::string method_name(Method m) { return m == Method::Btm ? "btm" : "logistic"; }

Method parse_method(const std::string& text) {
  if (text == "btm") return Method::Btm;
  if (text == "logistic") return Method::Logistic;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + text + "'");
}

namespace {

int dichotomized(const VisitRecord& r, double delta) {
  return retention_label(r.waiting_time, r.event, r.scheduled_return, delta) == Retention::Retained ? 1 : 0;
}

double prevalence(const Cohort& train, double delta) {
  double sum = 0.0;
  for (const auto& r : train.records) sum += dichotomized(r, delta);
  return train.records.empty() ? 0.5 : sum / static_cast<double>(train.records.size());
}

Eigen::VectorXd logistic_row(const Observation& obs, double schedule, const std::vector<double>& options) {
  std::vector<double> row{1.0};
  for (std::size_t p = 0; p < obs.size(); ++p) {
    if (obs.monitored[p]) row.push_back(obs.covariate(p));
  }
  for (std::size_t k = 1; k < options.size(); ++k) row.push_back(schedule == options[k] ? 1.0 : 0.0);
  return Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
}

}  // namespace

MethodResult logistic_method(const Cohort& train, const Cohort& test, double delta) {
  const auto& options = train.schedule_options;
  std::map<std::string, std::vector<const VisitRecord*>> by_pattern;
  for (const auto& r : train.records) by_pattern[r.obs.pattern()].push_back(&r);
  std::map<std::string, LogisticFit> fits;
  for (const auto& [pattern, records] : by_pattern) {
    const auto cols = logistic_row(records.front()->obs, options.front(), options).size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), cols);
    Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = logistic_row(records[i]->obs, records[i]->scheduled_return, options).transpose();
      y[static_cast<Eigen::Index>(i)] = dichotomized(*records[i], delta);
    }
    try {
      fits.emplace(pattern, fit_logistic(x, y));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularInformation) throw;
    }
  }
  const double base = prevalence(train, delta);
  MethodResult out;
  for (const auto& r : test.records) {
    const auto it = fits.find(r.obs.pattern());
    if (it == fits.end()) {
      out.scores.push_back(base);
      out.modes.push_back(options.front());
      ++out.fallbacks;
      continue;
    }
    out.scores.push_back(it->second.predict(logistic_row(r.obs, r.scheduled_return, options)));
    std::size_t best = 0;
    double best_p = -1.0;
    for (std::size_t k = 0; k < options.size(); ++k) {
      const double p = it->second.predict(logistic_row(r.obs, options[k], options));
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    out.modes.push_back(options[best]);
  }
  return out;
}

MethodResult btm_method(const Cohort& train, const Cohort& test, const FitConfig& fit, const GcompConfig& gcomp) {
  const auto artifact = fit_all_strata(train, 1, fit);
  const double base = prevalence(train, gcomp.delta);
  const auto& options = train.schedule_options;
  MethodResult out;
  for (const auto& r : test.records) {
    const auto site = fit.stratify_site ? r.site : std::string();
    const auto pattern = r.obs.pattern();
    std::vector<double> present;
    for (double s : options) {
      const StratumCell cell{s, pattern, site};
      if (artifact.contains(make_key(1, 1, cell)) && artifact.contains(make_key(1, 0, cell))) present.push_back(s);
    }
    if (present.size() < options.size()) ++out.fallbacks;
    if (present.empty()) {
      out.scores.push_back(base);
      out.modes.push_back(options.front());
      continue;
    }
    const auto opt = optimal_schedule(artifact, pattern, site, r.obs, present, gcomp);
    out.modes.push_back(opt.mode);
    double score = base;
    for (const auto& est : opt.estimates) {
      if (est.schedule == r.scheduled_return) score = est.mean;
    }
    out.scores.push_back(score);
  }
  return out;
}

json ExperimentConfig::to_json() const {
  json sc = json::array();
  for (const auto& s : scenarios) sc.push_back(s.to_json());
  json m = json::array();
  for (auto method : methods) m.push_back(method_name(method));
  return {{"scenarios", sc},
          {"replications", replications},
          {"methods", m},
          {"fit", fit.to_json()},
          {"gcomp", gcomp.to_json()},
          {"seed", seed}};
}

std::vector<DgpConfig> ExperimentConfig::default_grid() {
  std::vector<DgpConfig> grid;
  for (auto c : {CensoringLevel::Low, CensoringLevel::High}) {
    for (auto m : {MissingnessLevel::None, MissingnessLevel::Low, MissingnessLevel::High}) {
      DgpConfig d;
      d.censoring = c;
      d.missingness = m;
      d.params = DgpParams::preset(m, c);
      grid.push_back(d);
    }
  }
  return grid;
}

namespace {

ExperimentConfig desk_defaults() {
  ExperimentConfig c;
  c.scenarios = ExperimentConfig::default_grid();
  c.fit.hmc.warmup = 300;
  c.fit.hmc.samples = 200;
  c.fit.hmc.chains = 2;
  c.fit.hmc.leapfrog = 16;
  c.gcomp.simulations = 200;
  c.gcomp.max_draws = 100;
  c.gcomp.delta = 2.0;
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c = desk_defaults();
  if (j.contains("scenarios")) {
    c.scenarios.clear();
    for (const auto& s : j.at("scenarios")) c.scenarios.push_back(DgpConfig::from_json(s));
  }
  c.replications = j.value("replications", c.replications);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("fit")) {
    // Unspecified sampler settings keep the desk defaults.
    json fit = c.fit.to_json();
    fit.merge_patch(j.at("fit"));
    c.fit = FitConfig::from_json(fit);
  }
  if (j.contains("gcomp")) {
    json g = c.gcomp.to_json();
    g.merge_patch(j.at("gcomp"));
    c.gcomp = GcompConfig::from_json(g);
  }
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (c.scenarios.empty()) throw Error(ErrorCode::InvalidArgument, "experiment has no scenarios");
  if (c.replications == 0) throw Error(ErrorCode::InvalidArgument, "replications must be positive");
  return c;
}

ReplicateResult run_replicate(const DgpConfig& scenario, Method method, const SimulatedData& data,
                              const ExperimentConfig& config, std::uint64_t seed) {
  ReplicateResult r;
  r.method = method;
  const auto summary = summarize(data.train_latent, scenario.params.schedule_options);
  r.censored = summary.censored;
  r.any_missing = summary.any_missing;
  MethodResult result;
  if (method == Method::Logistic) {
    result = logistic_method(data.train, data.test, scenario.delta);
  } else {
    FitConfig fit = config.fit;
    fit.hmc.seed = derive_seed(seed, {1});
    fit.threads = 1;
    GcompConfig gcomp = config.gcomp;
    gcomp.seed = derive_seed(seed, {2});
    gcomp.delta = scenario.delta;
    gcomp.threads = 1;
    result = btm_method(data.train, data.test, fit, gcomp);
  }
  std::vector<int> labels;
  for (const auto& t : data.truth) labels.push_back(t.label);
  r.auc = auc(result.scores, labels);
  r.accuracy = optimal_accuracy(result.modes, data.truth);
  r.fallbacks = result.fallbacks;
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  const std::size_t n_scen = config.scenarios.size();
  const std::size_t reps = config.replications;
  const std::size_t n_methods = config.methods.size();
  std::vector<ReplicateResult> results(n_scen * reps * n_methods);
  parallel_for(n_scen * reps, config.threads, [&](std::size_t task) {
    const std::size_t sc = task / reps;
    const std::size_t rep = task % reps;
    DgpConfig scenario = config.scenarios[sc];
    const auto seed = derive_seed(config.seed, {sc, rep});
    scenario.seed = seed;
    try {
      const auto data = simulate_cohort(scenario);
      for (std::size_t m = 0; m < n_methods; ++m) {
        auto r = run_replicate(scenario, config.methods[m], data, config, seed);
        r.scenario = sc;
        r.replicate = rep;
        results[task * n_methods + m] = r;
      }
    } catch (const Error& e) {
      throw Error(e.code(), scenario.name() + " replicate " + std::to_string(rep) + ": " + e.what());
    }
  });

  ExperimentReport report;
  report.replicates = results;
  for (std::size_t sc = 0; sc < n_scen; ++sc) {
    for (std::size_t m = 0; m < n_methods; ++m) {
      ReportRow row;
      row.scenario = config.scenarios[sc].name();
      row.censoring = level_name(config.scenarios[sc].censoring);
      row.missingness = level_name(config.scenarios[sc].missingness);
      row.method = config.methods[m];
      row.replications = reps;
      std::vector<double> a;
      std::vector<double> acc;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        const auto& r = results[(sc * reps + rep) * n_methods + m];
        a.push_back(r.auc);
        acc.push_back(r.accuracy);
        row.fallbacks_mean += static_cast<double>(r.fallbacks) / static_cast<double>(reps);
        row.censored_mean += r.censored / static_cast<double>(reps);
        row.any_missing_mean += r.any_missing / static_cast<double>(reps);
      }
      const auto mean_se = [](const std::vector<double>& v) {
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : std::numeric_limits<double>::quiet_NaN();
        return std::pair{mean, se};
      };
      std::tie(row.auc_mean, row.auc_se) = mean_se(a);
      std::tie(row.accuracy_mean, row.accuracy_se) = mean_se(acc);
      report.rows.push_back(row);
    }
  }
  return report;
}

const ReportRow& ExperimentReport::row(const std::string& censoring, const std::string& missingness, Method method) const {
  for (const auto& r : rows) {
    if (r.censoring == censoring && r.missingness == missingness && r.method == method) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "no report row for censoring " + censoring + ", missingness " + missingness);
}

void ExperimentReport::write_csv(std::ostream& out) const {
  out << "scenario,censoring,missingness,method,replications,auc_mean,auc_se,accuracy_mean,accuracy_se,"
         "fallbacks_mean,censored_mean,any_missing_mean\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.censoring << ',' << r.missingness << ',' << method_name(r.method) << ','
        << r.replications << ',' << r.auc_mean << ',' << r.auc_se << ',' << r.accuracy_mean << ',' << r.accuracy_se
        << ',' << r.fallbacks_mean << ',' << r.censored_mean << ',' << r.any_missing_mean << '\n';
  }
}

void ExperimentReport::write_replicates_csv(std::ostream& out) const {
  out << "scenario,replicate,method,auc,accuracy,fallbacks,censored,any_missing\n";
  out << std::setprecision(6);
  for (const auto& r : replicates) {
    out << r.scenario << ',' << r.replicate << ',' << method_name(r.method) << ',' << r.auc << ',' << r.accuracy << ','
        << r.fallbacks << ',' << r.censored << ',' << r.any_missing << '\n';
  }
}

void ExperimentReport::write_table(std::ostream& out) const {
  std::vector<Method> methods;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::sort(methods.begin(), methods.end(), [](Method a, Method b) { return method_name(a) > method_name(b); });
  const auto panel = [&](const char* title, bool accuracy) {
    out << title << '\n';
    out << std::left << std::setw(14) << "missingness";
    for (const char* c : {"low", "high"}) {
      for (auto m : methods) out << std::setw(20) << (std::string(c) + "-cens " + method_name(m));
    }
    out << '\n';
    for (const char* miss : {"none", "low", "high"}) {
      out << std::setw(14) << miss;
      for (const char* c : {"low", "high"}) {
        for (auto m : methods) {
          std::string cell = "-";
          for (const auto& r : rows) {
            if (r.censoring == c && r.missingness == miss && r.method == m) {
              std::ostringstream s;
              s << std::fixed << std::setprecision(3) << (accuracy ? r.accuracy_mean : r.auc_mean) << " ("
                << (accuracy ? r.accuracy_se : r.auc_se) << ")";
              cell = s.str();
            }
          }
          out << std::setw(20) << cell;
        }
      }
      out << '\n';
    }
  };
  panel("Panel A: mean test-set AUC (MC standard error)", false);
  out << '\n';
  panel("Panel B: optimal schedule accuracy (MC standard error)", true);
}

}  // namespace retention
