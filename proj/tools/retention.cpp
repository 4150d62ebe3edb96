#include "retention/artifact.hpp"
#include "retention/error.hpp"
#include "retention/evaluation.hpp"
#include "retention/gcomp.hpp"
#include "retention/service.hpp"
#include "retention/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

using nlohmann::json;
namespace fs = std::filesystem;
using namespace retention;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "not a number: '" + item + "'");
    }
  }
  return out;
}

int fail(const json& error) {
  std::cerr << error.dump() << '\n';
  return 1;
}

int fail(const std::exception& e) { return fail(error_response(e).body); }

struct QueryOptions {
  std::string artifact;
  std::string input;
  std::optional<double> delta;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> simulations;
  std::size_t max_draws = 0;
  std::string options;
  std::string delta_grid;
  bool triage = false;
  int threads = 0;
};

void add_query_flags(CLI::App* cmd, QueryOptions& q) {
  cmd->add_option("--artifact", q.artifact, "posterior artifact (.json or CBOR)")->required();
  cmd->add_option("--input", q.input, "request JSON: one object or an array of objects")->required();
  cmd->add_option("--delta", q.delta, "retention window in weeks (default 90/7)");
  cmd->add_option("--seed", q.seed, "g-computation seed");
  cmd->add_option("--simulations", q.simulations, "Monte Carlo simulations per posterior draw");
  cmd->add_option("--max-draws", q.max_draws, "thin to at most this many posterior draws (0 = all)");
}

// Runs one handler over each request of the input, CLI flags overriding
// request fields.
int run_query(const QueryOptions& q, const std::string& endpoint) {
  ServiceConfig sc;
  sc.max_draws = q.max_draws;
  sc.threads = resolve_threads(q.threads);
  const RetentionService service(PosteriorArtifact::load(q.artifact), sc);
  json input = read_json(q.input);
  const bool batch = input.is_array();
  if (!batch) input = json::array({input});
  json out = json::array();
  std::vector<RetentionEstimate> estimates;
  for (auto request : input) {
    if (!request.is_object()) throw Error(ErrorCode::InvalidArgument, "each request must be a JSON object");
    if (q.delta) request["delta"] = *q.delta;
    if (q.seed) request["seed"] = *q.seed;
    if (q.simulations) request["simulations"] = *q.simulations;
    if (!q.options.empty()) request["options"] = parse_list(q.options);
    if (!q.delta_grid.empty()) request["delta_grid"] = parse_list(q.delta_grid);
    if (endpoint == "optimize" && !request.contains("options")) request["options"] = json::array({2, 4, 8});
    const auto r = endpoint == "predict" ? service.predict(request)
                   : endpoint == "optimize" ? service.optimize(request)
                                            : service.curve(request);
    if (r.status != 200) return fail(r.body);
    if (q.triage) {
      RetentionEstimate e;
      e.mean = r.body.at("psi_mean").get<double>();
      e.ci_low = r.body.at("psi_ci")[0].get<double>();
      e.ci_high = r.body.at("psi_ci")[1].get<double>();
      estimates.push_back(e);
    }
    out.push_back(r.body);
  }
  if (q.triage) {
    const auto labels = triage_quadrants(estimates);
    for (std::size_t i = 0; i < labels.size(); ++i) out[i]["quadrant"] = labels[i];
  }
  std::cout << (batch ? out : out[0]).dump(2) << '\n';
  return 0;
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--bind expects addr:port");
  try {
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "--bind expects addr:port, got '" + bind + "'");
  }
}

HttpServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian transition models for visit retention"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: RETENTION_THREADS or all cores)");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "simulate training and test cohorts from a scenario");
  std::string scenario_path;
  std::string sim_out;
  std::optional<std::uint64_t> sim_seed;
  std::optional<std::size_t> sim_n;
  simulate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--seed", sim_seed, "override the scenario seed");
  simulate->add_option("--n", sim_n, "override the training cohort size");

  // fit
  auto* fit = app.add_subcommand("fit", "fit the stratified hazard models of one visit");
  std::string data_path;
  std::string fit_out;
  std::string fit_config_path;
  int visit = 1;
  bool strata_site = false;
  std::optional<std::uint64_t> fit_seed;
  std::optional<int> warmup, samples, chains, leapfrog;
  std::optional<std::size_t> intervals;
  std::vector<std::string> splines;
  std::string schedule_options;
  fit->add_option("--data", data_path, "visit CSV")->required();
  fit->add_option("--out", fit_out, "artifact path (.json for text, anything else CBOR)")->required();
  fit->add_option("--visit", visit, "visit index j")->check(CLI::PositiveNumber);
  fit->add_flag("--strata-site", strata_site, "stratify by site");
  fit->add_option("--config", fit_config_path, "fit config JSON; flags override it");
  fit->add_option("--seed", fit_seed, "sampler seed");
  fit->add_option("--warmup", warmup, "warmup iterations per chain");
  fit->add_option("--samples", samples, "retained draws per chain");
  fit->add_option("--chains", chains, "chains");
  fit->add_option("--leapfrog", leapfrog, "leapfrog steps per trajectory");
  fit->add_option("--intervals", intervals, "baseline hazard intervals");
  fit->add_option("--spline", splines, "covariates expanded in a cubic B-spline");
  fit->add_option("--schedule-options", schedule_options, "comma-separated schedule options to accept");

  // predict / optimize / curve
  QueryOptions predict_q, optimize_q, curve_q;
  auto* predict = app.add_subcommand("predict", "posterior retention probability under one schedule");
  add_query_flags(predict, predict_q);
  predict->add_flag("--triage", predict_q.triage, "label a batch by mean/CI-width quadrant");
  auto* optimize = app.add_subcommand("optimize", "posterior PMF of the optimal schedule");
  add_query_flags(optimize, optimize_q);
  optimize->add_option("--options", optimize_q.options, "comma-separated schedule options (default 2,4,8)");
  auto* curve = app.add_subcommand("curve", "retention across a grid of windows");
  add_query_flags(curve, curve_q);
  curve->add_option("--delta-grid", curve_q.delta_grid, "comma-separated increasing windows")->required();
  curve->add_option("--options", curve_q.options, "comma-separated schedule options");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "run the simulation study");
  std::string grid_path;
  std::string report_out;
  std::string table_out;
  std::string replicates_out;
  std::optional<std::size_t> reps;
  std::optional<std::uint64_t> eval_seed;
  evaluate->add_option("--grid", grid_path, "experiment JSON (scenarios, sampler and g-computation settings)")->required();
  evaluate->add_option("--reps", reps, "replications per scenario");
  evaluate->add_option("--out", report_out, "report CSV")->required();
  evaluate->add_option("--table", table_out, "formatted table (default: stdout)");
  evaluate->add_option("--replicates", replicates_out, "per-replicate CSV");
  evaluate->add_option("--seed", eval_seed, "experiment seed");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP API over an artifact");
  std::string serve_artifact;
  std::string bind = "127.0.0.1:8080";
  ServiceConfig serve_config;
  serve->add_option("--artifact", serve_artifact, "posterior artifact")->required();
  serve->add_option("--bind", bind, "addr:port");
  serve->add_option("--seed", serve_config.seed, "default g-computation seed");
  serve->add_option("--simulations", serve_config.simulations, "default simulations per draw");
  serve->add_option("--max-draws", serve_config.max_draws, "thin to at most this many draws (0 = all)");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "recompute the preset masking and censoring intercepts");
  std::size_t calibrate_n = 200000;
  calibrate->add_option("--n", calibrate_n, "subjects per evaluation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const int n_threads = resolve_threads(threads);
    if (*simulate) {
      auto config = DgpConfig::from_json(read_json(scenario_path));
      if (sim_seed) config.seed = *sim_seed;
      if (sim_n) config.n_train = *sim_n;
      const auto data = simulate_cohort(config);
      fs::create_directories(sim_out);
      write_cohort(fs::path(sim_out) / "train.csv", data.train);
      write_cohort(fs::path(sim_out) / "test.csv", data.test);
      json truth = json::array();
      for (const auto& t : data.truth) truth.push_back(t.to_json());
      write_text(fs::path(sim_out) / "truth.json", truth.dump(1));
      write_text(fs::path(sim_out) / "config.json", config.to_json().dump(2));
      const auto s = summarize(data.train_latent, config.params.schedule_options);
      std::cout << json{{"train", data.train.records.size()},
                        {"test", data.test.records.size()},
                        {"censored", s.censored},
                        {"died", s.died},
                        {"any_missing", s.any_missing},
                        {"schedule_shares", s.schedule_shares}}
                       .dump()
                << '\n';
    } else if (*fit) {
      FitConfig config = fit_config_path.empty() ? FitConfig{} : FitConfig::from_json(read_json(fit_config_path));
      if (fit_seed) config.hmc.seed = *fit_seed;
      if (warmup) config.hmc.warmup = *warmup;
      if (samples) config.hmc.samples = *samples;
      if (chains) config.hmc.chains = *chains;
      if (leapfrog) config.hmc.leapfrog = *leapfrog;
      if (intervals) config.intervals = *intervals;
      if (!splines.empty()) config.spline_covariates = splines;
      if (strata_site) config.stratify_site = true;
      config.threads = n_threads;
      config.hmc.validate();
      CohortSchema schema;
      if (!schedule_options.empty()) schema.schedule_options = parse_list(schedule_options);
      const auto cohort = parse_cohort(data_path, schema);
      const auto artifact = fit_all_strata(cohort, visit, config);
      artifact.save(fit_out);
      json summary = json::array();
      for (const auto& [key, m] : artifact.models) {
        std::size_t flagged = 0;
        for (const auto& d : m.diagnostics.parameters) flagged += d.flagged ? 1 : 0;
        summary.push_back({{"key", key.to_string()},
                           {"records", m.n_records},
                           {"events", m.n_events},
                           {"low_information", m.low_information},
                           {"divergences", m.diagnostics.divergences},
                           {"flagged_parameters", flagged}});
      }
      std::cout << json{{"artifact", fit_out}, {"draws", artifact.draw_count()}, {"models", summary}}.dump(2) << '\n';
    } else if (*predict) {
      predict_q.threads = threads;
      return run_query(predict_q, "predict");
    } else if (*optimize) {
      optimize_q.threads = threads;
      return run_query(optimize_q, "optimize");
    } else if (*curve) {
      curve_q.threads = threads;
      return run_query(curve_q, "curve");
    } else if (*evaluate) {
      auto config = ExperimentConfig::from_json(read_json(grid_path));
      if (reps) config.replications = *reps;
      if (eval_seed) config.seed = *eval_seed;
      config.threads = n_threads;
      const auto report = run_experiment(config);
      std::ofstream csv(report_out);
      if (!csv) throw Error(ErrorCode::IoError, "cannot write " + report_out);
      report.write_csv(csv);
      if (!replicates_out.empty()) {
        std::ofstream rep(replicates_out);
        report.write_replicates_csv(rep);
      }
      if (table_out.empty()) {
        report.write_table(std::cout);
      } else {
        std::ofstream table(table_out);
        report.write_table(table);
      }
    } else if (*serve) {
      serve_config.threads = n_threads;
      const RetentionService service(PosteriorArtifact::load(serve_artifact), serve_config);
      const auto [host, port] = parse_bind(bind);
      HttpServer server(service);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::cerr << json{{"listening", bind}, {"strata", service.artifact().cell_count()}}.dump() << '\n';
      server.run(host, port);
      g_server = nullptr;
    } else if (*calibrate) {
      json out = json::array();
      for (auto m : {MissingnessLevel::None, MissingnessLevel::Low, MissingnessLevel::High}) {
        auto p = DgpParams::preset(m, CensoringLevel::Low);
        if (m != MissingnessLevel::None) {
          const double a = calibrate_missingness(p, m == MissingnessLevel::Low ? 0.45 : 0.60, calibrate_n, 7);
          p.miss_x3.intercept = a;
          p.miss_x6.intercept = a;
        }
        out.push_back({{"missingness", level_name(m)},
                       {"miss_intercept", m == MissingnessLevel::None ? 0.0 : p.miss_x3.intercept},
                       {"censor_intercept_low", calibrate_censoring(p, 0.20, calibrate_n, 11)},
                       {"censor_intercept_high", calibrate_censoring(p, 0.40, calibrate_n, 11)}});
      }
      std::cout << out.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return 0;
}
