#include "retention/artifact.hpp"

#include "retention/error.hpp"
#include "retention/random.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace retention {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw Error(ErrorCode::ArtifactLoadError, "ragged draw matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double json_number(double x) { return std::isfinite(x) ? x : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

json FitConfig::to_json() const {
  return {{"hmc", hmc.to_json()},
          {"intervals", intervals},
          {"stratify_site", stratify_site},
          {"spline_covariates", spline_covariates},
          {"prior", {{"coef_variance", prior.coef_variance}, {"eta_sd", prior.eta_sd}, {"sigma_scale", prior.sigma_scale}}},
          {"min_return_events", min_return_events}};
}

FitConfig FitConfig::from_json(const json& j) {
  FitConfig c;
  if (j.contains("hmc")) c.hmc = HmcConfig::from_json(j.at("hmc"));
  c.intervals = j.value("intervals", c.intervals);
  c.stratify_site = j.value("stratify_site", c.stratify_site);
  c.spline_covariates = j.value("spline_covariates", c.spline_covariates);
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    c.prior.coef_variance = p.value("coef_variance", c.prior.coef_variance);
    c.prior.eta_sd = p.value("eta_sd", c.prior.eta_sd);
    c.prior.sigma_scale = p.value("sigma_scale", c.prior.sigma_scale);
  }
  c.min_return_events = j.value("min_return_events", c.min_return_events);
  c.threads = j.value("threads", c.threads);
  if (c.intervals < 2) throw Error(ErrorCode::InvalidArgument, "intervals must be at least 2");
  return c;
}

HazardParams PosteriorDraws::draw(std::size_t a) const {
  const auto i = static_cast<Eigen::Index>(a);
  HazardParams h;
  h.log_theta = log_theta.row(i).transpose();
  h.beta = beta.row(i).transpose();
  h.eta = eta[i];
  h.rho = rho[i];
  h.sigma = sigma[i];
  return h;
}

void PosteriorDraws::resize(std::size_t draws, std::size_t intervals, std::size_t predictors) {
  const auto a = static_cast<Eigen::Index>(draws);
  log_theta.resize(a, static_cast<Eigen::Index>(intervals));
  beta.resize(a, static_cast<Eigen::Index>(predictors));
  eta.resize(a);
  rho.resize(a);
  sigma.resize(a);
}

void PosteriorDraws::set(std::size_t a, const HazardParams& params) {
  const auto i = static_cast<Eigen::Index>(a);
  log_theta.row(i) = params.log_theta.transpose();
  beta.row(i) = params.beta.transpose();
  eta[i] = params.eta;
  rho[i] = params.rho;
  sigma[i] = params.sigma;
}

const FittedModel& PosteriorArtifact::model(const StratumKey& key) const {
  auto it = models.find(key);
  if (it == models.end()) throw Error(ErrorCode::UnknownStratum, "no model fitted for stratum " + key.to_string());
  return it->second;
}

std::size_t PosteriorArtifact::draw_count() const { return models.empty() ? 0 : models.begin()->second.draws.size(); }

std::size_t PosteriorArtifact::cell_count() const {
  std::set<StratumCell> cells;
  for (const auto& [key, m] : models) cells.insert(key.cell());
  return cells.size();
}

json PosteriorArtifact::to_json() const {
  json models_json = json::array();
  for (const auto& [key, m] : models) {
    json diag = json::array();
    for (std::size_t i = 0; i < m.diagnostics.parameters.size(); ++i) {
      const auto& d = m.diagnostics.parameters[i];
      diag.push_back({{"name", m.diagnostics.names[i]}, {"rhat", json_number(d.rhat)}, {"ess", json_number(d.ess)}, {"flagged", d.flagged}});
    }
    models_json.push_back({
        {"key", key.to_string()},
        {"partition", {{"intervals", m.partition.intervals()}, {"end", m.partition.end()}}},
        {"design", m.design.to_json()},
        {"n_records", m.n_records},
        {"n_events", m.n_events},
        {"low_information", m.low_information},
        {"draws",
         {{"log_theta", matrix_to_json(m.draws.log_theta)},
          {"beta", matrix_to_json(m.draws.beta)},
          {"eta", vector_to_json(m.draws.eta)},
          {"rho", vector_to_json(m.draws.rho)},
          {"sigma", vector_to_json(m.draws.sigma)}}},
        {"diagnostics",
         {{"parameters", diag},
          {"divergences", m.diagnostics.divergences},
          {"accept_rate", m.diagnostics.accept_rate},
          {"step_sizes", m.diagnostics.step_sizes}}},
    });
  }
  return {{"format", "retention-posterior"},
          {"version", kVersion},
          {"metadata",
           {{"visit", metadata.visit},
            {"covariate_names", metadata.covariate_names},
            {"schedule_options", metadata.schedule_options},
            {"stratify_site", metadata.stratify_site},
            {"default_delta", metadata.default_delta},
            {"fit", metadata.fit.to_json()}}},
          {"models", models_json}};
}

PosteriorArtifact PosteriorArtifact::from_json(const json& j) {
  try {
    if (j.value("format", "") != "retention-posterior") throw Error(ErrorCode::ArtifactLoadError, "not a posterior artifact");
    const int version = j.at("version").get<int>();
    if (version != kVersion) throw Error(ErrorCode::ArtifactLoadError, "unsupported artifact version " + std::to_string(version));
    PosteriorArtifact a;
    const auto& md = j.at("metadata");
    a.metadata.visit = md.at("visit").get<int>();
    a.metadata.covariate_names = md.at("covariate_names").get<std::vector<std::string>>();
    a.metadata.schedule_options = md.at("schedule_options").get<std::vector<double>>();
    a.metadata.stratify_site = md.at("stratify_site").get<bool>();
    a.metadata.default_delta = md.at("default_delta").get<double>();
    a.metadata.fit = FitConfig::from_json(md.at("fit"));
    std::size_t draw_count = 0;
    for (const auto& mj : j.at("models")) {
      FittedModel m;
      m.key = StratumKey::parse(mj.at("key").get<std::string>());
      m.partition = Partition(mj.at("partition").at("intervals").get<std::size_t>(), mj.at("partition").at("end").get<double>());
      m.design = DesignSpec::from_json(mj.at("design"));
      m.n_records = mj.at("n_records").get<std::size_t>();
      m.n_events = mj.at("n_events").get<std::size_t>();
      m.low_information = mj.at("low_information").get<bool>();
      const auto& dj = mj.at("draws");
      m.draws.log_theta = matrix_from_json(dj.at("log_theta"), static_cast<Eigen::Index>(m.partition.intervals()));
      m.draws.beta = matrix_from_json(dj.at("beta"), static_cast<Eigen::Index>(m.design.dim()));
      m.draws.eta = vector_from_json(dj.at("eta"));
      m.draws.rho = vector_from_json(dj.at("rho"));
      m.draws.sigma = vector_from_json(dj.at("sigma"));
      const auto a_count = m.draws.size();
      if (static_cast<std::size_t>(m.draws.log_theta.rows()) != a_count ||
          static_cast<std::size_t>(m.draws.beta.rows()) != a_count ||
          static_cast<std::size_t>(m.draws.rho.size()) != a_count || static_cast<std::size_t>(m.draws.sigma.size()) != a_count) {
        throw Error(ErrorCode::ArtifactLoadError, "draw arrays disagree in length for " + m.key.to_string());
      }
      if (draw_count == 0) draw_count = a_count;
      if (a_count != draw_count) throw Error(ErrorCode::ArtifactLoadError, "draw counts differ across models");
      const auto& diag = mj.at("diagnostics");
      for (const auto& p : diag.at("parameters")) {
        m.diagnostics.names.push_back(p.at("name").get<std::string>());
        ParameterDiagnostics d;
        d.rhat = p.at("rhat").is_number() ? p.at("rhat").get<double>() : std::numeric_limits<double>::quiet_NaN();
        d.ess = p.at("ess").is_number() ? p.at("ess").get<double>() : std::numeric_limits<double>::quiet_NaN();
        d.flagged = p.at("flagged").get<bool>();
        m.diagnostics.parameters.push_back(d);
      }
      m.diagnostics.divergences = diag.at("divergences").get<int>();
      m.diagnostics.accept_rate = diag.at("accept_rate").get<double>();
      m.diagnostics.step_sizes = diag.at("step_sizes").get<std::vector<double>>();
      const auto key = m.key;
      a.models.emplace(key, std::move(m));
    }
    return a;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ArtifactLoadError, std::string("malformed artifact: ") + e.what());
  }
}

void PosteriorArtifact::save(const std::filesystem::path& path) const {
  const json j = to_json();
  if (path.extension() == ".json") {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump();
  } else {
    const auto bytes = json::to_cbor(j);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

PosteriorArtifact PosteriorArtifact::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ArtifactLoadError, "cannot open artifact " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    if (!bytes.empty() && (bytes.front() == '{' || bytes.front() == ' ' || bytes.front() == '\n')) {
      j = json::parse(bytes.begin(), bytes.end());
    } else {
      j = json::from_cbor(bytes);
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ArtifactLoadError, "cannot parse artifact " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

FittedModel fit_model(const StratumKey& key, const std::vector<const VisitRecord*>& records,
                      const std::vector<std::string>& covariate_names, const FitConfig& config) {
  if (records.empty()) throw Error(ErrorCode::EmptyStratum, "stratum " + key.to_string() + " is empty");
  FittedModel m;
  m.key = key;
  m.design = build_design(records, covariate_names, config.spline_covariates, key.visit);
  const auto data = StratumData::from_records(records, m.design);
  m.partition = build_partition(data, config.intervals);
  const CauseModel model(m.partition, data, key.cause, config.prior);
  m.n_records = records.size();
  m.n_events = model.events();
  m.low_information = low_information(records, config.min_return_events);

  const LogDensity target = [&model](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    try {
      return model.log_posterior(q, &g);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFiniteValue) return -std::numeric_limits<double>::infinity();
      throw;
    }
  };
  HmcResult result;
  try {
    result = hmc_sample(target, model.initial_point(), config.hmc, fnv1a(key.to_string()));
  } catch (const Error& e) {
    throw Error(e.code(), "stratum " + key.to_string() + ": " + e.what());
  }

  const auto per_chain = static_cast<std::size_t>(config.hmc.samples);
  m.draws.resize(per_chain * result.chains.size(), model.intervals(), model.predictors());
  std::vector<Eigen::MatrixXd> natural(result.chains.size());
  const auto width = static_cast<Eigen::Index>(model.intervals() + model.predictors() + 3);
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    natural[c].resize(static_cast<Eigen::Index>(per_chain), width);
    for (std::size_t s = 0; s < per_chain; ++s) {
      const auto h = model.unpack(result.chains[c].draws.row(static_cast<Eigen::Index>(s)).transpose());
      m.draws.set(c * per_chain + s, h);
      auto row = natural[c].row(static_cast<Eigen::Index>(s));
      row.head(h.log_theta.size()) = h.log_theta.transpose();
      row.segment(h.log_theta.size(), h.beta.size()) = h.beta.transpose();
      row[width - 3] = h.eta;
      row[width - 2] = h.rho;
      row[width - 1] = h.sigma;
    }
    m.diagnostics.step_sizes.push_back(result.chains[c].step_size);
  }
  for (std::size_t u = 0; u < model.intervals(); ++u) m.diagnostics.names.push_back("log_theta[" + std::to_string(u) + "]");
  for (const auto& n : m.design.names()) m.diagnostics.names.push_back("beta[" + n + "]");
  m.diagnostics.names.insert(m.diagnostics.names.end(), {"eta", "rho", "sigma"});
  if (natural.size() >= 2) {
    m.diagnostics.parameters = diagnostics(natural);
  } else {
    m.diagnostics.parameters.assign(static_cast<std::size_t>(width),
                                    {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), true});
  }
  m.diagnostics.divergences = result.divergences();
  m.diagnostics.accept_rate = result.mean_accept_rate();
  return m;
}

PosteriorArtifact fit_all_strata(const Cohort& cohort, int visit, const FitConfig& config) {
  const auto strata = derive_strata(cohort, visit, config.stratify_site);
  if (strata.empty()) throw Error(ErrorCode::EmptyStratum, "risk set for visit " + std::to_string(visit) + " is empty");

  PosteriorArtifact artifact;
  artifact.metadata.visit = visit;
  artifact.metadata.covariate_names = cohort.covariate_names;
  artifact.metadata.schedule_options = cohort.schedule_options;
  artifact.metadata.stratify_site = config.stratify_site;
  artifact.metadata.fit = config;

  std::vector<const StratumMap::value_type*> work;
  for (const auto& entry : strata) work.push_back(&entry);
  std::vector<FittedModel> fitted(work.size());
  FitConfig inner = config;
  inner.hmc.threads = 1;
  parallel_for(work.size(), config.threads, [&](std::size_t i) {
    fitted[i] = fit_model(work[i]->first, work[i]->second, cohort.covariate_names, inner);
  });
  for (auto& m : fitted) {
    const auto key = m.key;
    artifact.models.emplace(key, std::move(m));
  }
  return artifact;
}

}  // namespace retention
