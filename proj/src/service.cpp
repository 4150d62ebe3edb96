#include "retention/service.hpp"

#include "retention/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace retention {

using nlohmann::json;

namespace {

Error field_error(const std::string& field, const std::string& message, ErrorCode code = ErrorCode::InvalidArgument) {
  return Error(code, "field '" + field + "': " + message);
}

double number_field(const json& request, const std::string& field) {
  const auto& v = request.at(field);
  if (!v.is_number()) throw field_error(field, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw field_error(field, "must be finite");
  return x;
}

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

int status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownStratum: return 404;
    case ErrorCode::InvalidArgument:
    case ErrorCode::NonPositiveDelta:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NonPositiveTime: return 400;
    default: return 500;
  }
}

void require_object(const json& request) {
  if (!request.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
}

}  // namespace

ServiceResponse error_response(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return {status_of(err->code()), {{"error", {{"code", err->code_name()}, {"message", err->what()}}}}};
  }
  return {500, {{"error", {{"code", "Internal"}, {"message", e.what()}}}}};
}

RetentionService::RetentionService(PosteriorArtifact artifact, ServiceConfig config)
    : artifact_(std::move(artifact)), config_(config) {}

ServiceResponse RetentionService::health() const {
  json keys = json::array();
  for (const auto& [key, m] : artifact_.models) keys.push_back(key.to_string());
  return {200,
          {{"status", "ok"},
           {"strata", artifact_.cell_count()},
           {"models", artifact_.models.size()},
           {"draws", artifact_.draw_count()},
           {"visit", artifact_.metadata.visit},
           {"covariates", artifact_.metadata.covariate_names},
           {"schedule_options", artifact_.metadata.schedule_options},
           {"default_delta", artifact_.metadata.default_delta},
           {"keys", keys}}};
}

std::string RetentionService::pattern(const json& request) const {
  const auto& names = artifact_.metadata.covariate_names;
  if (request.contains("pattern") && !request.at("pattern").is_null()) {
    if (!request.at("pattern").is_string()) throw field_error("pattern", "must be a string of 0/1 flags");
    const auto p = request.at("pattern").get<std::string>();
    if (p.size() != names.size() || p.find_first_not_of("01") != std::string::npos) {
      throw field_error("pattern", "must hold one 0/1 flag per covariate (" + std::to_string(names.size()) + ")");
    }
    return p;
  }
  // Without an explicit pattern, a covariate is monitored iff it is given.
  std::string p(names.size(), '0');
  if (request.contains("covariates") && request.at("covariates").is_object()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& c = request.at("covariates");
      if (c.contains(names[i]) && !c.at(names[i]).is_null()) p[i] = '1';
    }
  }
  return p;
}

Observation RetentionService::observation(const json& request) const {
  require_object(request);
  const auto& names = artifact_.metadata.covariate_names;
  const auto p = pattern(request);
  json covariates = json::object();
  if (request.contains("covariates")) {
    covariates = request.at("covariates");
    if (!covariates.is_object()) throw field_error("covariates", "must be an object of name -> value");
  }
  for (const auto& [name, value] : covariates.items()) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw field_error("covariates." + name, "is not a covariate of this artifact");
    }
  }
  Observation obs;
  obs.values.assign(names.size(), std::numeric_limits<double>::quiet_NaN());
  obs.monitored.assign(names.size(), false);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (p[i] != '1') continue;
    if (!covariates.contains(names[i]) || covariates.at(names[i]).is_null()) {
      throw field_error("covariates." + names[i], "is monitored in the pattern but missing");
    }
    obs.values[i] = number_field(covariates, names[i]);
    obs.monitored[i] = true;
  }
  if (request.contains("prev_waiting")) obs.prev_waiting = number_field(request, "prev_waiting");
  if (request.contains("prev_schedule")) obs.prev_schedule = number_field(request, "prev_schedule");
  if (artifact_.metadata.visit > 1 && (!obs.prev_waiting || !obs.prev_schedule)) {
    throw field_error("prev_waiting", "prev_waiting and prev_schedule are required after the first visit");
  }
  return obs;
}

GcompConfig RetentionService::gcomp_config(const json& request) const {
  GcompConfig g;
  g.simulations = config_.simulations;
  g.seed = config_.seed;
  g.max_draws = config_.max_draws;
  g.threads = config_.threads;
  g.delta = artifact_.metadata.default_delta;
  if (request.contains("delta") && !request.at("delta").is_null()) {
    g.delta = number_field(request, "delta");
    if (!(g.delta > 0)) throw field_error("delta", "must be positive", ErrorCode::NonPositiveDelta);
  }
  if (request.contains("seed") && !request.at("seed").is_null()) {
    if (!non_negative_integer(request.at("seed"))) throw field_error("seed", "must be a non-negative integer");
    g.seed = request.at("seed").get<std::uint64_t>();
  }
  if (request.contains("simulations") && !request.at("simulations").is_null()) {
    if (!non_negative_integer(request.at("simulations")) || request.at("simulations").get<std::size_t>() == 0) {
      throw field_error("simulations", "must be a positive integer");
    }
    g.simulations = request.at("simulations").get<std::size_t>();
  }
  return g;
}

std::vector<double> RetentionService::options(const json& request) const {
  if (!request.contains("options") || request.at("options").is_null()) {
    return artifact_.metadata.schedule_options.empty() ? std::vector<double>{2.0, 4.0, 8.0}
                                                       : artifact_.metadata.schedule_options;
  }
  const auto& o = request.at("options");
  if (!o.is_array() || o.empty()) throw field_error("options", "must be a non-empty array of schedules");
  std::vector<double> out;
  for (const auto& v : o) {
    if (!v.is_number() || !(v.get<double>() > 0)) throw field_error("options", "schedules must be positive numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

namespace {

std::string site_of(const json& request) {
  if (!request.contains("site") || request.at("site").is_null()) return "";
  if (!request.at("site").is_string()) throw field_error("site", "must be a string");
  return request.at("site").get<std::string>();
}

}  // namespace

ServiceResponse RetentionService::predict(const json& request) const {
  try {
    require_object(request);
    const auto obs = observation(request);
    const auto g = gcomp_config(request);
    if (!request.contains("schedule")) throw field_error("schedule", "is required");
    const double s = number_field(request, "schedule");
    if (!(s > 0)) throw field_error("schedule", "must be positive");
    const StratumCell cell{s, pattern(request), site_of(request)};
    auto body = retention_probability(artifact_, cell, obs, g).to_json();
    body["seed"] = g.seed;
    body["simulations"] = g.simulations;
    return {200, body};
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

ServiceResponse RetentionService::optimize(const json& request) const {
  try {
    require_object(request);
    const auto obs = observation(request);
    const auto g = gcomp_config(request);
    auto body = optimal_schedule(artifact_, pattern(request), site_of(request), obs, options(request), g).to_json();
    body["delta"] = g.delta;
    body["seed"] = g.seed;
    body["simulations"] = g.simulations;
    return {200, body};
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

ServiceResponse RetentionService::curve(const json& request) const {
  try {
    require_object(request);
    const auto obs = observation(request);
    const auto g = gcomp_config(request);
    if (!request.contains("delta_grid")) throw field_error("delta_grid", "is required");
    const auto& grid_json = request.at("delta_grid");
    if (!grid_json.is_array() || grid_json.empty()) throw field_error("delta_grid", "must be a non-empty array");
    std::vector<double> grid;
    for (const auto& v : grid_json) {
      if (!v.is_number()) throw field_error("delta_grid", "values must be numbers");
      grid.push_back(v.get<double>());
    }
    for (std::size_t t = 0; t < grid.size(); ++t) {
      if (!(grid[t] > 0)) throw field_error("delta_grid", "values must be positive", ErrorCode::NonPositiveDelta);
      if (t > 0 && !(grid[t] > grid[t - 1])) throw field_error("delta_grid", "must be strictly increasing");
    }
    std::vector<double> schedules;
    if (request.contains("schedule") && !request.at("schedule").is_null()) {
      schedules.push_back(number_field(request, "schedule"));
    } else {
      schedules = options(request);
    }
    const auto p = pattern(request);
    const auto site = site_of(request);
    json curves = json::object();
    for (double s : schedules) {
      curves[format_number(s)] = subdistribution_curve(artifact_, {s, p, site}, obs, grid, g).to_json();
    }
    return {200, {{"delta_grid", grid}, {"current_delta", g.delta}, {"seed", g.seed}, {"curves", curves}}};
  } catch (const std::exception& e) {
    return error_response(e);
  }
}

ServiceResponse RetentionService::handle(const std::string& method, const std::string& path, const std::string& body) const {
  if (method == "GET" && path == "/health") return health();
  const bool known = path == "/predict" || path == "/optimize" || path == "/curve";
  if (!known) return {404, {{"error", {{"code", "NotFound"}, {"message", "no route for " + path}}}}};
  if (method != "POST") return {405, {{"error", {{"code", "MethodNotAllowed"}, {"message", path + " expects POST"}}}}};
  json request;
  try {
    request = json::parse(body);
  } catch (const std::exception& e) {
    return {400, {{"error", {{"code", "InvalidArgument"}, {"message", std::string("body is not valid JSON: ") + e.what()}}}}};
  }
  if (path == "/predict") return predict(request);
  if (path == "/optimize") return optimize(request);
  return curve(request);
}

HttpServer::HttpServer(const RetentionService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  install();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install() {
  const auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = service_.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.text(), "application/json");
  };
  server_->Get("/health", route);
  server_->Post("/predict", route);
  server_->Post("/optimize", route);
  server_->Post("/curve", route);
  // SO_REUSEADDR only: a port already served must fail to bind.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server_->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

int HttpServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::BindError, "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  server_->listen_after_bind();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace retention
