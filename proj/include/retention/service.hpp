#pragma once

#include "retention/artifact.hpp"
#include "retention/gcomp.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace retention {

struct ServiceConfig {
  std::size_t simulations = 1000;
  std::uint64_t seed = 20240101;  // used when a request carries none
  std::size_t max_draws = 0;
  int threads = 1;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;

  std::string text() const { return body.dump(); }
};

// Request handlers over one immutable artifact. Every response is a pure
// function of (artifact, request body, seed).
class RetentionService {
 public:
  explicit RetentionService(PosteriorArtifact artifact, ServiceConfig config = {});

  const PosteriorArtifact& artifact() const { return artifact_; }
  const ServiceConfig& config() const { return config_; }

  ServiceResponse health() const;
  ServiceResponse predict(const nlohmann::json& request) const;
  ServiceResponse optimize(const nlohmann::json& request) const;
  ServiceResponse curve(const nlohmann::json& request) const;
  // Parses the raw body and routes by method and path.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  // Request parsing shared with the CLI.
  Observation observation(const nlohmann::json& request) const;
  std::string pattern(const nlohmann::json& request) const;
  GcompConfig gcomp_config(const nlohmann::json& request) const;
  std::vector<double> options(const nlohmann::json& request) const;

 private:
  PosteriorArtifact artifact_;
  ServiceConfig config_;
};

ServiceResponse error_response(const std::exception& e);

// HTTP front end. start() binds and serves on a background thread; port 0
// picks a free port.
class HttpServer {
 public:
  explicit HttpServer(const RetentionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int start(const std::string& host, int port);
  // Binds and blocks until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void install();

  const RetentionService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace retention
