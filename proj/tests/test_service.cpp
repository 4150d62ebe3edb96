#include "retention/error.hpp"
#include "retention/service.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <future>

using namespace retention;
using namespace retention::testing;
using nlohmann::json;

namespace {

// Covariate "vl" with both monitoring patterns; schedules 2, 4 and 8 share
// a return hazard concentrated in the first week and independent death
// rate draws, so the options are exchangeable.
PosteriorArtifact service_artifact() {
  const std::size_t draws = 600;
  ArtifactBuilder b({"vl"});
  std::uint64_t seed = 0;
  for (const char* pattern : {"0", "1"}) {
    for (double s : {2.0, 4.0, 8.0}) {
      Rng rng(++seed);
      RateDraws death;
      for (std::size_t a = 0; a < draws; ++a) death.push_back({0.5 + 19.5 * uniform_open(rng)});
      b.cell(s, constant_rates(20, draws), death, 10, pattern);
    }
  }
  b.beta({1, 1, 4, "1", ""}, {-0.2});
  return b.build();
}

ServiceConfig service_config() {
  ServiceConfig c;
  c.simulations = 200;
  c.seed = 9;
  return c;
}

const RetentionService& service() {
  static const RetentionService s(service_artifact(), service_config());
  return s;
}

json predict_request() { return {{"covariates", {{"vl", 1.5}}}, {"schedule", 4}, {"delta", 2}, {"seed", 3}}; }

}  // namespace

TEST_CASE("health echoes the artifact metadata") {
  const auto r = service().health();
  CHECK(r.status == 200);
  CHECK(r.body.at("status") == "ok");
  CHECK(r.body.at("strata") == 6);
  CHECK(r.body.at("models") == 12);
  CHECK(r.body.at("draws") == 600);
  CHECK(r.body.at("default_delta").get<double>() == doctest::Approx(90.0 / 7.0));
  CHECK(r.body.at("keys").size() == 12);
}

TEST_CASE("predict equals the direct library call under the same seed") {
  const auto r = service().predict(predict_request());
  REQUIRE(r.status == 200);
  Observation obs;
  obs.values = {1.5};
  obs.monitored = {true};
  GcompConfig g;
  g.simulations = 200;
  g.seed = 3;
  g.delta = 2;
  const auto direct = retention_probability(service().artifact(), {4, "1", ""}, obs, g).to_json();
  for (const auto& [k, v] : direct.items()) CHECK(r.body.at(k) == v);
  CHECK(r.body.at("key") == "1:1:4:1:");
  CHECK(r.body.at("seed") == 3);
}

TEST_CASE("identical requests give byte-identical responses") {
  const auto a = service().handle("POST", "/predict", predict_request().dump());
  const auto b = service().handle("POST", "/predict", predict_request().dump());
  CHECK(a.text() == b.text());
  auto other = predict_request();
  other["seed"] = 4;
  CHECK(service().handle("POST", "/predict", other.dump()).text() != a.text());
}

TEST_CASE("the default delta is the ninety-day window") {
  auto implicit = predict_request();
  implicit.erase("delta");
  auto explicit_delta = predict_request();
  explicit_delta["delta"] = 90.0 / 7.0;
  const auto a = service().predict(implicit);
  const auto b = service().predict(explicit_delta);
  CHECK(a.status == 200);
  CHECK(a.text() == b.text());
  CHECK(a.body.at("delta").get<double>() == doctest::Approx(12.857).epsilon(1e-4));
}

TEST_CASE("request errors map onto status codes") {
  auto unknown = predict_request();
  unknown["schedule"] = 6;
  const auto r404 = service().predict(unknown);
  CHECK(r404.status == 404);
  CHECK(r404.body.at("error").at("code") == "UnknownStratum");

  auto negative = predict_request();
  negative["delta"] = -1;
  const auto r400 = service().predict(negative);
  CHECK(r400.status == 400);
  CHECK(r400.body.at("error").at("code") == "NonPositiveDelta");

  auto missing = predict_request();
  missing.erase("schedule");
  const auto field = service().predict(missing);
  CHECK(field.status == 400);
  CHECK(field.body.at("error").at("message").get<std::string>().find("field 'schedule'") != std::string::npos);

  auto stray = predict_request();
  stray["covariates"]["cd4"] = 3;
  CHECK(service().predict(stray).status == 400);

  auto bad_pattern = predict_request();
  bad_pattern["pattern"] = "11";
  CHECK(service().predict(bad_pattern).status == 400);

  CHECK(service().predict(json::array()).status == 400);
  CHECK(service().handle("POST", "/predict", "{oops").status == 400);
  CHECK(service().handle("GET", "/predict", "").status == 405);
  CHECK(service().handle("GET", "/nowhere", "").status == 404);
}

TEST_CASE("the monitoring pattern follows the covariates given") {
  json request = {{"schedule", 2}, {"delta", 2}};
  const auto r = service().predict(request);
  REQUIRE(r.status == 200);
  CHECK(r.body.at("key") == "1:1:2:0:");
  request["pattern"] = "1";
  CHECK(service().predict(request).status == 400);
}

TEST_CASE("optimize returns a uniform PMF over exchangeable options") {
  const json request = {{"covariates", json::object()}, {"delta", 2}, {"simulations", 300}};
  const auto r = service().optimize(request);
  REQUIRE(r.status == 200);
  double total = 0.0;
  for (const auto& [k, v] : r.body.at("pmf").items()) {
    total += v.get<double>();
    CHECK(std::abs(v.get<double>() - 1.0 / 3.0) < 0.07);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.body.at("options") == json({2.0, 4.0, 8.0}));
  CHECK(r.body.at("triangle").size() == 2);

  json two = request;
  two["options"] = {8, 2};
  const auto r2 = service().optimize(two);
  REQUIRE(r2.status == 200);
  CHECK(r2.body.at("options") == json({2.0, 8.0}));
  two["options"] = {2, 2};
  CHECK(service().optimize(two).status == 400);
}

TEST_CASE("curve responses are monotone in delta") {
  const json request = {{"covariates", {{"vl", 0.3}}}, {"delta_grid", {0.5, 1, 2, 4, 8}}, {"simulations", 100}};
  const auto r = service().curve(request);
  REQUIRE(r.status == 200);
  CHECK(r.body.at("curves").size() == 3);
  for (const auto& [s, curve] : r.body.at("curves").items()) {
    double prev = -1.0;
    for (const auto& point : curve.at("curve")) {
      CHECK(point.at("mean").get<double>() >= prev);
      prev = point.at("mean").get<double>();
    }
  }
  CHECK(r.body.at("current_delta").get<double>() == doctest::Approx(90.0 / 7.0));

  json single = request;
  single["schedule"] = 4;
  CHECK(service().curve(single).body.at("curves").size() == 1);
  single["delta_grid"] = {2, 1};
  CHECK(service().curve(single).status == 400);
  single.erase("delta_grid");
  CHECK(service().curve(single).status == 400);
}

TEST_CASE("the HTTP server answers like the handlers") {
  HttpServer server(service());
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  const auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->body == service().health().text());
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  const auto body = predict_request().dump();
  const auto expected = service().handle("POST", "/predict", body).text();
  std::vector<std::future<std::string>> replies;
  for (int i = 0; i < 4; ++i) {
    replies.push_back(std::async(std::launch::async, [port, &body] {
      httplib::Client c("127.0.0.1", port);
      const auto res = c.Post("/predict", body, "application/json");
      return res ? res->body : std::string("no response");
    }));
  }
  for (auto& f : replies) CHECK(f.get() == expected);

  auto unknown = predict_request();
  unknown["schedule"] = 6;
  const auto missing = client.Post("/predict", unknown.dump(), "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  const auto opt = client.Post("/optimize", json{{"delta", 2}}.dump(), "application/json");
  REQUIRE(opt);
  CHECK(opt->status == 200);
  const auto preflight = client.Options("/predict");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);
  server.stop();
}

TEST_CASE("binding a port twice fails with BindError") {
  HttpServer first(service());
  const int port = first.start("127.0.0.1", 0);
  HttpServer second(service());
  try {
    second.start("127.0.0.1", port);
    FAIL("expected BindError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BindError);
  }
}
