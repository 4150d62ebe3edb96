#include "retention/design.hpp"
#include "retention/error.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace retention;

namespace {

VisitRecord record(std::vector<double> values, std::vector<bool> monitored, int visit = 1) {
  VisitRecord r;
  r.visit_index = visit;
  r.scheduled_return = 2;
  r.waiting_time = 1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!monitored[i]) values[i] = std::numeric_limits<double>::quiet_NaN();
  }
  r.obs.values = std::move(values);
  r.obs.monitored = std::move(monitored);
  if (visit > 1) {
    r.obs.prev_waiting = 3.5;
    r.obs.prev_schedule = 4;
  }
  return r;
}

std::vector<const VisitRecord*> pointers(const std::vector<VisitRecord>& records) {
  std::vector<const VisitRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

}  // namespace

TEST_CASE("spline basis functions are nonnegative and sum to one") {
  const SplineBasis b(0.0, 10.0, {4.0});
  CHECK(b.size() == 4);
  for (double x = 0.0; x <= 10.0; x += 0.25) {
    const auto full = b.evaluate_full(x);
    CHECK(full.size() == 5);
    double total = 0.0;
    for (double v : full) {
      CHECK(v >= -1e-15);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK(b.evaluate_full(0.0)[0] == doctest::Approx(1.0));
  CHECK(b.evaluate_full(10.0)[4] == doctest::Approx(1.0));
  // Values outside the range are clamped.
  CHECK(b.evaluate(-5.0) == b.evaluate(0.0));
  CHECK(b.evaluate(50.0) == b.evaluate(10.0));
}

TEST_CASE("cubic basis on a single span matches the Bernstein polynomials") {
  const SplineBasis b(0.0, 1.0, {});
  const double x = 0.3;
  const auto full = b.evaluate_full(x);
  REQUIRE(full.size() == 4);
  CHECK(full[0] == doctest::Approx(std::pow(1 - x, 3)));
  CHECK(full[1] == doctest::Approx(3 * x * std::pow(1 - x, 2)));
  CHECK(full[2] == doctest::Approx(3 * x * x * (1 - x)));
  CHECK(full[3] == doctest::Approx(x * x * x));
}

TEST_CASE("four degrees of freedom place one interior knot at the median") {
  const auto b = SplineBasis::from_sample({5, 1, 9, 3, 7});
  CHECK(b.lower() == 1);
  CHECK(b.upper() == 9);
  REQUIRE(b.interior().size() == 1);
  CHECK(b.interior()[0] == doctest::Approx(5));
  CHECK(b.size() == 4);
  CHECK_THROWS_AS(SplineBasis::from_sample({1.0}), Error);
  CHECK_THROWS_AS(SplineBasis(2.0, 2.0, {}), Error);
}

TEST_CASE("design rows keep the monitored covariates in order") {
  const std::vector<VisitRecord> rs{record({1.0, 2.0, 3.0}, {true, false, true}),
                                    record({4.0, 5.0, 6.0}, {true, false, true})};
  const auto d = build_design(pointers(rs), {"a", "b", "c"}, {}, 1);
  CHECK(d.pattern() == "101");
  CHECK(d.names() == std::vector<std::string>{"a", "c"});
  const auto x = d.row(rs[1].obs);
  REQUIRE(x.size() == 2);
  CHECK(x[0] == 4.0);
  CHECK(x[1] == 6.0);
  const auto m = d.matrix(pointers(rs));
  CHECK(m.rows() == 2);
  CHECK(m(0, 1) == 3.0);
}

TEST_CASE("later visits add the previous waiting time and schedule") {
  const std::vector<VisitRecord> rs{record({1.0}, {true}, 2)};
  const auto d = build_design(pointers(rs), {"a"}, {}, 2);
  CHECK(d.names() == std::vector<std::string>{"a", "prev_waiting", "prev_schedule"});
  const auto x = d.row(rs[0].obs);
  CHECK(x[1] == 3.5);
  CHECK(x[2] == 4.0);
  auto missing = rs[0].obs;
  missing.prev_waiting.reset();
  CHECK_THROWS_AS(d.row(missing), Error);
}

TEST_CASE("design rows reject observations that do not fit the pattern") {
  const std::vector<VisitRecord> rs{record({1.0, 2.0}, {true, true})};
  const auto d = build_design(pointers(rs), {"a", "b"}, {}, 1);
  const auto narrow = record({1.0}, {true});
  CHECK_THROWS_AS(d.row(narrow.obs), Error);
  const auto partial = record({1.0, 2.0}, {true, false});
  CHECK_THROWS_AS(d.row(partial.obs), Error);
  CHECK_THROWS_AS(build_design({}, {"a"}, {}, 1), Error);
}

TEST_CASE("spline covariates expand into four basis columns") {
  std::vector<VisitRecord> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(record({static_cast<double>(i), 1.0}, {true, true}));
  const auto d = build_design(pointers(rs), {"age", "cd4"}, {"age"}, 1);
  CHECK(d.names() == std::vector<std::string>{"age_bs1", "age_bs2", "age_bs3", "age_bs4", "cd4"});
  const auto x = d.row(rs[7].obs);
  const auto expected = d.splines().at(0).evaluate(7.0);
  for (int b = 0; b < 4; ++b) CHECK(x[b] == doctest::Approx(expected[static_cast<std::size_t>(b)]));

  // A covariate with few distinct values stays linear.
  std::vector<VisitRecord> binary;
  for (int i = 0; i < 20; ++i) binary.push_back(record({static_cast<double>(i % 2)}, {true}));
  const auto lin = build_design(pointers(binary), {"sex"}, {"sex"}, 1);
  CHECK(lin.names() == std::vector<std::string>{"sex"});
}

TEST_CASE("design specs round-trip through JSON") {
  std::vector<VisitRecord> rs;
  for (int i = 0; i < 12; ++i) rs.push_back(record({i * 0.7, 2.0 - i, 1.0}, {true, true, false}, 2));
  const auto d = build_design(pointers(rs), {"a", "b", "c"}, {"a"}, 2);
  const auto back = DesignSpec::from_json(nlohmann::json::parse(d.to_json().dump()));
  CHECK(back.names() == d.names());
  CHECK(back.pattern() == d.pattern());
  for (const auto& r : rs) CHECK((back.row(r.obs) - d.row(r.obs)).norm() < 1e-14);
}
