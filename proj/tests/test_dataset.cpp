#include "retention/dataset.hpp"
#include "retention/error.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace retention;

namespace {

const char* kHeader =
    "subject_id,visit_index,visit_time_weeks,scheduled_return_weeks,waiting_time_weeks,event_type,site,vl,cd4,obs_vl,obs_cd4\n";

Cohort parse(const std::string& body, const CohortSchema& schema = {}) {
  std::istringstream in(std::string(kHeader) + body);
  return parse_cohort(in, schema);
}

ErrorCode parse_error(const std::string& body) {
  try {
    parse(body);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a parse error");
  return ErrorCode::InvalidArgument;
}

// Eight records: patterns {11, 10} x schedules {2, 4}, two per cell.
Cohort fixture() {
  return parse(
      "a,1,0,2,3,1,A,1.5,200,1,1\n"
      "b,1,0,2,1,0,A,1.2,,1,0\n"
      "c,1,0,4,5,-1,B,0.3,150,1,1\n"
      "d,1,0,4,2,1,B,0.9,,1,0\n"
      "e,1,0,2,2.5,1,A,2.0,300,1,1\n"
      "f,1,0,2,4,1,B,1.1,,1,0\n"
      "g,1,0,4,6,1,A,0.4,120,1,1\n"
      "h,1,0,4,4.5,-1,A,0.7,,1,0\n");
}

}  // namespace

TEST_CASE("event codes map onto the three event types") {
  CHECK(event_from_code(1) == Event::Return);
  CHECK(event_from_code(0) == Event::Death);
  CHECK(event_from_code(-1) == Event::Censor);
  CHECK_THROWS_AS(event_from_code(2), Error);
  CHECK(event_code(Event::Censor) == -1);
}

TEST_CASE("minimal valid trajectory: a return then a death") {
  const auto c = parse(
      "s1,1,0,2,3,1,A,1,2,1,1\n"
      "s1,2,3,4,2,0,A,1,2,1,1\n");
  REQUIRE(c.records.size() == 2);
  CHECK(c.covariate_names == std::vector<std::string>{"vl", "cd4"});
  CHECK(c.schedule_options == std::vector<double>{2, 4});
  const auto& second = c.records[1];
  CHECK(second.visit_index == 2);
  CHECK(second.event == Event::Death);
  REQUIRE(second.obs.prev_waiting.has_value());
  CHECK(*second.obs.prev_waiting == 3.0);
  CHECK(*second.obs.prev_schedule == 2.0);
  CHECK_FALSE(c.records[0].obs.prev_waiting.has_value());
}

TEST_CASE("unmonitored covariates are stored as missing") {
  const auto c = parse("s1,1,0,2,3,1,A,1.5,,1,0\n");
  const auto& obs = c.records[0].obs;
  CHECK(obs.pattern() == "10");
  CHECK(obs.covariate(0) == 1.5);
  CHECK(std::isnan(obs.values[1]));
}

TEST_CASE("invalid rows are rejected with their line numbers") {
  CHECK(parse_error("s1,1,0,2,0,1,A,1,2,1,1\n") == ErrorCode::NonPositiveWaitingTime);
  CHECK(parse_error("s1,1,0,2,-1,1,A,1,2,1,1\n") == ErrorCode::NonPositiveWaitingTime);
  CHECK(parse_error("s1,1,0,2,3,2,A,1,2,1,1\n") == ErrorCode::BadEventCode);
  CHECK(parse_error("s1,2,3,2,3,1,A,1,2,1,1\n") == ErrorCode::OrphanVisit);
  // A later visit after a death or censoring is an orphan too.
  CHECK(parse_error("s1,1,0,2,3,0,A,1,2,1,1\ns1,2,3,2,3,1,A,1,2,1,1\n") == ErrorCode::OrphanVisit);
  CHECK(parse_error("s1,1,0,2,3,1,A,1,2,1,1\ns1,2,4,2,3,1,A,1,2,1,1\n") == ErrorCode::InvalidRecord);
  CHECK(parse_error("s1,1,0,2,3,1,A,1,2,1,2\n") == ErrorCode::InvalidRecord);
  CHECK(parse_error("s1,1,0,2,3,1,A,,2,1,1\n") == ErrorCode::InvalidRecord);
  CHECK(parse_error("s1,1,0,2,3,1,A,1,2,1,1\ns1,1,0,2,3,1,A,1,2,1,1\n") == ErrorCode::InvalidRecord);
  try {
    parse("s1,1,0,2,3,1,A,1,2,1,1\ns2,1,0,2,0,1,A,1,2,1,1\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("missing columns are reported") {
  std::istringstream in("subject_id,visit_index,visit_time_weeks,scheduled_return_weeks,event_type,site\n");
  try {
    parse_cohort(in);
    FAIL("expected MissingColumn");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingColumn);
    CHECK(std::string(e.what()).find("waiting_time_weeks") != std::string::npos);
  }
  std::istringstream no_monitor(
      "subject_id,visit_index,visit_time_weeks,scheduled_return_weeks,waiting_time_weeks,event_type,site,vl\n");
  CHECK_THROWS_AS(parse_cohort(no_monitor), Error);
}

TEST_CASE("schedules outside the allowed options are rejected") {
  CohortSchema schema;
  schema.schedule_options = {2, 4, 8};
  CHECK_NOTHROW(parse("s1,1,0,4,3,1,A,1,2,1,1\n", schema));
  CHECK_THROWS_AS(parse("s1,1,0,3,3,1,A,1,2,1,1\n", schema), Error);
}

TEST_CASE("write then parse round-trips a cohort exactly") {
  const auto c = fixture();
  std::ostringstream out;
  write_cohort(out, c);
  std::istringstream in(out.str());
  const auto back = parse_cohort(in);
  REQUIRE(back.records.size() == c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(back.records[i].waiting_time == c.records[i].waiting_time);
    CHECK(back.records[i].event == c.records[i].event);
    CHECK(back.records[i].obs.pattern() == c.records[i].obs.pattern());
    CHECK(back.records[i].site == c.records[i].site);
  }
}

TEST_CASE("risk sets filter by visit index") {
  const auto c = parse(
      "a,1,0,2,3,1,A,1,2,1,1\n"
      "a,2,3,2,3,1,A,1,2,1,1\n"
      "b,1,0,2,3,0,A,1,2,1,1\n"
      "c,1,0,2,3,-1,A,1,2,1,1\n");
  CHECK(risk_set(c, 1).size() == 3);
  CHECK(risk_set(c, 2).size() == 1);
  CHECK(risk_set(c, 99).empty());
}

TEST_CASE("strata partition the risk set by schedule and pattern") {
  const auto c = fixture();
  const auto strata = derive_strata(c, 1, false);
  // 2 patterns x 2 schedules, one model per cause.
  CHECK(strata.size() == 8);
  std::set<StratumCell> cells;
  std::size_t total = 0;
  for (const auto& [key, records] : strata) {
    cells.insert(key.cell());
    if (key.cause == 1) total += records.size();
    const auto other = strata.at(StratumKey{key.visit, 1 - key.cause, key.schedule, key.pattern, key.site});
    CHECK(other == records);
    for (const auto* r : records) {
      CHECK(r->scheduled_return == key.schedule);
      CHECK(r->obs.pattern() == key.pattern);
    }
  }
  CHECK(cells.size() == 4);
  CHECK(total == c.records.size());

  const auto by_site = derive_strata(c, 1, true);
  std::set<StratumCell> site_cells;
  for (const auto& [key, records] : by_site) site_cells.insert(key.cell());
  CHECK(site_cells.size() == 7);
}

TEST_CASE("a single pattern and schedule give one stratum") {
  const auto c = parse("a,1,0,2,3,1,A,1,2,1,1\nb,1,0,2,4,0,A,1,2,1,1\n");
  const auto strata = derive_strata(c, 1, false);
  CHECK(strata.size() == 2);
}

TEST_CASE("stratum keys print and parse canonically") {
  const StratumKey key{1, 1, 2.5, "1101", "Busia"};
  CHECK(key.to_string() == "1:1:2.5:1101:Busia");
  CHECK(StratumKey::parse(key.to_string()) == key);
  CHECK(StratumKey::parse("2:0:8:11:") == StratumKey{2, 0, 8.0, "11", ""});
  CHECK_THROWS_AS(StratumKey::parse("1:1:2"), Error);
  CHECK(format_number(90.0 / 7.0) == "12.857142857142858");
  CHECK(format_number(4.0) == "4");
}

TEST_CASE("low-information strata are flagged below 25 return events") {
  const auto c = fixture();
  std::vector<const VisitRecord*> all;
  for (const auto& r : c.records) all.push_back(&r);
  CHECK(count_events(all, Event::Return) == 5);
  CHECK(low_information(all));
  CHECK_FALSE(low_information(all, 5));
}

TEST_CASE("retention labels follow the return, death and censoring rules") {
  CHECK(retention_label(3, Event::Return, 2, 2) == Retention::Retained);
  CHECK(retention_label(10, Event::Death, 2, 13) == Retention::NotRetained);
  CHECK(retention_label(3, Event::Censor, 2, 2) == Retention::Missing);
  CHECK(retention_label(5, Event::Censor, 2, 2) == Retention::NotRetained);
  CHECK(retention_label(4, Event::Return, 2, 2) == Retention::Retained);
  CHECK(retention_label(4, Event::Censor, 2, 2) == Retention::Missing);
  CHECK(retention_label(4.5, Event::Return, 2, 2) == Retention::NotRetained);
  CHECK(retention_label(1, Event::Return, 2, 2) == Retention::Retained);
  CHECK_THROWS_AS(retention_label(3, Event::Return, 2, 0), Error);
  try {
    retention_label(3, Event::Return, 2, -1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDelta);
  }
}

TEST_CASE("a censored label switches from not retained to missing once as delta grows") {
  const double w = 7.3;
  const double s = 4.0;
  int switches = 0;
  Retention prev = retention_label(w, Event::Censor, s, 0.01);
  CHECK(prev == Retention::NotRetained);
  for (double d = 0.02; d < 10; d += 0.01) {
    const auto cur = retention_label(w, Event::Censor, s, d);
    if (cur != prev) {
      ++switches;
      CHECK(cur == Retention::Missing);
      CHECK(d >= w - s - 0.011);
      CHECK(d <= w - s + 0.011);
    }
    prev = cur;
    // Once retained, retained for every larger window.
    if (retention_label(w, Event::Return, s, d) == Retention::Retained) {
      CHECK(retention_label(w, Event::Return, s, d + 1) == Retention::Retained);
    }
  }
  CHECK(switches == 1);
}
