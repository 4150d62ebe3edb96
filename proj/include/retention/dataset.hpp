#pragma once

#include <cassert>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace retention {

enum class Event : int { Censor = -1, Death = 0, Return = 1 };

Event event_from_code(int code);
inline int event_code(Event e) { return static_cast<int>(e); }

// Covariates available when the next visit is scheduled. Unmonitored
// entries hold NaN and must never be read.
struct Observation {
  std::vector<double> values;
  std::vector<bool> monitored;
  std::optional<double> prev_waiting;
  std::optional<double> prev_schedule;

  double covariate(std::size_t p) const {
    assert(p < values.size() && monitored[p] && "read of an unmonitored covariate");
    return values[p];
  }
  std::size_t size() const { return values.size(); }
  // '1' for monitored, '0' for not, in covariate order.
  std::string pattern() const;
};

// One at-risk interval following visit j of a subject.
struct VisitRecord {
  std::string subject_id;
  int visit_index = 1;
  double visit_time = 0.0;
  double scheduled_return = 0.0;
  double waiting_time = 0.0;
  Event event = Event::Censor;
  std::string site;
  Observation obs;
};

struct Cohort {
  std::vector<VisitRecord> records;
  std::vector<std::string> covariate_names;
  std::vector<double> schedule_options;

  std::size_t covariate_count() const { return covariate_names.size(); }
};

// Column names of the visit CSV. An empty covariate list means every column
// that is neither fixed nor a monitoring column is a covariate; covariate
// `name` is monitored by column `monitor_prefix + name`.
struct CohortSchema {
  std::string subject_id = "subject_id";
  std::string visit_index = "visit_index";
  std::string visit_time = "visit_time_weeks";
  std::string scheduled_return = "scheduled_return_weeks";
  std::string waiting_time = "waiting_time_weeks";
  std::string event_type = "event_type";
  std::string site = "site";
  std::string monitor_prefix = "obs_";
  std::vector<std::string> covariates;
  std::vector<double> schedule_options;
};

Cohort parse_cohort(const std::filesystem::path& path, const CohortSchema& schema = {});
Cohort parse_cohort(std::istream& in, const CohortSchema& schema = {});
void write_cohort(std::ostream& out, const Cohort& cohort);
void write_cohort(const std::filesystem::path& path, const Cohort& cohort);

std::vector<VisitRecord> risk_set(const Cohort& cohort, int visit);

// Shortest decimal form, used wherever a schedule appears in a key.
std::string format_number(double value);

// The (schedule, monitoring pattern[, site]) cell a record falls in.
struct StratumCell {
  double schedule = 0.0;
  std::string pattern;
  std::string site;  // empty when not stratifying by site

  auto operator<=>(const StratumCell&) const = default;
};

struct StratumKey {
  int visit = 1;
  int cause = 1;  // 1 = return, 0 = death
  double schedule = 0.0;
  std::string pattern;
  std::string site;

  StratumCell cell() const { return {schedule, pattern, site}; }
  // "j:k:s:pattern:site"
  std::string to_string() const;
  static StratumKey parse(const std::string& text);

  auto operator<=>(const StratumKey&) const = default;
};

StratumKey make_key(int visit, int cause, const StratumCell& cell);
StratumCell cell_of(const VisitRecord& record, bool stratify_site);

// Both cause keys of a cell map to the same records.
using StratumMap = std::map<StratumKey, std::vector<const VisitRecord*>>;

StratumMap derive_strata(const Cohort& cohort, int visit, bool stratify_site);

inline constexpr int kLowInformationEvents = 25;

std::size_t count_events(const std::vector<const VisitRecord*>& records, Event event);
bool low_information(const std::vector<const VisitRecord*>& records,
                     int min_return_events = kLowInformationEvents);

enum class Retention { NotRetained = 0, Retained = 1, Missing = 2 };

std::string_view retention_name(Retention r);

// Delta-retention of one interval: a return no later than delta weeks past
// the schedule. Death is never retained; censoring is missing until the
// retention window has closed.
Retention retention_label(double waiting, Event event, double schedule, double delta);

}  // namespace retention
