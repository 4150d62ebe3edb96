#include "retention/dataset.hpp"

#include "retention/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace retention {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  for (auto& f : fields) {
    auto b = f.find_first_not_of(" \t");
    auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return fields;
}

Error row_error(ErrorCode code, std::size_t line, const std::string& what) {
  return Error(code, "line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& text, std::size_t line, const std::string& column) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw row_error(ErrorCode::InvalidRecord, line, "column '" + column + "' is not a number: '" + text + "'");
  }
  return value;
}

int parse_int(const std::string& text, std::size_t line, const std::string& column, ErrorCode code) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw row_error(code, line, "column '" + column + "' is not an integer: '" + text + "'");
  }
  return value;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Event event_from_code(int code) {
  switch (code) {
    case 1: return Event::Return;
    case 0: return Event::Death;
    case -1: return Event::Censor;
    default: throw Error(ErrorCode::BadEventCode, "event code " + std::to_string(code) + " not in {1,0,-1}");
  }
}

std::string Observation::pattern() const {
  std::string p(monitored.size(), '0');
  for (std::size_t i = 0; i < monitored.size(); ++i) {
    if (monitored[i]) p[i] = '1';
  }
  return p;
}

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

Cohort parse_cohort(const std::filesystem::path& path, const CohortSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_cohort(in, schema);
}

Cohort parse_cohort(std::istream& in, const CohortSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, "empty file: header required");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index.emplace(header[i], i);

  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::MissingColumn, "missing column '" + name + "'");
    return it->second;
  };
  const std::size_t c_subject = column(schema.subject_id);
  const std::size_t c_visit = column(schema.visit_index);
  const std::size_t c_vtime = column(schema.visit_time);
  const std::size_t c_sched = column(schema.scheduled_return);
  const std::size_t c_wait = column(schema.waiting_time);
  const std::size_t c_event = column(schema.event_type);
  const std::size_t c_site = column(schema.site);

  std::vector<std::string> covariates = schema.covariates;
  if (covariates.empty()) {
    const std::set<std::size_t> fixed{c_subject, c_visit, c_vtime, c_sched, c_wait, c_event, c_site};
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (fixed.count(i) || header[i].rfind(schema.monitor_prefix, 0) == 0) continue;
      covariates.push_back(header[i]);
    }
  }
  std::vector<std::size_t> c_values, c_monitor;
  for (const auto& name : covariates) {
    c_values.push_back(column(name));
    c_monitor.push_back(column(schema.monitor_prefix + name));
  }

  Cohort cohort;
  cohort.covariate_names = covariates;
  std::vector<std::size_t> lines;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw row_error(ErrorCode::InvalidRecord, line_no,
                      "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    }
    VisitRecord r;
    r.subject_id = f[c_subject];
    r.visit_index = parse_int(f[c_visit], line_no, schema.visit_index, ErrorCode::InvalidRecord);
    if (r.visit_index < 1) throw row_error(ErrorCode::InvalidRecord, line_no, "visit_index must be >= 1");
    r.visit_time = parse_double(f[c_vtime], line_no, schema.visit_time);
    r.scheduled_return = parse_double(f[c_sched], line_no, schema.scheduled_return);
    if (r.scheduled_return <= 0) throw row_error(ErrorCode::InvalidRecord, line_no, "scheduled return must be positive");
    r.waiting_time = parse_double(f[c_wait], line_no, schema.waiting_time);
    if (r.waiting_time <= 0) {
      throw row_error(ErrorCode::NonPositiveWaitingTime, line_no, "waiting time must be positive, got " + f[c_wait]);
    }
    try {
      r.event = event_from_code(parse_int(f[c_event], line_no, schema.event_type, ErrorCode::BadEventCode));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BadEventCode) throw row_error(ErrorCode::BadEventCode, line_no, e.what());
      throw;
    }
    r.site = f[c_site];
    const std::size_t p = covariates.size();
    r.obs.values.assign(p, std::numeric_limits<double>::quiet_NaN());
    r.obs.monitored.assign(p, false);
    for (std::size_t k = 0; k < p; ++k) {
      const std::string& m = f[c_monitor[k]];
      if (m == "1") {
        r.obs.monitored[k] = true;
        r.obs.values[k] = parse_double(f[c_values[k]], line_no, covariates[k]);
      } else if (m != "0") {
        throw row_error(ErrorCode::InvalidRecord, line_no, "monitoring indicator for '" + covariates[k] + "' must be 0 or 1");
      }
    }
    cohort.records.push_back(std::move(r));
    lines.push_back(line_no);
  }

  // Trajectory checks: visits consecutive per subject, later visits only
  // after a return, visit times chained by waiting times.
  std::unordered_map<std::string, std::map<int, std::size_t>> by_subject;
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& r = cohort.records[i];
    auto [it, inserted] = by_subject[r.subject_id].emplace(r.visit_index, i);
    if (!inserted) {
      throw row_error(ErrorCode::InvalidRecord, lines[i], "duplicate visit " + std::to_string(r.visit_index) + " for subject " + r.subject_id);
    }
  }
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    auto& r = cohort.records[i];
    const auto& visits = by_subject[r.subject_id];
    if (r.visit_index == 1) {
      if (std::abs(r.visit_time) > 1e-9) throw row_error(ErrorCode::InvalidRecord, lines[i], "first visit time must be 0");
      continue;
    }
    auto prev = visits.find(r.visit_index - 1);
    if (prev == visits.end() || cohort.records[prev->second].event != Event::Return) {
      throw row_error(ErrorCode::OrphanVisit, lines[i],
                      "visit " + std::to_string(r.visit_index) + " of subject " + r.subject_id + " has no preceding return");
    }
    const auto& pr = cohort.records[prev->second];
    const double expected = pr.visit_time + pr.waiting_time;
    if (std::abs(expected - r.visit_time) > 1e-6 * std::max(1.0, std::abs(expected))) {
      throw row_error(ErrorCode::InvalidRecord, lines[i], "visit time does not equal previous visit time plus waiting time");
    }
    r.obs.prev_waiting = pr.waiting_time;
    r.obs.prev_schedule = pr.scheduled_return;
  }

  std::set<double> seen;
  for (const auto& r : cohort.records) seen.insert(r.scheduled_return);
  if (schema.schedule_options.empty()) {
    cohort.schedule_options.assign(seen.begin(), seen.end());
  } else {
    cohort.schedule_options = schema.schedule_options;
    std::sort(cohort.schedule_options.begin(), cohort.schedule_options.end());
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
      const double s = cohort.records[i].scheduled_return;
      if (!std::binary_search(cohort.schedule_options.begin(), cohort.schedule_options.end(), s)) {
        throw row_error(ErrorCode::InvalidRecord, lines[i], "schedule " + format_number(s) + " is not an allowed option");
      }
    }
  }
  return cohort;
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  out << "subject_id,visit_index,visit_time_weeks,scheduled_return_weeks,waiting_time_weeks,event_type,site";
  for (const auto& n : cohort.covariate_names) out << ',' << csv_escape(n);
  for (const auto& n : cohort.covariate_names) out << ",obs_" << csv_escape(n);
  out << '\n';
  for (const auto& r : cohort.records) {
    out << csv_escape(r.subject_id) << ',' << r.visit_index << ',' << format_number(r.visit_time) << ','
        << format_number(r.scheduled_return) << ',' << format_number(r.waiting_time) << ',' << event_code(r.event)
        << ',' << csv_escape(r.site);
    for (std::size_t p = 0; p < r.obs.size(); ++p) {
      out << ',';
      if (r.obs.monitored[p]) out << format_number(r.obs.values[p]);
    }
    for (std::size_t p = 0; p < r.obs.size(); ++p) out << ',' << (r.obs.monitored[p] ? 1 : 0);
    out << '\n';
  }
}

void write_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_cohort(out, cohort);
}

std::vector<VisitRecord> risk_set(const Cohort& cohort, int visit) {
  std::vector<VisitRecord> out;
  for (const auto& r : cohort.records) {
    if (r.visit_index == visit) out.push_back(r);
  }
  return out;
}

std::string StratumKey::to_string() const {
  return std::to_string(visit) + ":" + std::to_string(cause) + ":" + format_number(schedule) + ":" + pattern + ":" + site;
}

StratumKey StratumKey::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (int i = 0; i < 4; ++i) {
    auto pos = text.find(':', start);
    if (pos == std::string::npos) throw Error(ErrorCode::InvalidArgument, "malformed stratum key '" + text + "'");
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  parts.push_back(text.substr(start));
  StratumKey key;
  try {
    key.visit = std::stoi(parts[0]);
    key.cause = std::stoi(parts[1]);
    key.schedule = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "malformed stratum key '" + text + "'");
  }
  key.pattern = parts[3];
  key.site = parts[4];
  return key;
}

StratumKey make_key(int visit, int cause, const StratumCell& cell) {
  return {visit, cause, cell.schedule, cell.pattern, cell.site};
}

StratumCell cell_of(const VisitRecord& record, bool stratify_site) {
  return {record.scheduled_return, record.obs.pattern(), stratify_site ? record.site : std::string{}};
}

StratumMap derive_strata(const Cohort& cohort, int visit, bool stratify_site) {
  std::map<StratumCell, std::vector<const VisitRecord*>> cells;
  for (const auto& r : cohort.records) {
    if (r.visit_index == visit) cells[cell_of(r, stratify_site)].push_back(&r);
  }
  StratumMap strata;
  for (auto& [cell, records] : cells) {
    strata.emplace(make_key(visit, 0, cell), records);
    strata.emplace(make_key(visit, 1, cell), std::move(records));
  }
  return strata;
}

std::size_t count_events(const std::vector<const VisitRecord*>& records, Event event) {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const VisitRecord* r) { return r->event == event; }));
}

bool low_information(const std::vector<const VisitRecord*>& records, int min_return_events) {
  return count_events(records, Event::Return) < static_cast<std::size_t>(min_return_events);
}

std::string_view retention_name(Retention r) {
  switch (r) {
    case Retention::Retained: return "retained";
    case Retention::NotRetained: return "not_retained";
    case Retention::Missing: return "missing";
  }
  return "?";
}

Retention retention_label(double waiting, Event event, double schedule, double delta) {
  if (!(delta > 0)) throw Error(ErrorCode::NonPositiveDelta, "delta must be positive");
  if (!(waiting > 0) || !(schedule > 0)) {
    throw Error(ErrorCode::InvalidArgument, "waiting time and schedule must be positive");
  }
  // One margin for every branch keeps the three regions disjoint even
  // under rounding.
  const double margin = waiting - schedule;
  switch (event) {
    case Event::Return: return margin <= delta ? Retention::Retained : Retention::NotRetained;
    case Event::Death: return Retention::NotRetained;
    case Event::Censor: return margin > delta ? Retention::NotRetained : Retention::Missing;
  }
  return Retention::Missing;
}

}  // namespace retention
