#include "retention/design.hpp"

#include "retention/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace retention {

SplineBasis::SplineBasis(double lower, double upper, std::vector<double> interior, int degree)
    : lower_(lower), upper_(upper), interior_(std::move(interior)), degree_(degree) {
  if (!(upper_ > lower_)) throw Error(ErrorCode::InvalidArgument, "spline range must be nondegenerate");
  knots_.assign(static_cast<std::size_t>(degree_ + 1), lower_);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), static_cast<std::size_t>(degree_ + 1), upper_);
}

SplineBasis SplineBasis::from_sample(std::vector<double> sample, int df, int degree) {
  if (sample.size() < 2) throw Error(ErrorCode::InvalidArgument, "spline needs at least two values");
  std::sort(sample.begin(), sample.end());
  const int n_interior = df - degree;
  std::vector<double> interior;
  for (int i = 1; i <= n_interior; ++i) {
    const double q = static_cast<double>(i) / (n_interior + 1);
    const double pos = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    interior.push_back(sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]));
  }
  return SplineBasis(sample.front(), sample.back(), std::move(interior), degree);
}

std::vector<double> SplineBasis::evaluate_full(double x) const {
  const std::size_t n_basis = knots_.size() - static_cast<std::size_t>(degree_) - 1;
  x = std::clamp(x, lower_, upper_);
  // Span k with knots[k] <= x < knots[k+1]; the right end belongs to the
  // last nonempty span.
  std::size_t k = static_cast<std::size_t>(degree_);
  while (k + 1 < n_basis && knots_[k + 1] <= x) ++k;

  const auto p = static_cast<std::size_t>(degree_);
  std::vector<double> n(p + 1, 0.0), left(p + 1, 0.0), right(p + 1, 0.0);
  n[0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    left[j] = x - knots_[k + 1 - j];
    right[j] = knots_[k + j] - x;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom == 0.0 ? 0.0 : n[r] / denom;
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  std::vector<double> full(n_basis, 0.0);
  for (std::size_t r = 0; r <= p; ++r) full[k - p + r] = n[r];
  return full;
}

std::vector<double> SplineBasis::evaluate(double x) const {
  auto full = evaluate_full(x);
  return {full.begin() + 1, full.end()};
}

Eigen::VectorXd DesignSpec::row(const Observation& obs) const {
  if (obs.size() != covariate_names_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "observation has " + std::to_string(obs.size()) + " covariates, design expects " +
                                                  std::to_string(covariate_names_.size()));
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(columns_.size()));
  std::size_t last_spline = static_cast<std::size_t>(-1);
  std::vector<double> basis;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    const auto& col = columns_[c];
    double v = 0.0;
    switch (col.kind) {
      case ColumnKind::Covariate:
      case ColumnKind::Spline:
        if (!obs.monitored[col.covariate]) {
          throw Error(ErrorCode::InvalidArgument,
                      "covariate '" + covariate_names_[col.covariate] + "' is required by pattern " + pattern_);
        }
        if (col.kind == ColumnKind::Covariate) {
          v = obs.covariate(col.covariate);
        } else {
          if (last_spline != col.covariate) {
            basis = splines_.at(col.covariate).evaluate(obs.covariate(col.covariate));
            last_spline = col.covariate;
          }
          v = basis[col.basis_index];
        }
        break;
      case ColumnKind::PrevWaiting:
        if (!obs.prev_waiting) throw Error(ErrorCode::InvalidArgument, "prev_waiting is required after the first visit");
        v = *obs.prev_waiting;
        break;
      case ColumnKind::PrevSchedule:
        if (!obs.prev_schedule) throw Error(ErrorCode::InvalidArgument, "prev_schedule is required after the first visit");
        v = *obs.prev_schedule;
        break;
    }
    x[static_cast<Eigen::Index>(c)] = v;
  }
  return x;
}

Eigen::MatrixXd DesignSpec::matrix(const std::vector<const VisitRecord*>& records) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(columns_.size()));
  for (std::size_t i = 0; i < records.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = row(records[i]->obs).transpose();
  return m;
}

DesignSpec build_design(const std::vector<const VisitRecord*>& records, const std::vector<std::string>& covariate_names,
                        const std::vector<std::string>& spline_covariates, int visit) {
  if (records.empty()) throw Error(ErrorCode::EmptyStratum, "cannot build a design for an empty stratum");
  DesignSpec d;
  d.covariate_names_ = covariate_names;
  d.pattern_ = records.front()->obs.pattern();
  const std::set<std::string> spline_set(spline_covariates.begin(), spline_covariates.end());
  for (std::size_t p = 0; p < covariate_names.size(); ++p) {
    if (d.pattern_[p] != '1') continue;
    if (spline_set.count(covariate_names[p])) {
      std::vector<double> sample;
      sample.reserve(records.size());
      for (const auto* r : records) sample.push_back(r->obs.covariate(p));
      const auto distinct = std::set<double>(sample.begin(), sample.end()).size();
      // Too few distinct values to place the knots; keep the covariate linear.
      if (distinct >= 5) {
        auto basis = SplineBasis::from_sample(std::move(sample));
        for (std::size_t b = 0; b < basis.size(); ++b) {
          d.columns_.push_back({ColumnKind::Spline, p, b});
          d.names_.push_back(covariate_names[p] + "_bs" + std::to_string(b + 1));
        }
        d.splines_.emplace(p, std::move(basis));
        continue;
      }
    }
    d.columns_.push_back({ColumnKind::Covariate, p, 0});
    d.names_.push_back(covariate_names[p]);
  }
  if (visit > 1) {
    d.columns_.push_back({ColumnKind::PrevWaiting, 0, 0});
    d.names_.push_back("prev_waiting");
    d.columns_.push_back({ColumnKind::PrevSchedule, 0, 0});
    d.names_.push_back("prev_schedule");
  }
  return d;
}

nlohmann::json DesignSpec::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) {
    const char* kind = c.kind == ColumnKind::Covariate   ? "covariate"
                       : c.kind == ColumnKind::Spline    ? "spline"
                       : c.kind == ColumnKind::PrevWaiting ? "prev_waiting"
                                                           : "prev_schedule";
    cols.push_back({{"kind", kind}, {"covariate", c.covariate}, {"basis_index", c.basis_index}});
  }
  nlohmann::json splines = nlohmann::json::object();
  for (const auto& [p, b] : splines_) {
    splines[std::to_string(p)] = {{"lower", b.lower()}, {"upper", b.upper()}, {"interior", b.interior()}, {"degree", b.degree()}};
  }
  return {{"pattern", pattern_}, {"columns", cols}, {"names", names_}, {"covariate_names", covariate_names_}, {"splines", splines}};
}

DesignSpec DesignSpec::from_json(const nlohmann::json& j) {
  DesignSpec d;
  d.pattern_ = j.at("pattern").get<std::string>();
  d.names_ = j.at("names").get<std::vector<std::string>>();
  d.covariate_names_ = j.at("covariate_names").get<std::vector<std::string>>();
  for (const auto& c : j.at("columns")) {
    const auto kind = c.at("kind").get<std::string>();
    DesignColumn col;
    col.kind = kind == "covariate"      ? ColumnKind::Covariate
               : kind == "spline"       ? ColumnKind::Spline
               : kind == "prev_waiting" ? ColumnKind::PrevWaiting
                                        : ColumnKind::PrevSchedule;
    col.covariate = c.at("covariate").get<std::size_t>();
    col.basis_index = c.at("basis_index").get<std::size_t>();
    d.columns_.push_back(col);
  }
  for (const auto& [k, b] : j.at("splines").items()) {
    d.splines_.emplace(std::stoul(k), SplineBasis(b.at("lower").get<double>(), b.at("upper").get<double>(),
                                                  b.at("interior").get<std::vector<double>>(), b.at("degree").get<int>()));
  }
  return d;
}

}  // namespace retention
