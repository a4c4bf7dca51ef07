#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "imt/errors.hpp"
#include "imt/types.hpp"

namespace imt {

struct Violation {
  std::string subject_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate(const Cohort& cohort) {
  ValidationReport report;
  std::set<std::string> seen;
  for (const auto& s : cohort.subjects) {
    auto flag = [&](std::string msg) { report.violations.push_back({s.id, std::move(msg)}); };
    if (!seen.insert(s.id).second) flag("duplicate id");
    if (!std::isfinite(s.followup_end)) {
      flag("non-finite follow-up");
    } else if (s.followup_end < 0) {
      flag("negative time");
    } else if (s.followup_end == 0) {
      flag("non-positive follow-up");
    }
    if (s.treat_init) {
      if (!std::isfinite(*s.treat_init)) flag("non-finite treatment time");
      else if (*s.treat_init < 0) flag("negative time");
    }
    if (s.covariates.size() != cohort.covariate_names.size()) flag("covariate count mismatch");
    for (double v : s.covariates) {
      if (!std::isfinite(v)) {
        flag("non-finite covariate");
        break;
      }
    }
  }
  return report;
}

inline void require_valid(const Cohort& cohort) {
  auto report = validate(cohort);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw InputError("invalid subject '" + v.subject_id + "': " + v.message);
  }
}

namespace detail {

inline AnalysisDataset make_dataset(const Cohort& cohort, bool with_baseline = true) {
  AnalysisDataset ds;
  ds.covariate_names.emplace_back(kTreatment);
  if (with_baseline) {
    ds.covariate_names.insert(ds.covariate_names.end(), cohort.covariate_names.begin(), cohort.covariate_names.end());
  }
  ds.rows.reserve(cohort.size());
  ds.values.reserve(cohort.size() * ds.covariate_names.size());
  return ds;
}

/// Row covariates: treatment indicator followed by the baseline vector.
inline std::vector<double> row_values(const Subject& s, double treatment, bool with_baseline = true) {
  std::vector<double> x;
  x.reserve(1 + s.covariates.size());
  x.push_back(treatment);
  if (with_baseline) x.insert(x.end(), s.covariates.begin(), s.covariates.end());
  return x;
}

}  // namespace detail

/// Counting-process expansion.
///
/// With split_at_treatment the treatment indicator is time-varying: rows
/// (0, T_A] with A = 0 and (T_A, end] with A = 1. Zero-length pieces are
/// dropped, so initiation at the end of follow-up yields a single A = 0 row
/// and initiation at 0 a single A = 1 row. Without splitting each subject is
/// one row carrying the ever-treated indicator.
inline AnalysisDataset to_counting_process(const Cohort& cohort, bool split_at_treatment) {
  require_valid(cohort);
  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = split_at_treatment ? "time_varying" : "ever_treated";
  for (const auto& s : cohort.subjects) {
    IntervalRow row;
    row.cluster = ds.intern_cluster(s.id);
    row.lineage = row.cluster;
    if (!split_at_treatment) {
      row.start = 0.0;
      row.stop = s.followup_end;
      row.event = s.event;
      ds.add_row(row, detail::row_values(s, s.ever_treated() ? 1.0 : 0.0));
      continue;
    }
    const double ta = s.treat_init.value_or(std::numeric_limits<double>::infinity());
    if (ta > 0.0 && ta < s.followup_end) {
      row.start = 0.0;
      row.stop = ta;
      row.event = false;
      ds.add_row(row, detail::row_values(s, 0.0));
      row.start = ta;
      row.stop = s.followup_end;
      row.event = s.event;
      ds.add_row(row, detail::row_values(s, 1.0));
    } else {
      row.start = 0.0;
      row.stop = s.followup_end;
      row.event = s.event;
      ds.add_row(row, detail::row_values(s, ta <= 0.0 ? 1.0 : 0.0));
    }
  }
  return ds;
}

/// Risk-set entry time: rows starting at the origin are at risk from it inclusive.
inline double entry_time(const IntervalRow& r) {
  return r.start <= 0.0 ? -std::numeric_limits<double>::infinity() : r.start;
}

/// Weighted product-limit estimate on (possibly left-truncated) rows.
inline SurvivalCurve product_limit(std::span<const IntervalRow> rows) {
  if (rows.empty()) throw InputError("empty risk set");
  std::vector<double> event_times;
  for (const auto& r : rows) {
    if (r.event) event_times.push_back(r.stop);
  }
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  // Sweep in increasing time: rows enter once entry < t and leave once stop < t.
  std::vector<std::size_t> by_entry(rows.size()), by_stop(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) by_entry[i] = by_stop[i] = i;
  std::sort(by_entry.begin(), by_entry.end(), [&](auto a, auto b) { return entry_time(rows[a]) < entry_time(rows[b]); });
  std::sort(by_stop.begin(), by_stop.end(), [&](auto a, auto b) { return rows[a].stop < rows[b].stop; });

  SurvivalCurve c;
  double at_risk0 = 0.0;
  for (const auto& r : rows) {
    if (entry_time(r) < 0.0) at_risk0 += r.weight;
  }
  c.times.push_back(0.0);
  c.survival.push_back(1.0);
  c.at_risk.push_back(at_risk0);
  c.events.push_back(0.0);

  double risk = 0.0;
  double surv = 1.0;
  std::size_t ie = 0, is = 0;
  for (double t : event_times) {
    while (ie < by_entry.size() && entry_time(rows[by_entry[ie]]) < t) risk += rows[by_entry[ie++]].weight;
    while (is < by_stop.size() && rows[by_stop[is]].stop < t) risk -= rows[by_stop[is++]].weight;
    double d = 0.0;
    for (std::size_t j = is; j < by_stop.size() && rows[by_stop[j]].stop == t; ++j) {
      if (rows[by_stop[j]].event) d += rows[by_stop[j]].weight;
    }
    if (risk <= 0.0) throw InputError("empty risk set");
    surv *= 1.0 - d / risk;
    if (t == 0.0) {
      c.survival[0] = surv;
      c.events[0] = d;
      continue;
    }
    c.times.push_back(t);
    c.survival.push_back(surv);
    c.at_risk.push_back(risk);
    c.events.push_back(d);
  }
  return c;
}

/// Product-limit curve per level of a covariate that is constant within
/// each cluster. Levels are keyed by value.
inline std::map<double, SurvivalCurve> km_estimate(const AnalysisDataset& ds, std::string_view group) {
  const std::size_t g = ds.covariate_index(group);
  if (ds.rows.empty()) throw InputError("empty risk set");
  std::map<std::uint32_t, double> level_of_cluster;
  std::map<double, std::vector<IntervalRow>> by_level;
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    const double v = ds.covariates(i)[g];
    auto [it, inserted] = level_of_cluster.try_emplace(ds.rows[i].cluster, v);
    if (!inserted && it->second != v) {
      throw InputError("grouping covariate '" + std::string(group) + "' varies within a subject");
    }
    by_level[v].push_back(ds.rows[i]);
  }
  std::map<double, SurvivalCurve> out;
  for (const auto& [level, rows] : by_level) out.emplace(level, product_limit(rows));
  return out;
}

/// Curve for one named level; an absent level is an empty risk set.
inline SurvivalCurve km_estimate(const AnalysisDataset& ds, std::string_view group, double level) {
  auto all = km_estimate(ds, group);
  auto it = all.find(level);
  if (it == all.end()) throw InputError("empty risk set");
  return it->second;
}

}  // namespace imt
