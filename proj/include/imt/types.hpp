#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imt/errors.hpp"

namespace imt {

/// Name of the treatment indicator column in every analysis dataset.
inline constexpr std::string_view kTreatment = "treatment";

/// Interval boundaries t_1 = 0 < t_2 < ... < t_{K+1}.
class TimeGrid {
 public:
  TimeGrid() : TimeGrid(uniform(1)) {}

  explicit TimeGrid(std::vector<double> boundaries) : bounds_(std::move(boundaries)) {
    if (bounds_.size() < 2) throw InputError("time grid needs at least one interval");
    if (bounds_.front() != 0.0) throw InputError("time grid must start at 0");
    for (std::size_t k = 1; k < bounds_.size(); ++k) {
      if (!(bounds_[k] > bounds_[k - 1])) throw InputError("time grid must be strictly increasing");
    }
  }

  /// K unit-width intervals (monthly grid: t_k = k - 1).
  static TimeGrid uniform(int intervals, double width = 1.0) {
    if (intervals < 1 || !(width > 0)) throw InputError("time grid needs K >= 1 and width > 0");
    std::vector<double> b(static_cast<std::size_t>(intervals) + 1);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = static_cast<double>(k) * width;
    return TimeGrid(std::move(b));
  }

  int interval_count() const { return static_cast<int>(bounds_.size()) - 1; }

  /// t_k for k = 1..K+1.
  double interval_start(int k) const {
    if (k < 1 || k > interval_count() + 1) throw InputError("time grid index out of range");
    return bounds_[static_cast<std::size_t>(k) - 1];
  }

  double end() const { return bounds_.back(); }
  std::span<const double> boundaries() const { return bounds_; }

  /// Smallest boundary >= t; values past the grid end are returned unchanged.
  double ceil(double t) const {
    auto it = std::lower_bound(bounds_.begin(), bounds_.end(), t);
    return it == bounds_.end() ? t : *it;
  }

 private:
  std::vector<double> bounds_;
};

/// One study participant.
struct Subject {
  std::string id;
  double followup_end = 0.0;
  bool event = false;
  std::optional<double> treat_init;  // absent: never treated
  std::vector<double> covariates;    // baseline, aligned with Cohort::covariate_names

  /// Time-fixed classification: initiation at or before the end of follow-up.
  bool ever_treated() const { return treat_init && *treat_init <= followup_end; }

  /// Treated person-time exists (initiation strictly inside follow-up).
  bool treated_during_followup() const { return treat_init && *treat_init < followup_end; }
};

struct Cohort {
  std::vector<std::string> covariate_names;
  std::vector<Subject> subjects;

  std::size_t size() const { return subjects.size(); }

  std::size_t covariate_index(std::string_view name) const {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) throw InputError("unknown covariate '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - covariate_names.begin());
  }
};

/// One counting-process segment (start, stop]. Covariate values live in the
/// owning AnalysisDataset so rows stay trivially copyable.
struct IntervalRow {
  double start = 0.0;
  double stop = 0.0;
  bool event = false;
  bool censor_event = false;  // artificial censoring (protocol deviation) at stop
  double weight = 1.0;
  int stratum = 0;
  std::uint32_t cluster = 0;  // index into AnalysisDataset::cluster_ids
  std::uint32_t lineage = 0;  // clone/trial lineage, used to attach weight paths
};

using Metadata = std::map<std::string, std::string>;

/// Rows plus a row-major covariate matrix.
///
/// A row starting at the analysis origin (start == 0) is at risk from the
/// origin inclusive, so a zero-length row (0, 0] records an event or
/// censoring at time zero. Every other row must satisfy stop > start.
struct AnalysisDataset {
  std::vector<std::string> covariate_names;
  std::vector<IntervalRow> rows;
  std::vector<double> values;
  std::vector<std::string> cluster_ids;
  Metadata meta;
  std::vector<std::string> warnings;

  std::size_t size() const { return rows.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }

  std::span<const double> covariates(std::size_t row) const {
    const std::size_t p = n_covariates();
    return {values.data() + row * p, p};
  }
  std::span<double> covariates(std::size_t row) {
    const std::size_t p = n_covariates();
    return {values.data() + row * p, p};
  }

  std::size_t covariate_index(std::string_view name) const {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) throw InputError("unknown covariate '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - covariate_names.begin());
  }

  void add_row(const IntervalRow& row, std::span<const double> x) {
    if (x.size() != n_covariates()) throw InputError("covariate vector length mismatch");
    if (row.stop < row.start || (row.stop == row.start && row.start != 0.0)) {
      throw InputError("interval row must satisfy stop > start");
    }
    rows.push_back(row);
    values.insert(values.end(), x.begin(), x.end());
  }

  /// Interns a cluster label and returns its index.
  std::uint32_t intern_cluster(const std::string& id) {
    auto [it, inserted] = cluster_lookup_.try_emplace(id, static_cast<std::uint32_t>(cluster_ids.size()));
    if (inserted) cluster_ids.push_back(id);
    return it->second;
  }

  double person_time() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.stop - r.start;
    return s;
  }

  std::size_t event_count() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const IntervalRow& r) { return r.event; }));
  }

 private:
  std::map<std::string, std::uint32_t> cluster_lookup_;
};

/// Dataset restricted to a subset of covariates (in the given order).
inline AnalysisDataset select_covariates(const AnalysisDataset& in, std::span<const std::string> names) {
  std::vector<std::size_t> idx;
  idx.reserve(names.size());
  for (const auto& n : names) idx.push_back(in.covariate_index(n));
  AnalysisDataset out = in;
  out.covariate_names.assign(names.begin(), names.end());
  out.values.resize(in.rows.size() * idx.size());
  for (std::size_t i = 0; i < in.rows.size(); ++i) {
    auto src = in.covariates(i);
    for (std::size_t j = 0; j < idx.size(); ++j) out.values[i * idx.size() + j] = src[idx[j]];
  }
  return out;
}

/// Product-limit curve; entry 0 is the origin with survival 1.
struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<double> at_risk;
  std::vector<double> events;

  /// Right-continuous step value at t.
  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

}  // namespace imt
