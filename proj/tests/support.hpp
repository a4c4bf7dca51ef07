#pragma once

// Shared fixtures and brute-force reference computations for the test suite.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "imt/imt.hpp"

namespace imt::testing {

struct SubjectRow {
  double followup_end;
  bool event;
  std::optional<double> treat_init;
  std::vector<double> covariates = {};
};

inline Cohort make_cohort(const std::vector<SubjectRow>& rows, std::vector<std::string> names = {}) {
  Cohort c;
  c.covariate_names = std::move(names);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    s.followup_end = rows[i].followup_end;
    s.event = rows[i].event;
    s.treat_init = rows[i].treat_init;
    s.covariates = rows[i].covariates;
    c.subjects.push_back(s);
  }
  return c;
}

/// Eight-subject illustration on a monthly clock: three initiators (1, 2, 4)
/// and five never-treated.
inline Cohort exemplar() {
  return make_cohort({
      {14.0, false, 4.0},
      {16.0, false, 8.0},
      {3.0, true, std::nullopt},
      {5.8, true, 5.5},
      {12.0, true, std::nullopt},
      {18.0, false, std::nullopt},
      {9.0, true, std::nullopt},
      {5.9, true, std::nullopt},
  });
}

struct Row {
  double start, stop;
  bool event;
  std::vector<double> x;
  double weight = 1.0;
  int stratum = 0;
  std::uint32_t cluster = 0;
};

inline AnalysisDataset make_dataset(const std::vector<Row>& rows, std::vector<std::string> names) {
  AnalysisDataset ds;
  ds.covariate_names = std::move(names);
  std::uint32_t next = 0;
  for (const auto& r : rows) {
    IntervalRow ir;
    ir.start = r.start;
    ir.stop = r.stop;
    ir.event = r.event;
    ir.weight = r.weight;
    ir.stratum = r.stratum;
    ir.cluster = r.cluster;
    ir.lineage = next++;
    ds.add_row(ir, r.x);
  }
  std::uint32_t max_cluster = 0;
  for (const auto& r : ds.rows) max_cluster = std::max(max_cluster, r.cluster);
  for (std::uint32_t c = 0; c <= max_cluster; ++c) ds.intern_cluster(std::to_string(c));
  return ds;
}

/// Textbook log partial likelihood by direct summation over event times,
/// with the risk set {j : start_j < t <= stop_j} (start 0 counts as at risk).
inline double naive_loglik(const AnalysisDataset& ds, const std::vector<double>& beta, bool efron) {
  auto lp = [&](std::size_t i) {
    double e = 0.0;
    auto x = ds.covariates(i);
    for (std::size_t j = 0; j < beta.size(); ++j) e += beta[j] * x[j];
    return e;
  };
  auto at_risk = [&](std::size_t j, double t, int stratum) {
    const auto& r = ds.rows[j];
    return r.stratum == stratum && (r.start < t || r.start <= 0.0) && t <= r.stop;
  };
  std::vector<std::pair<int, double>> done;
  double ll = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.rows[i].event) continue;
    const double t = ds.rows[i].stop;
    const int st = ds.rows[i].stratum;
    bool seen = false;
    for (const auto& d : done) seen |= d.first == st && d.second == t;
    if (seen) continue;
    done.emplace_back(st, t);
    std::vector<std::size_t> tied;
    double risk = 0.0;
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (!at_risk(j, t, st)) continue;
      risk += ds.rows[j].weight * std::exp(lp(j));
      if (ds.rows[j].event && ds.rows[j].stop == t) tied.push_back(j);
    }
    double tied_risk = 0.0, wsum = 0.0;
    for (auto j : tied) {
      tied_risk += ds.rows[j].weight * std::exp(lp(j));
      wsum += ds.rows[j].weight;
      ll += ds.rows[j].weight * lp(j);
    }
    const double d = static_cast<double>(tied.size());
    for (std::size_t k = 0; k < tied.size(); ++k) {
      const double denom = efron ? risk - static_cast<double>(k) / d * tied_risk : risk;
      ll -= wsum / d * std::log(denom);
    }
  }
  return ll;
}

/// Product-limit estimate at t from the raw definition.
inline double naive_km(const std::vector<double>& times, const std::vector<bool>& events, double t) {
  std::vector<double> distinct;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] && times[i] <= t) distinct.push_back(times[i]);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double s = 1.0;
  for (double u : distinct) {
    double n = 0, d = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      n += times[i] >= u;
      d += events[i] && times[i] == u;
    }
    s *= 1.0 - d / n;
  }
  return s;
}

}  // namespace imt::testing
