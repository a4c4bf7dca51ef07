#pragma once

// Aalen additive model for the artificial-censoring process and the inverse
// probability of censoring weights derived from it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imt/core.hpp"
#include "imt/errors.hpp"
#include "imt/types.hpp"

namespace imt {

inline constexpr std::string_view kIntercept = "(intercept)";

struct AalenFit {
  std::vector<std::string> names;  // intercept first
  std::vector<double> jump_times;
  std::vector<std::vector<double>> cumulative;  // B(t) after each jump
  std::size_t skipped_jumps = 0;

  /// Cumulative censoring hazard for covariate vector x (without intercept) at t.
  double cumulative_hazard(std::span<const double> x, double t) const {
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    if (it == jump_times.begin()) return 0.0;
    const auto& b = cumulative[static_cast<std::size_t>(it - jump_times.begin()) - 1];
    double h = b[0];
    for (std::size_t j = 0; j < x.size(); ++j) h += b[j + 1] * x[j];
    return h;
  }
};

/// Least-squares Aalen increments at every artificial-censoring time.
/// Rows flagged censor_event are the events of the censoring process;
/// outcome events simply end a row's time at risk.
inline AalenFit fit_aalen_censoring(const AnalysisDataset& ds, std::span<const std::string> covariates) {
  std::vector<std::size_t> idx;
  for (const auto& c : covariates) idx.push_back(ds.covariate_index(c));
  const std::size_t p = idx.size() + 1;
  const auto P = static_cast<Eigen::Index>(p);

  AalenFit fit;
  fit.names.emplace_back(kIntercept);
  fit.names.insert(fit.names.end(), covariates.begin(), covariates.end());

  std::vector<double> times;
  for (const auto& r : ds.rows) {
    if (r.censor_event) times.push_back(r.stop);
  }
  if (times.empty()) return fit;
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  const std::size_t n = ds.size();
  std::vector<double> x(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = ds.covariates(i);
    x[i * p] = 1.0;
    for (std::size_t j = 0; j < idx.size(); ++j) x[i * p + j + 1] = v[idx[j]];
  }
  std::vector<std::size_t> by_entry(n), by_stop(n);
  std::iota(by_entry.begin(), by_entry.end(), 0);
  std::iota(by_stop.begin(), by_stop.end(), 0);
  std::sort(by_entry.begin(), by_entry.end(),
            [&](auto a, auto b) { return entry_time(ds.rows[a]) < entry_time(ds.rows[b]); });
  std::sort(by_stop.begin(), by_stop.end(), [&](auto a, auto b) { return ds.rows[a].stop < ds.rows[b].stop; });

  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(P, P);
  auto update = [&](std::size_t i, double sign) {
    Eigen::Map<const Eigen::VectorXd> xi(&x[i * p], P);
    xtx.noalias() += sign * xi * xi.transpose();
  };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(P);
  std::size_t ie = 0, is = 0;
  for (double t : times) {
    while (ie < n && entry_time(ds.rows[by_entry[ie]]) < t) update(by_entry[ie++], 1.0);
    while (is < n && ds.rows[by_stop[is]].stop < t) update(by_stop[is++], -1.0);
    Eigen::VectorXd xtdn = Eigen::VectorXd::Zero(P);
    for (std::size_t j = is; j < n && ds.rows[by_stop[j]].stop == t; ++j) {
      const auto i = by_stop[j];
      if (ds.rows[i].censor_event) xtdn += Eigen::Map<const Eigen::VectorXd>(&x[i * p], P);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
    lu.setThreshold(1e-10);
    if (lu.rank() < P) {
      ++fit.skipped_jumps;
      continue;
    }
    b += lu.solve(xtdn);
    fit.jump_times.push_back(t);
    fit.cumulative.emplace_back(b.data(), b.data() + p);
  }
  return fit;
}

enum class WeightConvention { exponential, product_limit };

struct WeightOptions {
  double cap = 20.0;
  double survival_floor = 1e-6;
  std::optional<WeightConvention> convention;  // unset: the method's default
};

inline std::string to_string(WeightConvention c) {
  return c == WeightConvention::exponential ? "exponential" : "product-limit";
}

/// Piecewise-constant weight: values[j] holds on [times[j], times[j+1]),
/// and 1 before times[0].
struct WeightPath {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// One weight path per lineage.
struct WeightSeries {
  std::map<std::uint32_t, WeightPath> paths;
  double cap = 20.0;
  std::size_t clamped = 0;  // survival floor hits
  std::size_t capped = 0;   // weights truncated at cap
};

/// Weights 1 / S_c(t | x) per lineage, where x is read from the lineage's
/// first row in ds.
inline WeightSeries ipc_weights(const AalenFit& aalen, const AnalysisDataset& ds, const WeightOptions& opt = {}) {
  if (!(opt.cap > 0)) throw InputError("weight cap must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t j = 1; j < aalen.names.size(); ++j) idx.push_back(ds.covariate_index(aalen.names[j]));
  WeightSeries out;
  out.cap = opt.cap;
  const double max_hazard = -std::log(opt.survival_floor);
  std::vector<double> x(idx.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto lineage = ds.rows[i].lineage;
    if (out.paths.count(lineage)) continue;
    auto v = ds.covariates(i);
    for (std::size_t j = 0; j < idx.size(); ++j) x[j] = v[idx[j]];
    WeightPath path;
    double prev_b = 0.0, surv = 1.0;
    for (std::size_t k = 0; k < aalen.jump_times.size(); ++k) {
      const auto& b = aalen.cumulative[k];
      double h = b[0];
      for (std::size_t j = 0; j < x.size(); ++j) h += b[j + 1] * x[j];
      double s;
      if (opt.convention.value_or(WeightConvention::exponential) == WeightConvention::exponential) {
        if (h > max_hazard) {
          h = max_hazard;
          ++out.clamped;
        }
        s = std::exp(-h);
      } else {
        surv *= 1.0 - (h - prev_b);
        if (surv < opt.survival_floor) {
          surv = opt.survival_floor;
          ++out.clamped;
        }
        s = surv;
      }
      prev_b = h;
      double w = 1.0 / s;
      if (w > opt.cap) {
        w = opt.cap;
        ++out.capped;
      }
      path.times.push_back(aalen.jump_times[k]);
      path.values.push_back(w);
    }
    out.paths.emplace(lineage, std::move(path));
  }
  return out;
}

/// Splits rows at multiples of `step` (and at `freeze` if positive) and sets
/// each piece's weight to the lineage path value at the piece start. The
/// weight is held constant after `freeze`.
inline AnalysisDataset apply_weights(const AnalysisDataset& ds, const WeightSeries& ws, double step,
                                     double freeze = std::numeric_limits<double>::infinity()) {
  if (!(step > 0)) throw InputError("weight step must be positive");
  AnalysisDataset out;
  out.covariate_names = ds.covariate_names;
  out.cluster_ids = ds.cluster_ids;
  out.meta = ds.meta;
  out.warnings = ds.warnings;
  out.rows.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.rows[i];
    auto x = ds.covariates(i);
    auto it = ws.paths.find(r.lineage);
    if (it == ws.paths.end()) {
      out.add_row(r, x);
      continue;
    }
    const WeightPath& path = it->second;
    const double last_change = path.times.empty() ? 0.0 : path.times.back();
    const double stop_split = std::min({r.stop, freeze, last_change});
    double a = r.start;
    if (r.stop == r.start) {
      IntervalRow piece = r;
      piece.weight = r.weight * path.at(std::min(a, freeze));
      out.add_row(piece, x);
      continue;
    }
    while (a < r.stop) {
      double b = r.stop;
      if (a < stop_split) b = std::min(r.stop, (std::floor(a / step) + 1.0) * step);
      if (freeze > a && freeze < b) b = freeze;
      IntervalRow piece = r;
      piece.start = a;
      piece.stop = b;
      piece.event = b == r.stop && r.event;
      piece.censor_event = b == r.stop && r.censor_event;
      piece.weight = r.weight * path.at(std::min(a, freeze));
      out.add_row(piece, x);
      a = b;
    }
  }
  return out;
}

}  // namespace imt
