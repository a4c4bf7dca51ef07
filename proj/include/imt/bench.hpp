#pragma once

// Replicated simulation benchmark: bias, SD, mean model SE, coverage and RMSE
// of the treatment log hazard ratio per method and scenario.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "imt/io.hpp"
#include "imt/methods.hpp"
#include "imt/rng.hpp"
#include "imt/simgen.hpp"

namespace imt {

inline constexpr double kNormalQuantile = 1.96;

/// Closed interval: |estimate - truth| <= 1.96 se.
inline bool coverage_flag(double estimate, double se, double true_beta) {
  if (!(se > 0)) throw InputError("standard error must be positive");
  return std::abs(estimate - true_beta) <= kNormalQuantile * se;
}

struct MetricsRow {
  std::string method;
  int scenario = 0;
  double bias = 0.0;
  double sd = 0.0;
  std::optional<double> se;  // absent for methods without model-based inference
  std::optional<double> cp;
  double rmse = 0.0;
  std::size_t n_converged = 0;
  std::size_t n_failed = 0;
};

/// Metrics over replicate estimates; ses empty means no SE/coverage.
inline MetricsRow metrics(std::span<const double> estimates, std::span<const double> ses, double true_beta) {
  const std::size_t b = estimates.size();
  if (b == 0) throw InputError("no estimates");
  if (b == 1) throw InputError("standard deviation undefined for a single estimate");
  if (!ses.empty() && ses.size() != b) throw InputError("estimate and SE counts differ");
  MetricsRow m;
  double mean = 0.0, sq = 0.0;
  for (double e : estimates) mean += e;
  mean /= static_cast<double>(b);
  for (double e : estimates) sq += (e - true_beta) * (e - true_beta);
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);
  m.bias = mean - true_beta;
  m.sd = std::sqrt(ss / static_cast<double>(b - 1));
  m.rmse = std::sqrt(sq / static_cast<double>(b));
  if (!ses.empty()) {
    double se = 0.0;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < b; ++i) {
      se += ses[i];
      covered += coverage_flag(estimates[i], ses[i], true_beta);
    }
    m.se = se / static_cast<double>(b);
    m.cp = static_cast<double>(covered) / static_cast<double>(b);
  }
  m.n_converged = b;
  return m;
}

struct BenchConfig {
  std::vector<ScenarioSpec> scenarios;
  std::vector<MethodSpec> methods;
  int replicates = 200;
  std::uint64_t master_seed = 20240601;
  int parallelism = 1;
  CoxOptions cox;

  void validate() const {
    if (replicates < 1) throw InputError("replicates must be >= 1");
    if (parallelism < 1) throw InputError("parallelism must be >= 1");
    if (scenarios.empty() || methods.empty()) throw InputError("bench needs scenarios and methods");
    for (const auto& s : scenarios) s.validate();
    for (const auto& m : methods) m.validate();
    cox.validate();
  }
};

/// Methods compared in the simulation table: the time-fixed family, landmarks
/// at 3/6/9, time-varying Cox, per-protocol sequential trials over the K
/// monthly windows, and cloning with grace 3/6/9.
inline std::vector<MethodSpec> table2_methods(int intervals = 30) {
  std::vector<MethodSpec> out;
  auto add = [&](MethodKind k) {
    MethodSpec m;
    m.kind = k;
    out.push_back(m);
    return &out.back();
  };
  add(MethodKind::include_imt);
  add(MethodKind::exclude_imt);
  add(MethodKind::ptdm);
  for (double t : {3.0, 6.0, 9.0}) add(MethodKind::landmark)->landmark_time = t;
  add(MethodKind::time_varying);
  auto* seq = add(MethodKind::sequential);
  seq->window_width = 1.0;
  seq->trial_count = intervals;
  seq->adherence = Adherence::pp;
  for (double g : {3.0, 6.0, 9.0}) add(MethodKind::cloning)->grace_end = g;
  return out;
}

inline BenchConfig table2_config(int replicates = 200, int parallelism = 1) {
  BenchConfig c;
  for (int id = 1; id <= 6; ++id) c.scenarios.push_back(scenario(id));
  c.methods = table2_methods();
  c.replicates = replicates;
  c.parallelism = parallelism;
  return c;
}

struct BenchReport {
  std::vector<MetricsRow> rows;
  std::map<std::string, std::string> metadata;
  std::vector<std::string> warnings;
  // Per (scenario, method label) replicate estimates in replicate order;
  // NaN marks a failed replicate.
  std::map<std::pair<int, std::string>, std::vector<double>> estimates;

  const MetricsRow& row(const std::string& method, int scenario) const {
    for (const auto& r : rows) {
      if (r.method == method && r.scenario == scenario) return r;
    }
    throw InputError("no bench row for " + method + " / scenario " + std::to_string(scenario));
  }
};

namespace detail {

struct ReplicateResult {
  std::vector<double> estimate, se;  // per method; NaN on failure
  std::vector<std::string> errors;
};

inline ReplicateResult run_replicate(const BenchConfig& cfg, const ScenarioSpec& sc, int replicate) {
  const std::uint64_t seed = stream_seed(cfg.master_seed, static_cast<std::uint64_t>(sc.id), static_cast<std::uint64_t>(replicate));
  const Cohort cohort = simulate(sc, seed);
  ReplicateResult r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
    MethodSpec m = cfg.methods[k];
    if (m.kind == MethodKind::ptdm) m.rng_seed = seed ^ 0x5bd1e9955bd1e995ULL;
    try {
      const FitResult fit = analyze(m, cohort, cfg.cox);
      if (!fit.converged) throw NumericalError("not converged");
      const std::size_t a = fit.index(kTreatment);
      r.estimate.push_back(fit.coefficients[a]);
      r.se.push_back(fit.robust_se ? (*fit.robust_se)[a] : fit.model_se[a]);
      r.errors.emplace_back();
    } catch (const Error& e) {
      r.estimate.push_back(nan);
      r.se.push_back(nan);
      r.errors.emplace_back(e.what());
    }
  }
  return r;
}

}  // namespace detail

/// Runs every scenario x replicate x method. Results are folded in replicate
/// order, so the report does not depend on parallelism.
inline BenchReport run_replicates(const BenchConfig& cfg,
                                  const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  cfg.validate();
  const std::size_t S = cfg.scenarios.size(), B = static_cast<std::size_t>(cfg.replicates);
  const std::size_t total = S * B;
  std::vector<detail::ReplicateResult> results(total);
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t job; (job = next.fetch_add(1)) < total;) {
      results[job] = detail::run_replicate(cfg, cfg.scenarios[job / B], static_cast<int>(job % B));
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(d, total);
      }
    }
  };
  const int threads = std::min<int>(cfg.parallelism, static_cast<int>(total));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  BenchReport report;
  report.metadata["replicates"] = std::to_string(B);
  report.metadata["master_seed"] = std::to_string(cfg.master_seed);
  report.metadata["ties"] = cfg.cox.ties == Ties::efron ? "efron" : "breslow";
  report.metadata["se"] = "robust for sequential and cloning, model-based otherwise";
  report.metadata["rmse"] = "sqrt(mean((estimate - truth)^2)), reported as MSE in some sources";
  for (const auto& m : cfg.methods) {
    if (m.kind == MethodKind::sequential || m.kind == MethodKind::cloning) {
      report.metadata["weight_cap." + m.label()] = format_double(m.weights.cap);
    }
  }
  for (std::size_t s = 0; s < S; ++s) {
    const auto& sc = cfg.scenarios[s];
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      const auto& m = cfg.methods[k];
      std::vector<double> est, se, all;
      std::map<std::string, std::size_t> reasons;
      for (std::size_t b = 0; b < B; ++b) {
        const auto& r = results[s * B + b];
        all.push_back(r.estimate[k]);
        if (std::isnan(r.estimate[k])) {
          ++reasons[r.errors[k]];
          continue;
        }
        est.push_back(r.estimate[k]);
        se.push_back(r.se[k]);
      }
      report.estimates[{sc.id, m.label()}] = all;
      const bool inference = m.kind != MethodKind::cloning;
      MetricsRow row;
      if (est.size() >= 2) {
        row = metrics(est, inference ? std::span<const double>(se) : std::span<const double>(), sc.beta_treatment);
      } else {
        row.bias = row.sd = row.rmse = std::numeric_limits<double>::quiet_NaN();
        row.n_converged = est.size();
      }
      row.method = m.label();
      row.scenario = sc.id;
      row.n_failed = B - est.size();
      if (row.n_failed * 10 > B) {
        report.warnings.push_back(row.method + " scenario " + std::to_string(sc.id) + ": " +
                                  std::to_string(row.n_failed) + " of " + std::to_string(B) + " replicates failed");
      }
      for (const auto& [why, count] : reasons) {
        report.metadata["failures." + row.method + ".s" + std::to_string(sc.id) + "." + why] = std::to_string(count);
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

inline void write_bench_csv(std::ostream& os, const BenchReport& r) {
  os << "method,scenario,bias,sd,se,cp,rmse,n_converged\n";
  for (const auto& m : r.rows) {
    os << csv_escape(m.method) << ',' << m.scenario << ',' << format_double(m.bias) << ',' << format_double(m.sd)
       << ',' << (m.se ? format_double(*m.se) : "") << ',' << (m.cp ? format_double(*m.cp) : "") << ','
       << format_double(m.rmse) << ',' << m.n_converged << '\n';
  }
}

/// Aligned table in the layout of the simulation results table.
inline std::string format_bench(const BenchReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "Method" << std::right << std::setw(9) << "Scenario" << std::setw(9) << "Bias"
     << std::setw(8) << "SD" << std::setw(8) << "SE" << std::setw(8) << "CP" << std::setw(8) << "RMSE"
     << std::setw(6) << "n" << '\n';
  std::string last;
  for (const auto& m : r.rows) {
    std::ostringstream se, cp;
    if (m.se) se << std::fixed << std::setprecision(3) << *m.se; else se << '-';
    if (m.cp) cp << std::fixed << std::setprecision(1) << 100.0 * *m.cp << '%'; else cp << '-';
    os << std::left << std::setw(26) << (m.method == last ? "" : m.method) << std::right << std::setw(9) << m.scenario
       << std::fixed << std::setprecision(3) << std::setw(9) << m.bias << std::setw(8) << m.sd << std::setw(8)
       << se.str() << std::setw(8) << cp.str() << std::setw(8) << m.rmse << std::setw(6) << m.n_converged << '\n';
    last = m.method;
  }
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  return os.str();
}

inline json bench_config_to_json(const BenchConfig& c) {
  json j{{"replicates", c.replicates}, {"master_seed", c.master_seed}, {"parallelism", c.parallelism}};
  j["scenarios"] = json::array();
  for (const auto& s : c.scenarios) j["scenarios"].push_back(scenario_to_json(s));
  j["methods"] = json::array();
  for (const auto& m : c.methods) j["methods"].push_back(method_to_json(m));
  j["ties"] = c.cox.ties == Ties::efron ? "efron" : "breslow";
  return j;
}

inline BenchConfig bench_config_from_json(const json& j) {
  BenchConfig c;
  try {
    for (const auto& s : j.at("scenarios")) c.scenarios.push_back(scenario_from_json(s));
    if (j.contains("methods")) {
      for (const auto& m : j["methods"]) c.methods.push_back(method_from_json(m));
    } else {
      c.methods = table2_methods();
    }
    if (j.contains("replicates")) c.replicates = j["replicates"].get<int>();
    if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
    if (j.contains("parallelism")) c.parallelism = j["parallelism"].get<int>();
    if (j.contains("ties")) {
      const auto t = j["ties"].get<std::string>();
      if (t == "efron") c.cox.ties = Ties::efron;
      else if (t == "breslow") c.cox.ties = Ties::breslow;
      else throw InputError("unknown ties '" + t + "'");
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("bench config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json bench_report_to_json(const BenchReport& r) {
  json rows = json::array();
  for (const auto& m : r.rows) {
    json row{{"method", m.method}, {"scenario", m.scenario}, {"bias", m.bias},     {"sd", m.sd},
             {"rmse", m.rmse},     {"n_converged", m.n_converged}, {"n_failed", m.n_failed}};
    row["se"] = m.se ? json(*m.se) : json(nullptr);
    row["cp"] = m.cp ? json(*m.cp) : json(nullptr);
    rows.push_back(row);
  }
  return json{{"rows", rows}, {"metadata", r.metadata}, {"warnings", r.warnings}};
}

}  // namespace imt
