#pragma once

// Immortal-time accommodation methods. Each builds an AnalysisDataset from a
// cohort; analyze() dispatches on a MethodSpec and fits the Cox model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "imt/aalen.hpp"
#include "imt/core.hpp"
#include "imt/cox.hpp"
#include "imt/errors.hpp"
#include "imt/rng.hpp"
#include "imt/types.hpp"

namespace imt {

enum class MethodKind { include_imt, exclude_imt, ptdm, landmark, time_varying, sequential, cloning };
enum class Adherence { itt_like, pp };
// observed_at_risk draws only among waiting times shorter than the control's
// own follow-up, so no control is excluded unless none qualifies.
enum class PtdmSource { observed, uniform_grace, observed_at_risk };

inline std::string to_string(MethodKind k) {
  switch (k) {
    case MethodKind::include_imt: return "include-imt";
    case MethodKind::exclude_imt: return "exclude-imt";
    case MethodKind::ptdm: return "ptdm";
    case MethodKind::landmark: return "landmark";
    case MethodKind::time_varying: return "time-varying";
    case MethodKind::sequential: return "sequential";
    case MethodKind::cloning: return "cloning";
  }
  return "?";
}

inline MethodKind parse_method_kind(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  for (auto k : {MethodKind::include_imt, MethodKind::exclude_imt, MethodKind::ptdm, MethodKind::landmark,
                 MethodKind::time_varying, MethodKind::sequential, MethodKind::cloning}) {
    if (to_string(k) == s) return k;
  }
  throw InputError("unknown method '" + s + "'");
}

inline std::string to_string(Adherence a) { return a == Adherence::pp ? "pp" : "itt-like"; }
inline std::string to_string(PtdmSource s) {
  switch (s) {
    case PtdmSource::observed: return "observed";
    case PtdmSource::uniform_grace: return "uniform-grace";
    case PtdmSource::observed_at_risk: return "observed-at-risk";
  }
  return "?";
}

struct MethodSpec {
  MethodKind kind = MethodKind::include_imt;
  std::optional<double> landmark_time;
  std::optional<double> grace_end;
  std::optional<double> window_width;
  std::optional<int> trial_count;
  Adherence adherence = Adherence::itt_like;
  PtdmSource ptdm_source = PtdmSource::observed;
  std::uint64_t rng_seed = 0;

  // Outcome model: treatment plus baseline covariates unless disabled. Unset
  // means the method default (cloning: treatment only).
  std::optional<bool> adjust_baseline;
  // Censoring-model covariates for pp sequential and cloning; unset = all baseline.
  std::optional<std::vector<std::string>> censor_covariates;
  WeightOptions weights;
  double weight_step = 1.0;  // pieces on which censoring weights are held constant

  void validate() const {
    auto need = [&](const std::optional<double>& v, const char* what) {
      if (!v) throw InputError(to_string(kind) + " requires " + what);
      if (!(*v > 0) || !std::isfinite(*v)) throw InputError(std::string(what) + " must be positive");
    };
    switch (kind) {
      case MethodKind::landmark: need(landmark_time, "landmark_time"); break;
      case MethodKind::cloning: need(grace_end, "grace_end"); break;
      case MethodKind::ptdm:
        if (ptdm_source == PtdmSource::uniform_grace) need(grace_end, "grace_end");
        break;
      case MethodKind::sequential:
        need(window_width, "window_width");
        if (!trial_count) throw InputError("sequential requires trial_count");
        if (*trial_count < 1) throw InputError("trial_count must be positive");
        break;
      default: break;
    }
    if (!(weight_step > 0)) throw InputError("weight_step must be positive");
    if (!(weights.cap > 0)) throw InputError("weight cap must be positive");
  }

  bool adjusts_baseline() const { return adjust_baseline.value_or(kind != MethodKind::cloning); }

  /// Short label such as "landmark(20)" or "cloning(6)".
  std::string label() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == MethodKind::landmark && landmark_time) os << '(' << *landmark_time << ')';
    if (kind == MethodKind::cloning && grace_end) os << '(' << *grace_end << ')';
    if (kind == MethodKind::sequential) os << '-' << to_string(adherence);
    if (kind == MethodKind::ptdm && ptdm_source != PtdmSource::observed) os << '-' << to_string(ptdm_source);
    return os.str();
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void require_contrast(std::size_t treated, std::size_t control) {
  if (treated == 0 || control == 0) throw InputError("non-identifiable treatment contrast");
}

inline std::vector<std::string> censor_covariates_for(const MethodSpec& spec, const Cohort& cohort) {
  return spec.censor_covariates.value_or(cohort.covariate_names);
}

}  // namespace detail

/// Time zero at entry; everyone treated by the end of follow-up is treated
/// from time zero.
inline AnalysisDataset include_imt(const Cohort& cohort) {
  require_valid(cohort);
  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = to_string(MethodKind::include_imt);
  std::size_t treated = 0;
  for (const auto& s : cohort.subjects) {
    const bool a = s.ever_treated();
    treated += a;
    IntervalRow r;
    r.cluster = r.lineage = ds.intern_cluster(s.id);
    r.stop = s.followup_end;
    r.event = s.event;
    ds.add_row(r, detail::row_values(s, a ? 1.0 : 0.0));
  }
  detail::require_contrast(treated, cohort.size() - treated);
  return ds;
}

/// Treated subjects start their clock at initiation; the waiting time is
/// discarded. Initiation at the follow-up end leaves a zero-length row at
/// the origin.
inline AnalysisDataset exclude_imt(const Cohort& cohort) {
  require_valid(cohort);
  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = to_string(MethodKind::exclude_imt);
  std::size_t treated = 0;
  for (const auto& s : cohort.subjects) {
    const bool a = s.ever_treated();
    treated += a;
    IntervalRow r;
    r.cluster = r.lineage = ds.intern_cluster(s.id);
    r.stop = a ? s.followup_end - *s.treat_init : s.followup_end;
    r.event = s.event;
    ds.add_row(r, detail::row_values(s, a ? 1.0 : 0.0));
  }
  detail::require_contrast(treated, cohort.size() - treated);
  return ds;
}

/// Prescription time distribution matching: controls get an imputed
/// waiting time and are followed from it; those whose follow-up ends before
/// it are dropped.
inline AnalysisDataset ptdm(const Cohort& cohort, const MethodSpec& spec) {
  require_valid(cohort);
  spec.validate();
  std::vector<double> pool;
  for (const auto& s : cohort.subjects) {
    if (s.ever_treated()) pool.push_back(*s.treat_init);
  }
  if (spec.ptdm_source != PtdmSource::uniform_grace && pool.empty()) throw InputError("empty waiting-time pool");
  std::sort(pool.begin(), pool.end());

  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = to_string(MethodKind::ptdm);
  ds.meta["ptdm_source"] = to_string(spec.ptdm_source);
  ds.meta["seed"] = std::to_string(spec.rng_seed);
  Rng rng(spec.rng_seed);
  std::size_t treated = 0, control = 0, excluded = 0;
  for (const auto& s : cohort.subjects) {
    IntervalRow r;
    r.event = s.event;
    if (s.ever_treated()) {
      ++treated;
      r.cluster = r.lineage = ds.intern_cluster(s.id);
      r.stop = s.followup_end - *s.treat_init;
      ds.add_row(r, detail::row_values(s, 1.0));
      continue;
    }
    double imputed = std::numeric_limits<double>::infinity();
    switch (spec.ptdm_source) {
      case PtdmSource::observed: imputed = pool[rng.below(pool.size())]; break;
      case PtdmSource::uniform_grace: imputed = *spec.grace_end * (1.0 - rng.uniform()); break;
      case PtdmSource::observed_at_risk: {
        const auto eligible = static_cast<std::size_t>(
            std::lower_bound(pool.begin(), pool.end(), s.followup_end) - pool.begin());
        if (eligible > 0) imputed = pool[rng.below(eligible)];
        break;
      }
    }
    if (s.followup_end < imputed) {
      ++excluded;
      continue;
    }
    ++control;
    r.cluster = r.lineage = ds.intern_cluster(s.id);
    r.stop = s.followup_end - imputed;
    ds.add_row(r, detail::row_values(s, 0.0));
  }
  ds.meta["excluded_controls"] = std::to_string(excluded);
  detail::require_contrast(treated, control);
  return ds;
}

/// Landmark analysis at T_LM: survivors at the landmark, arms fixed by
/// status at the landmark, clock restarted there.
inline AnalysisDataset landmark(const Cohort& cohort, double t_lm) {
  require_valid(cohort);
  if (!(t_lm > 0) || !std::isfinite(t_lm)) throw InputError("landmark_time must be positive");
  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = to_string(MethodKind::landmark);
  ds.meta["landmark_time"] = detail::fmt(t_lm);
  std::size_t treated = 0, control = 0;
  for (const auto& s : cohort.subjects) {
    if (s.followup_end < t_lm) continue;
    const bool a = s.treat_init && *s.treat_init <= t_lm;
    (a ? treated : control)++;
    IntervalRow r;
    r.cluster = r.lineage = ds.intern_cluster(s.id);
    r.stop = s.followup_end - t_lm;
    r.event = s.event;
    ds.add_row(r, detail::row_values(s, a ? 1.0 : 0.0));
  }
  detail::require_contrast(treated, control);
  return ds;
}

/// Treatment as a time-varying covariate.
inline AnalysisDataset time_varying(const Cohort& cohort) {
  AnalysisDataset ds = to_counting_process(cohort, true);
  ds.meta["method"] = to_string(MethodKind::time_varying);
  const std::size_t a = ds.covariate_index(kTreatment);
  std::size_t treated_rows = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) treated_rows += ds.covariates(i)[a] == 1.0;
  detail::require_contrast(treated_rows, ds.size() - treated_rows);
  return ds;
}

struct TrialAssignment {
  int trial = 0;
  std::string subject_id;
  bool treated = false;
  double time_zero = 0.0;
};

/// Emulated trials: trial k enrolls subjects event-free and treatment-free
/// at t_k = k * window; initiation within [t_k, t_k + window) assigns the
/// treated arm. In pp mode controls are censored at later initiation and
/// reweighted by an Aalen censoring model.
inline AnalysisDataset sequential_trials(const Cohort& cohort, const MethodSpec& spec,
                                         std::vector<TrialAssignment>* assignments = nullptr) {
  require_valid(cohort);
  spec.validate();
  if (spec.kind != MethodKind::sequential) throw InputError("sequential_trials needs a sequential spec");
  const double width = *spec.window_width;
  AnalysisDataset ds = detail::make_dataset(cohort);
  ds.meta["method"] = to_string(MethodKind::sequential);
  ds.meta["adherence"] = to_string(spec.adherence);
  ds.meta["window_width"] = detail::fmt(width);
  ds.meta["trial_count"] = std::to_string(*spec.trial_count);
  for (const auto& s : cohort.subjects) ds.intern_cluster(s.id);

  std::uint32_t lineage = 0;
  std::size_t kept_trials = 0;
  for (int k = 0; k < *spec.trial_count; ++k) {
    const double t0 = k * width;
    const double t1 = t0 + width;
    AnalysisDataset trial = detail::make_dataset(cohort);
    std::vector<TrialAssignment> local;
    std::size_t treated = 0, control = 0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& s = cohort.subjects[i];
      if (!(s.followup_end > t0)) continue;
      const bool initiates = s.ever_treated();
      if (initiates && *s.treat_init < t0) continue;
      const bool a = initiates && *s.treat_init < t1;
      IntervalRow r;
      r.cluster = static_cast<std::uint32_t>(i);
      r.stratum = k;
      r.stop = s.followup_end - t0;
      r.event = s.event;
      if (!a && spec.adherence == Adherence::pp && s.treat_init && *s.treat_init < s.followup_end) {
        r.stop = *s.treat_init - t0;
        r.event = false;
        r.censor_event = true;
      }
      trial.add_row(r, detail::row_values(s, a ? 1.0 : 0.0));
      (a ? treated : control)++;
      local.push_back({k, s.id, a, t0});
    }
    if (treated == 0 || control == 0) {
      ds.warnings.push_back("trial " + std::to_string(k) + " dropped: empty arm");
      continue;
    }
    ++kept_trials;
    for (std::size_t i = 0; i < trial.size(); ++i) {
      IntervalRow r = trial.rows[i];
      r.lineage = lineage++;
      ds.add_row(r, trial.covariates(i));
    }
    if (assignments) assignments->insert(assignments->end(), local.begin(), local.end());
  }
  if (kept_trials == 0) throw InputError("non-identifiable treatment contrast: every trial has an empty arm");
  ds.meta["trials_kept"] = std::to_string(kept_trials);
  if (spec.adherence == Adherence::itt_like) return ds;

  // Censoring model on control rows only; treated rows never deviate.
  const std::size_t a = ds.covariate_index(kTreatment);
  AnalysisDataset controls;
  controls.covariate_names = ds.covariate_names;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.covariates(i)[a] == 0.0) controls.add_row(ds.rows[i], ds.covariates(i));
  }
  const auto covs = detail::censor_covariates_for(spec, cohort);
  const AalenFit aalen = fit_aalen_censoring(controls, covs);
  const WeightSeries ws = ipc_weights(aalen, controls, spec.weights);
  std::string model = "aalen(intercept";
  for (const auto& c : covs) model += "+" + c;
  ds.meta["censor_model"] = model + ")";
  ds.meta["weight_cap"] = detail::fmt(spec.weights.cap);
  ds.meta["weight_convention"] = to_string(spec.weights.convention.value_or(WeightConvention::exponential));
  if (aalen.skipped_jumps) ds.warnings.push_back(std::to_string(aalen.skipped_jumps) + " singular aalen jumps skipped");
  if (ws.clamped) ds.warnings.push_back(std::to_string(ws.clamped) + " censoring survivals clamped at floor");
  AnalysisDataset out = apply_weights(ds, ws, spec.weight_step);
  return out;
}

enum class CloneArm { treated_copy, control_copy };
enum class CensorReason { deviation, grace_expiry, natural };

struct CloneRecord {
  std::string source_subject;
  CloneArm arm = CloneArm::control_copy;
  double censor_time = 0.0;
  CensorReason censor_reason = CensorReason::natural;
};

namespace detail {

/// Per-lineage inverse censoring-survival weights from a Cox censoring model
/// fitted to one arm's clones; intercept-only (Nelson-Aalen) when covariates
/// cannot be fit. Survival is the product of (1 - dH(t | x)) by default, or
/// exp(-H(t | x)) under the exponential convention.
inline WeightSeries cox_censoring_weights(const AnalysisDataset& arm, const std::vector<std::string>& covs,
                                          const WeightOptions& opt, std::vector<std::string>& warnings) {
  WeightSeries ws;
  ws.cap = opt.cap;
  std::vector<char> status(arm.size());
  bool any = false;
  for (std::size_t i = 0; i < arm.size(); ++i) any |= (status[i] = arm.rows[i].censor_event ? 1 : 0) != 0;
  if (!any) return ws;

  AnalysisDataset model = select_covariates(arm, covs);
  std::vector<double> gamma(covs.size(), 0.0);
  if (!covs.empty()) {
    try {
      gamma = fit_cox_events(model, status).coefficients;
    } catch (const Error& e) {
      warnings.push_back(std::string("censoring model reduced to intercept only: ") + e.what());
      std::fill(gamma.begin(), gamma.end(), 0.0);
    }
  }
  const BaselineHazard h = baseline_hazard(model, status, gamma, Ties::efron);
  const bool product = opt.convention.value_or(WeightConvention::exponential) == WeightConvention::product_limit;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto lineage = model.rows[i].lineage;
    if (ws.paths.count(lineage)) continue;
    auto x = model.covariates(i);
    double lp = 0.0;
    for (std::size_t j = 0; j < gamma.size(); ++j) lp += gamma[j] * x[j];
    const double r = std::exp(lp);
    WeightPath path;
    double surv = 1.0, prev = 0.0;
    for (std::size_t k = 0; k < h.times.size(); ++k) {
      surv = product ? surv * (1.0 - (h.cumulative[k] - prev) * r) : std::exp(-h.cumulative[k] * r);
      prev = h.cumulative[k];
      if (surv < opt.survival_floor) {
        surv = opt.survival_floor;
        ++ws.clamped;
      }
      double w = 1.0 / surv;
      if (w > opt.cap) {
        w = opt.cap;
        ++ws.capped;
      }
      path.times.push_back(h.times[k]);
      path.values.push_back(w);
    }
    ws.paths.emplace(lineage, std::move(path));
  }
  return ws;
}

}  // namespace detail

/// Clone-censor-weight with grace period G. Each subject contributes a
/// control copy (censored at initiation within the grace period) and a
/// treated copy (censored at G if still untreated). Clones are reweighted by
/// per-arm Cox censoring models; weights are frozen after G.
inline AnalysisDataset clone_censor_weight(const Cohort& cohort, const MethodSpec& spec,
                                           std::vector<CloneRecord>* records = nullptr) {
  require_valid(cohort);
  spec.validate();
  if (spec.kind != MethodKind::cloning) throw InputError("clone_censor_weight needs a cloning spec");
  const double grace = *spec.grace_end;
  const double inf = std::numeric_limits<double>::infinity();

  AnalysisDataset arms[2];
  for (auto& a : arms) {
    a = detail::make_dataset(cohort);
    for (const auto& s : cohort.subjects) a.intern_cluster(s.id);
  }
  std::uint32_t lineage = 0;
  std::size_t treated_events = 0;
  bool any_treated = false;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort.subjects[i];
    const double w = s.ever_treated() ? *s.treat_init : inf;
    any_treated |= w <= grace;
    IntervalRow r;
    r.cluster = static_cast<std::uint32_t>(i);

    CloneRecord ctrl{s.id, CloneArm::control_copy, s.followup_end, CensorReason::natural};
    r.lineage = lineage++;
    if (w <= grace) {
      ctrl.censor_time = w;
      ctrl.censor_reason = CensorReason::deviation;
      if (w > 0) {
        r.stop = w;
        r.event = false;
        r.censor_event = true;
        arms[0].add_row(r, detail::row_values(s, 0.0));
      }
    } else {
      r.stop = s.followup_end;
      r.event = s.event;
      r.censor_event = false;
      arms[0].add_row(r, detail::row_values(s, 0.0));
    }

    CloneRecord trt{s.id, CloneArm::treated_copy, s.followup_end, CensorReason::natural};
    r.lineage = lineage++;
    if (w <= grace || s.followup_end <= grace) {
      r.stop = s.followup_end;
      r.event = s.event;
      r.censor_event = false;
      treated_events += s.event;
    } else {
      trt.censor_time = grace;
      trt.censor_reason = CensorReason::grace_expiry;
      r.stop = grace;
      r.event = false;
      r.censor_event = true;
    }
    arms[1].add_row(r, detail::row_values(s, 1.0));
    if (records) {
      records->push_back(ctrl);
      records->push_back(trt);
    }
  }
  if (!any_treated || treated_events == 0) throw InputError("non-identifiable treatment contrast");

  AnalysisDataset ds = detail::make_dataset(cohort);
  for (const auto& s : cohort.subjects) ds.intern_cluster(s.id);
  ds.meta["method"] = to_string(MethodKind::cloning);
  ds.meta["grace_end"] = detail::fmt(grace);
  const auto covs = detail::censor_covariates_for(spec, cohort);
  std::string model = "cox-per-arm(";
  for (std::size_t j = 0; j < covs.size(); ++j) model += (j ? "+" : "") + covs[j];
  ds.meta["censor_model"] = model + "), efron baseline hazard";
  ds.meta["weight_cap"] = detail::fmt(spec.weights.cap);
  ds.meta["weight_convention"] = to_string(spec.weights.convention.value_or(WeightConvention::exponential));
  for (auto& arm : arms) {
    const WeightSeries ws = detail::cox_censoring_weights(arm, covs, spec.weights, ds.warnings);
    const AnalysisDataset weighted = apply_weights(arm, ws, spec.weight_step, grace);
    for (std::size_t i = 0; i < weighted.size(); ++i) ds.add_row(weighted.rows[i], weighted.covariates(i));
  }
  return ds;
}

/// Builds the analysis dataset for a method.
inline AnalysisDataset prepare(const MethodSpec& spec, const Cohort& cohort) {
  spec.validate();
  switch (spec.kind) {
    case MethodKind::include_imt: return include_imt(cohort);
    case MethodKind::exclude_imt: return exclude_imt(cohort);
    case MethodKind::ptdm: return ptdm(cohort, spec);
    case MethodKind::landmark: return landmark(cohort, *spec.landmark_time);
    case MethodKind::time_varying: return time_varying(cohort);
    case MethodKind::sequential: return sequential_trials(cohort, spec);
    case MethodKind::cloning: return clone_censor_weight(cohort, spec);
  }
  throw InputError("unknown method");
}

/// Transformation plus Cox fit. Sequential and cloning fits report robust
/// standard errors clustered on the source subject.
inline FitResult analyze(const MethodSpec& spec, const Cohort& cohort, CoxOptions options = {}) {
  AnalysisDataset ds = prepare(spec, cohort);
  if (!spec.adjusts_baseline()) {
    const std::vector<std::string> names{std::string(kTreatment)};
    ds = select_covariates(ds, names);
  }
  if (spec.kind == MethodKind::sequential || spec.kind == MethodKind::cloning) options.robust_cluster = true;
  FitResult fit = fit_cox(ds, options);
  fit.meta["method"] = spec.label();
  fit.meta["ties"] = options.ties == Ties::efron ? "efron" : "breslow";
  return fit;
}

}  // namespace imt
