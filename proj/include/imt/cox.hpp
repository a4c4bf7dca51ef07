#pragma once

// Cox partial-likelihood engine for counting-process data: case weights,
// strata, Efron or Breslow ties, Newton-Raphson with step halving, and a
// cluster-robust sandwich variance built from score residuals.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
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

enum class Ties { efron, breslow };

struct CoxOptions {
  Ties ties = Ties::efron;
  int max_iterations = 25;
  double tolerance = 1e-9;  // relative change of the log partial likelihood
  bool robust_cluster = false;

  void validate() const {
    if (!(tolerance > 0)) throw InputError("cox tolerance must be positive");
    if (max_iterations < 1) throw InputError("cox max_iterations must be >= 1");
  }
};

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> coefficients;
  std::vector<double> model_se;
  std::optional<std::vector<double>> robust_se;
  Eigen::MatrixXd covariance;  // inverse observed information
  double loglik = 0.0;
  double loglik_null = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t n_events = 0;
  std::size_t n_rows = 0;
  Ties ties = Ties::efron;
  Metadata meta;
  std::vector<std::string> warnings;

  std::size_t index(std::string_view name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InputError("no coefficient named '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names.begin());
  }
  double coef(std::string_view name) const { return coefficients[index(name)]; }
  double hazard_ratio(std::string_view name) const { return std::exp(coef(name)); }
  double se(std::string_view name) const { return model_se[index(name)]; }
};

struct PartialLikelihood {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

namespace detail {

/// Sorted views of one dataset, built once and reused across iterations.
class CoxProblem {
 public:
  CoxProblem(const AnalysisDataset& ds, std::span<const char> status)
      : n_(ds.size()), p_(ds.n_covariates()) {
    entry_.resize(n_);
    stop_.resize(n_);
    weight_.resize(n_);
    status_.assign(status.begin(), status.end());
    x_.resize(n_ * p_);
    center_.assign(p_, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& r = ds.rows[i];
      if (!(r.weight > 0) || !std::isfinite(r.weight)) throw InputError("case weights must be positive and finite");
      entry_[i] = entry_time(r);
      stop_[i] = r.stop;
      weight_[i] = r.weight;
      wsum += r.weight;
      auto xi = ds.covariates(i);
      for (std::size_t j = 0; j < p_; ++j) center_[j] += r.weight * xi[j];
    }
    for (auto& c : center_) c /= wsum;
    for (std::size_t i = 0; i < n_; ++i) {
      auto xi = ds.covariates(i);
      for (std::size_t j = 0; j < p_; ++j) x_[i * p_ + j] = xi[j] - center_[j];
    }
    std::map<int, std::vector<std::uint32_t>> members;
    for (std::size_t i = 0; i < n_; ++i) members[ds.rows[i].stratum].push_back(static_cast<std::uint32_t>(i));
    for (auto& [label, idx] : members) {
      Stratum s;
      s.by_stop = idx;
      s.by_entry = idx;
      std::stable_sort(s.by_stop.begin(), s.by_stop.end(), [&](auto a, auto b) { return stop_[a] > stop_[b]; });
      std::stable_sort(s.by_entry.begin(), s.by_entry.end(), [&](auto a, auto b) { return entry_[a] > entry_[b]; });
      strata_.push_back(std::move(s));
    }
  }

  std::size_t rows() const { return n_; }
  std::size_t dim() const { return p_; }

  /// Log partial likelihood, score and observed information at beta.
  PartialLikelihood evaluate(const Eigen::VectorXd& beta, Ties ties, bool want_information = true) const {
    PartialLikelihood out;
    out.score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p_));
    out.information = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
    std::vector<double> eta(n_), risk(n_);
    const double shift = linear_predictor(beta, eta);
    for (std::size_t i = 0; i < n_; ++i) risk[i] = weight_[i] * std::exp(eta[i] - shift);

    const std::size_t p = p_;
    std::vector<double> s1(p), s2(p * p), d1(p), d2(p * p), a1(p), a2(p * p);
    double loglik = 0.0;
    for (const auto& st : strata_) {
      double s0 = 0.0;
      std::fill(s1.begin(), s1.end(), 0.0);
      std::fill(s2.begin(), s2.end(), 0.0);
      std::size_t is = 0, ie = 0;
      const std::size_t m = st.by_stop.size();
      while (is < m) {
        const double t = stop_[st.by_stop[is]];
        double d0 = 0.0, dw = 0.0;
        int nd = 0;
        std::fill(d1.begin(), d1.end(), 0.0);
        if (want_information) std::fill(d2.begin(), d2.end(), 0.0);
        for (; is < m && stop_[st.by_stop[is]] == t; ++is) {
          const std::uint32_t i = st.by_stop[is];
          const double* xi = &x_[i * p];
          const double r = risk[i];
          accumulate(s0, s1, s2, xi, r, want_information);
          if (status_[i]) {
            ++nd;
            dw += weight_[i];
            accumulate(d0, d1, d2, xi, r, want_information);
            loglik += weight_[i] * eta[i];
            for (std::size_t j = 0; j < p; ++j) out.score[static_cast<Eigen::Index>(j)] += weight_[i] * xi[j];
          }
        }
        for (; ie < m && entry_[st.by_entry[ie]] >= t; ++ie) {
          const std::uint32_t i = st.by_entry[ie];
          accumulate(s0, s1, s2, &x_[i * p], -risk[i], want_information);
        }
        if (nd == 0) continue;
        const bool efron = ties == Ties::efron && nd > 1;
        const double wmean = dw / nd;
        for (int k = 0; k < nd; ++k) {
          const double f = efron ? static_cast<double>(k) / nd : 0.0;
          const double a0 = s0 - f * d0;
          if (!(a0 > 0)) throw NumericalError("empty risk set at an event time");
          for (std::size_t j = 0; j < p; ++j) a1[j] = s1[j] - f * d1[j];
          loglik -= wmean * (std::log(a0) + shift);
          for (std::size_t j = 0; j < p; ++j) out.score[static_cast<Eigen::Index>(j)] -= wmean * a1[j] / a0;
          if (want_information) {
            for (std::size_t j = 0; j < p; ++j) {
              for (std::size_t l = 0; l <= j; ++l) {
                const double a2jl = s2[j * p + l] - f * d2[j * p + l];
                const double v = wmean * (a2jl / a0 - a1[j] * a1[l] / (a0 * a0));
                out.information(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) += v;
              }
            }
          }
        }
      }
    }
    if (want_information) {
      for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t l = 0; l < j; ++l) {
          out.information(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j)) =
              out.information(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
        }
      }
    }
    // Linear predictors use centered covariates; the partial likelihood is
    // invariant to that shift, so no correction is needed.
    out.loglik = loglik;
    return out;
  }

  /// Score residuals (one row of length p per observation, unweighted).
  std::vector<double> score_residuals(const Eigen::VectorXd& beta, Ties ties) const {
    const std::size_t p = p_;
    std::vector<double> eta(n_), expeta(n_), risk(n_);
    const double shift = linear_predictor(beta, eta);
    for (std::size_t i = 0; i < n_; ++i) {
      expeta[i] = std::exp(eta[i] - shift);
      risk[i] = weight_[i] * expeta[i];
    }
    std::vector<double> resid(n_ * p, 0.0);
    std::vector<double> s1(p), d1(p), a1(p), s2dummy, d2dummy;

    for (const auto& st : strata_) {
      // Per death time (descending sweep): hazard increments and means.
      struct TimePoint {
        double t;
        double dA, dA_death;
        std::vector<double> dB, dB_death, xbar_mean;
      };
      std::vector<TimePoint> pts;
      double s0 = 0.0;
      std::fill(s1.begin(), s1.end(), 0.0);
      std::size_t is = 0, ie = 0;
      const std::size_t m = st.by_stop.size();
      while (is < m) {
        const double t = stop_[st.by_stop[is]];
        double d0 = 0.0, dw = 0.0;
        int nd = 0;
        std::fill(d1.begin(), d1.end(), 0.0);
        for (; is < m && stop_[st.by_stop[is]] == t; ++is) {
          const std::uint32_t i = st.by_stop[is];
          accumulate(s0, s1, s2dummy, &x_[i * p], risk[i], false);
          if (status_[i]) {
            ++nd;
            dw += weight_[i];
            accumulate(d0, d1, d2dummy, &x_[i * p], risk[i], false);
          }
        }
        for (; ie < m && entry_[st.by_entry[ie]] >= t; ++ie) {
          const std::uint32_t i = st.by_entry[ie];
          accumulate(s0, s1, s2dummy, &x_[i * p], -risk[i], false);
        }
        if (nd == 0) continue;
        TimePoint tp{t, 0.0, 0.0, std::vector<double>(p, 0.0), std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
        const bool efron = ties == Ties::efron && nd > 1;
        const double wmean = dw / nd;
        for (int k = 0; k < nd; ++k) {
          const double f = efron ? static_cast<double>(k) / nd : 0.0;
          const double a0 = s0 - f * d0;
          const double dl = wmean / a0;
          tp.dA += dl;
          tp.dA_death += (1.0 - f) * dl;
          for (std::size_t j = 0; j < p; ++j) {
            const double xb = (s1[j] - f * d1[j]) / a0;
            tp.dB[j] += xb * dl;
            tp.dB_death[j] += (1.0 - f) * xb * dl;
            tp.xbar_mean[j] += xb / nd;
          }
        }
        pts.push_back(std::move(tp));
      }
      std::reverse(pts.begin(), pts.end());
      // Cumulative sums over ascending death times; index 0 is "before any".
      const std::size_t T = pts.size();
      std::vector<double> times(T), cumA(T + 1, 0.0), cumB((T + 1) * p, 0.0);
      for (std::size_t k = 0; k < T; ++k) {
        times[k] = pts[k].t;
        cumA[k + 1] = cumA[k] + pts[k].dA;
        for (std::size_t j = 0; j < p; ++j) cumB[(k + 1) * p + j] = cumB[k * p + j] + pts[k].dB[j];
      }
      for (std::uint32_t i : st.by_stop) {
        const std::size_t lo = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), entry_[i]) - times.begin());
        const std::size_t hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), stop_[i]) - times.begin());
        double* ri = &resid[i * p];
        const double* xi = &x_[i * p];
        if (hi > lo) {
          const double A = cumA[hi] - cumA[lo];
          for (std::size_t j = 0; j < p; ++j) {
            ri[j] -= expeta[i] * (xi[j] * A - (cumB[hi * p + j] - cumB[lo * p + j]));
          }
        }
        if (status_[i]) {
          const auto& tp = pts[hi - 1];  // own death time
          for (std::size_t j = 0; j < p; ++j) {
            ri[j] += xi[j] - tp.xbar_mean[j];
            ri[j] += expeta[i] * (xi[j] * (tp.dA - tp.dA_death) - (tp.dB[j] - tp.dB_death[j]));
          }
        }
      }
    }
    return resid;
  }

  std::span<const double> weights() const { return weight_; }
  std::span<const double> centers() const { return center_; }
  std::span<const char> status() const { return status_; }

 private:
  struct Stratum {
    std::vector<std::uint32_t> by_stop;
    std::vector<std::uint32_t> by_entry;
  };

  double linear_predictor(const Eigen::VectorXd& beta, std::vector<double>& eta) const {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_; ++i) {
      double e = 0.0;
      for (std::size_t j = 0; j < p_; ++j) e += x_[i * p_ + j] * beta[static_cast<Eigen::Index>(j)];
      eta[i] = e;
      mx = std::max(mx, e);
    }
    return n_ ? mx : 0.0;
  }

  void accumulate(double& s0, std::vector<double>& s1, std::vector<double>& s2, const double* x, double r,
                  bool second) const {
    s0 += r;
    for (std::size_t j = 0; j < p_; ++j) s1[j] += r * x[j];
    if (!second) return;
    for (std::size_t j = 0; j < p_; ++j) {
      const double rx = r * x[j];
      for (std::size_t l = 0; l <= j; ++l) s2[j * p_ + l] += rx * x[l];
    }
  }

  std::size_t n_, p_;
  std::vector<double> entry_, stop_, weight_, x_, center_;
  std::vector<char> status_;
  std::vector<Stratum> strata_;
};

inline std::vector<char> event_status(const AnalysisDataset& ds) {
  std::vector<char> s(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) s[i] = ds.rows[i].event ? 1 : 0;
  return s;
}

inline Eigen::MatrixXd sandwich(const CoxProblem& prob, const Eigen::VectorXd& beta, Ties ties,
                                const Eigen::MatrixXd& covariance, std::span<const std::uint32_t> clusters) {
  const std::size_t p = prob.dim();
  const auto resid = prob.score_residuals(beta, ties);
  const auto w = prob.weights();
  std::map<std::uint32_t, Eigen::VectorXd> per_cluster;
  for (std::size_t i = 0; i < prob.rows(); ++i) {
    auto& u = per_cluster.try_emplace(clusters[i], Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p))).first->second;
    for (std::size_t j = 0; j < p; ++j) u[static_cast<Eigen::Index>(j)] += w[i] * resid[i * p + j];
  }
  if (per_cluster.size() < 2) throw InputError("robust variance needs at least 2 clusters");
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (const auto& [c, u] : per_cluster) meat += u * u.transpose();
  return covariance * meat * covariance;
}

}  // namespace detail

/// Log partial likelihood with score and information at an arbitrary beta.
inline PartialLikelihood cox_partial_likelihood(const AnalysisDataset& ds, std::span<const double> beta,
                                                Ties ties = Ties::efron) {
  if (beta.size() != ds.n_covariates()) throw InputError("coefficient vector length mismatch");
  const auto status = detail::event_status(ds);
  detail::CoxProblem prob(ds, status);
  Eigen::VectorXd b(static_cast<Eigen::Index>(beta.size()));
  for (std::size_t j = 0; j < beta.size(); ++j) b[static_cast<Eigen::Index>(j)] = beta[j];
  return prob.evaluate(b, ties);
}

/// Score residuals at beta, row-major (rows x covariates).
inline std::vector<double> cox_score_residuals(const AnalysisDataset& ds, std::span<const double> beta,
                                               Ties ties = Ties::efron) {
  const auto status = detail::event_status(ds);
  detail::CoxProblem prob(ds, status);
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  return prob.score_residuals(b, ties);
}

namespace detail {

inline constexpr double kDivergenceBound = 15.0;

inline FitResult fit_cox_status(const AnalysisDataset& ds, std::span<const char> status, const CoxOptions& opt) {
  opt.validate();
  const std::size_t p = ds.n_covariates();
  if (p == 0) throw InputError("cox model needs at least one covariate");
  std::size_t n_events = 0;
  for (char s : status) n_events += s ? 1 : 0;
  if (n_events == 0) throw InputError("no events");

  CoxProblem prob(ds, status);
  const auto P = static_cast<Eigen::Index>(p);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);
  PartialLikelihood cur = prob.evaluate(beta, opt.ties);

  for (std::size_t j = 0; j < p; ++j) {
    const double scale = std::max(1.0, cur.information.diagonal().cwiseAbs().maxCoeff());
    if (!(cur.information(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) > 1e-12 * scale)) {
      throw InputError("constant covariate '" + ds.covariate_names[j] + "' in event risk sets");
    }
  }

  FitResult fit;
  fit.names = ds.covariate_names;
  fit.loglik_null = cur.loglik;
  fit.n_events = n_events;
  fit.n_rows = ds.size();
  fit.ties = opt.ties;
  fit.meta = ds.meta;
  fit.warnings = ds.warnings;

  auto diverged = [&](const Eigen::VectorXd& b) -> std::optional<std::size_t> {
    for (std::size_t j = 0; j < p; ++j) {
      if (std::abs(b[static_cast<Eigen::Index>(j)]) > kDivergenceBound) return j;
    }
    return std::nullopt;
  };

  int iter = 0;
  bool converged = false;
  while (iter < opt.max_iterations) {
    ++iter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0) {
      throw NumericalError("singular information matrix");
    }
    Eigen::VectorXd next = beta + ldlt.solve(cur.score);
    PartialLikelihood trial = prob.evaluate(next, opt.ties);
    for (int h = 0; h < 10 && !(trial.loglik >= cur.loglik) ; ++h) {
      next = 0.5 * (beta + next);
      trial = prob.evaluate(next, opt.ties);
    }
    const double change = std::abs(trial.loglik - cur.loglik) / std::max(std::abs(cur.loglik), 1e-300);
    const bool increased = trial.loglik > cur.loglik;
    if (trial.loglik >= cur.loglik) {
      beta = next;
      cur = std::move(trial);
    }
    if (auto j = diverged(beta); j && increased) {
      throw NumericalError("monotone likelihood: coefficient '" + ds.covariate_names[*j] + "' diverges");
    }
    if (change < opt.tolerance) {
      if (cur.score.cwiseAbs().maxCoeff() < 1e-6) {
        converged = true;
        break;
      }
      if (!increased) {
        // Large weighted fits can stall with a score above 1e-6 once the
        // remaining Newton gain is below the rounding error of the likelihood.
        Eigen::LDLT<Eigen::MatrixXd> at(cur.information);
        const double decrement = cur.score.dot(at.solve(cur.score));
        converged = decrement < 1e-10 * std::max(1.0, std::abs(cur.loglik));
        break;
      }
    }
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0) {
    throw NumericalError("singular information matrix at the estimate");
  }
  fit.covariance = ldlt.solve(Eigen::MatrixXd::Identity(P, P));
  fit.coefficients.resize(p);
  fit.model_se.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    fit.coefficients[j] = beta[static_cast<Eigen::Index>(j)];
    fit.model_se[j] = std::sqrt(fit.covariance(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
  }
  fit.loglik = cur.loglik;
  fit.iterations = iter;
  fit.converged = converged;

  if (opt.robust_cluster) {
    std::vector<std::uint32_t> clusters(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) clusters[i] = ds.rows[i].cluster;
    const auto V = sandwich(prob, beta, opt.ties, fit.covariance, clusters);
    std::vector<double> se(p);
    for (std::size_t j = 0; j < p; ++j) se[j] = std::sqrt(V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
    fit.robust_se = std::move(se);
  }
  return fit;
}

}  // namespace detail

/// Maximizes the (weighted, stratified) partial likelihood over all
/// covariates of the dataset.
inline FitResult fit_cox(const AnalysisDataset& ds, const CoxOptions& opt = {}) {
  const auto status = detail::event_status(ds);
  return detail::fit_cox_status(ds, status, opt);
}

/// Cluster-robust sandwich standard errors for a fit on ds, clustering on the
/// supplied per-row labels.
inline std::vector<double> robust_variance(const FitResult& fit, const AnalysisDataset& ds,
                                           std::span<const std::uint32_t> clusters) {
  if (clusters.size() != ds.size()) throw InputError("one cluster label per row required");
  if (fit.coefficients.size() != ds.n_covariates()) throw InputError("fit does not match dataset");
  const auto status = detail::event_status(ds);
  detail::CoxProblem prob(ds, status);
  const Eigen::VectorXd beta =
      Eigen::Map<const Eigen::VectorXd>(fit.coefficients.data(), static_cast<Eigen::Index>(fit.coefficients.size()));
  const auto V = detail::sandwich(prob, beta, fit.ties, fit.covariance, clusters);
  std::vector<double> se(fit.coefficients.size());
  for (std::size_t j = 0; j < se.size(); ++j) se[j] = std::sqrt(V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
  return se;
}

/// Same, clustering on the dataset's own row cluster ids.
inline std::vector<double> robust_variance(const FitResult& fit, const AnalysisDataset& ds) {
  std::vector<std::uint32_t> clusters(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) clusters[i] = ds.rows[i].cluster;
  return robust_variance(fit, ds, clusters);
}

/// Breslow cumulative baseline hazard of a fitted model, evaluated at the
/// covariate origin (x = 0, not the centered mean).
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cumulative;

  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// Cumulative baseline hazard at x = 0. Event flags come from `status` so
/// censoring models can reuse the rows. With Efron ties the d tied events at a
/// time see the risk set shrink by their own risk in steps of 1/d.
inline BaselineHazard baseline_hazard(const AnalysisDataset& ds, std::span<const char> status,
                                      std::span<const double> beta, Ties ties = Ties::breslow) {
  if (ds.rows.empty()) return {};
  std::vector<double> eta(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto x = ds.covariates(i);
    double e = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) e += x[j] * beta[j];
    eta[i] = e;
  }
  std::vector<double> times;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (status[i]) times.push_back(ds.rows[i].stop);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  std::vector<std::size_t> by_entry(ds.size()), by_stop(ds.size());
  std::iota(by_entry.begin(), by_entry.end(), 0);
  std::iota(by_stop.begin(), by_stop.end(), 0);
  std::sort(by_entry.begin(), by_entry.end(),
            [&](auto a, auto b) { return entry_time(ds.rows[a]) < entry_time(ds.rows[b]); });
  std::sort(by_stop.begin(), by_stop.end(), [&](auto a, auto b) { return ds.rows[a].stop < ds.rows[b].stop; });

  BaselineHazard h;
  double risk = 0.0, cum = 0.0;
  std::size_t ie = 0, is = 0;
  for (double t : times) {
    while (ie < by_entry.size() && entry_time(ds.rows[by_entry[ie]]) < t) {
      const auto i = by_entry[ie++];
      risk += ds.rows[i].weight * std::exp(eta[i]);
    }
    while (is < by_stop.size() && ds.rows[by_stop[is]].stop < t) {
      const auto i = by_stop[is++];
      risk -= ds.rows[i].weight * std::exp(eta[i]);
    }
    double dw = 0.0, tied = 0.0;
    std::size_t nd = 0;
    for (std::size_t j = is; j < by_stop.size() && ds.rows[by_stop[j]].stop == t; ++j) {
      const auto i = by_stop[j];
      if (!status[i]) continue;
      dw += ds.rows[i].weight;
      tied += ds.rows[i].weight * std::exp(eta[i]);
      ++nd;
    }
    if (risk > 0) {
      if (ties == Ties::efron && nd > 1) {
        const double wmean = dw / static_cast<double>(nd);
        for (std::size_t k = 0; k < nd; ++k) {
          const double denom = risk - static_cast<double>(k) / static_cast<double>(nd) * tied;
          cum += wmean / denom;
        }
      } else {
        cum += dw / risk;
      }
    }
    h.times.push_back(t);
    h.cumulative.push_back(cum);
  }
  return h;
}

inline BaselineHazard breslow_baseline(const AnalysisDataset& ds, std::span<const char> status,
                                       std::span<const double> beta) {
  return baseline_hazard(ds, status, beta, Ties::breslow);
}

/// Fits a Cox model in which `status` (not the rows' event flags) marks events.
inline FitResult fit_cox_events(const AnalysisDataset& ds, std::span<const char> status, const CoxOptions& opt = {}) {
  if (status.size() != ds.size()) throw InputError("one status flag per row required");
  return detail::fit_cox_status(ds, status, opt);
}

}  // namespace imt
