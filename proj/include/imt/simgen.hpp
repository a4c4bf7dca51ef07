#pragma once

// Permutation-algorithm cohort generator: outcomes and covariate profiles
// are drawn independently, then matched one outcome at a time with
// probabilities proportional to the Cox partial-likelihood terms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "imt/errors.hpp"
#include "imt/rng.hpp"
#include "imt/types.hpp"

namespace imt {

struct SurvivalDist {
  enum class Kind { exponential, gamma, weibull } kind = Kind::exponential;
  double rate = 0.01;    // exponential
  double scale = 100.0;  // gamma, weibull
  double shape = 1.0;    // gamma, weibull

  double draw(Rng& rng) const {
    switch (kind) {
      case Kind::exponential: return rng.exponential(rate);
      case Kind::gamma: return rng.gamma(shape, scale);
      case Kind::weibull: return rng.weibull(scale, shape);
    }
    return 0.0;
  }

  void validate() const {
    if (kind == Kind::exponential ? !(rate > 0) : !(scale > 0 && shape > 0)) {
      throw InputError("survival distribution parameters must be positive");
    }
  }

  static SurvivalDist exponential(double rate) { return {Kind::exponential, rate, 0.0, 0.0}; }
  static SurvivalDist gamma(double scale, double shape) { return {Kind::gamma, 0.0, scale, shape}; }
  static SurvivalDist weibull(double scale, double shape) { return {Kind::weibull, 0.0, scale, shape}; }
};

inline std::string to_string(SurvivalDist::Kind k) {
  switch (k) {
    case SurvivalDist::Kind::exponential: return "exponential";
    case SurvivalDist::Kind::gamma: return "gamma";
    case SurvivalDist::Kind::weibull: return "weibull";
  }
  return "?";
}

struct UniformRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct ScenarioSpec {
  int id = 0;  // 1..6 for the presets, 0 for custom
  SurvivalDist survival;
  UniformRange censor{1.0, 60.0};
  UniformRange treat_time{1.0, 30.0};
  double never_treated_fraction = 0.5;
  int n = 5000;
  int intervals = 30;  // K; unit-width grid, administrative end t_{K+1} = K
  double beta_covariate = -0.7;
  double beta_treatment = 0.5;
  double covariate_success_prob = 0.3;

  // Discretized generation: event and censoring times are rounded up to the
  // grid, the treatment interval is round(U(lo, hi)) and treatment starts at
  // that interval's left boundary; A = 1 at an event in interval j iff the
  // treatment interval is <= j. Outcomes are matched in order of follow-up
  // end. Continuous generation keeps raw draws, compares T_A <= T_F and
  // matches in order of raw T_F.
  bool discretize = true;

  TimeGrid grid() const { return TimeGrid::uniform(intervals); }

  void validate() const {
    survival.validate();
    if (!(never_treated_fraction >= 0 && never_treated_fraction <= 1)) {
      throw InputError("never_treated_fraction must lie in [0, 1]");
    }
    if (!(covariate_success_prob >= 0 && covariate_success_prob <= 1)) {
      throw InputError("covariate_success_prob must lie in [0, 1]");
    }
    if (n < 2) throw InputError("n must be at least 2");
    if (intervals < 1) throw InputError("intervals must be positive");
    if (!(censor.hi > censor.lo && censor.lo >= 0)) throw InputError("invalid censoring range");
    if (!(treat_time.hi >= treat_time.lo && treat_time.lo >= 0)) throw InputError("invalid treatment-time range");
  }
};

/// Scenario presets 1-6.
inline ScenarioSpec scenario(int id) {
  ScenarioSpec s;
  s.id = id;
  switch (id) {
    case 1: s.survival = SurvivalDist::exponential(0.01); s.never_treated_fraction = 0.25; break;
    case 2: s.survival = SurvivalDist::exponential(0.01); s.never_treated_fraction = 0.50; break;
    case 3: s.survival = SurvivalDist::exponential(0.01); s.never_treated_fraction = 0.75; break;
    case 4: s.survival = SurvivalDist::exponential(0.1); break;
    case 5: s.survival = SurvivalDist::gamma(100.0, 0.4); break;
    case 6: s.survival = SurvivalDist::weibull(100.0, 2.0); break;
    default: throw InputError("scenario id must be 1..6");
  }
  return s;
}

struct Outcome {
  double event_time = 0.0;  // T_F (grid-rounded when discretized)
  double censor_time = 0.0;
  bool event = false;

  double followup() const { return std::min(event_time, censor_time); }
};

struct Profile {
  double covariate = 0.0;           // L_0
  std::optional<double> treat_init;  // absent: never treated
};

/// Outcome pairs in matching order.
inline std::vector<Outcome> gen_outcomes(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  const double end = spec.grid().end();
  std::vector<Outcome> out(static_cast<std::size_t>(spec.n));
  for (auto& o : out) {
    o.event_time = spec.survival.draw(rng);
    o.censor_time = rng.uniform(spec.censor.lo, spec.censor.hi);
    if (spec.discretize) {
      o.event_time = std::ceil(o.event_time);
      o.censor_time = std::ceil(o.censor_time);
    }
    if (std::min(o.event_time, o.censor_time) > end) o.censor_time = end;
    o.event = o.event_time <= o.censor_time;
  }
  auto key = [&](const Outcome& o) { return spec.discretize ? o.followup() : o.event_time; };
  std::stable_sort(out.begin(), out.end(), [&](const Outcome& a, const Outcome& b) {
    if (key(a) != key(b)) return key(a) < key(b);
    return a.event > b.event;
  });
  return out;
}

inline std::vector<Profile> gen_profiles(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<Profile> out(static_cast<std::size_t>(spec.n));
  const TimeGrid grid = spec.grid();
  for (auto& p : out) {
    p.covariate = rng.bernoulli(spec.covariate_success_prob) ? 1.0 : 0.0;
    const bool never = rng.bernoulli(spec.never_treated_fraction);
    const double u = rng.uniform(spec.treat_time.lo, spec.treat_time.hi);
    if (never) continue;
    if (spec.discretize) {
      const int k = std::clamp(static_cast<int>(std::lround(u)), 1, grid.interval_count() + 1);
      p.treat_init = grid.interval_start(k);
    } else {
      p.treat_init = u;
    }
  }
  return out;
}

/// Relative selection weight of a profile at an event at time t.
inline double match_weight(const Profile& p, double t, double beta_covariate, double beta_treatment, bool strict) {
  const bool a = p.treat_init && (strict ? *p.treat_init < t : *p.treat_init <= t);
  return std::exp(beta_covariate * p.covariate + beta_treatment * (a ? 1.0 : 0.0));
}

namespace detail {

/// Counts over sorted profile slots with prefix sums and k-th search.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}

  void add(std::size_t i, long long v) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) tree_[i] += v;
  }

  /// Sum over [0, i).
  long long prefix(std::size_t i) const {
    long long s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

  /// Smallest index whose prefix sum through it exceeds k (0-based k).
  std::size_t find(long long k) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 < tree_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      if (pos + step < tree_.size() && tree_[pos + step] <= k) {
        pos += step;
        k -= tree_[pos];
      }
    }
    return pos;
  }

 private:
  std::vector<long long> tree_;
};

}  // namespace detail

/// Matches every outcome to one profile. Events pick a profile with
/// probability proportional to exp(b1 L + b2 A(t)); censorings pick
/// uniformly. Returns the subjects in outcome order.
inline std::vector<Subject> permute_match(const std::vector<Outcome>& outcomes, const std::vector<Profile>& profiles,
                                          double beta_covariate, double beta_treatment, Rng& rng,
                                          bool strict = true) {
  if (outcomes.size() != profiles.size()) throw InputError("outcome and profile counts differ");
  const std::size_t n = profiles.size();
  // Slots sorted by (covariate, treat_init), never-treated last in each block.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double inf = std::numeric_limits<double>::infinity();
  auto ta = [&](std::size_t i) { return profiles[i].treat_init.value_or(inf); };
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (profiles[a].covariate != profiles[b].covariate) return profiles[a].covariate < profiles[b].covariate;
    return ta(a) < ta(b);
  });
  struct Block {
    double covariate;
    std::size_t begin, end;
  };
  std::vector<Block> blocks;
  for (std::size_t s = 0; s < n; ++s) {
    const double c = profiles[order[s]].covariate;
    if (blocks.empty() || blocks.back().covariate != c) blocks.push_back({c, s, s});
    blocks.back().end = s + 1;
  }
  std::vector<double> slot_ta(n);
  for (std::size_t s = 0; s < n; ++s) slot_ta[s] = ta(order[s]);

  detail::Fenwick alive(n);
  for (std::size_t s = 0; s < n; ++s) alive.add(s, 1);

  std::vector<Subject> out;
  out.reserve(n);
  std::vector<double> part_w;
  std::vector<std::pair<std::size_t, std::size_t>> part_range;
  for (std::size_t i = 0; i < n; ++i) {
    const Outcome& o = outcomes[i];
    std::size_t slot;
    if (!o.event) {
      slot = alive.find(static_cast<long long>(rng.below(static_cast<std::uint64_t>(n - i))));
    } else {
      part_w.clear();
      part_range.clear();
      double total = 0.0;
      for (const auto& b : blocks) {
        auto first = slot_ta.begin() + static_cast<std::ptrdiff_t>(b.begin);
        auto last = slot_ta.begin() + static_cast<std::ptrdiff_t>(b.end);
        const auto cut = static_cast<std::size_t>(
            (strict ? std::lower_bound(first, last, o.event_time) : std::upper_bound(first, last, o.event_time)) -
            slot_ta.begin());
        const double base = std::exp(beta_covariate * b.covariate);
        const double treated = static_cast<double>(alive.prefix(cut) - alive.prefix(b.begin));
        const double untreated = static_cast<double>(alive.prefix(b.end) - alive.prefix(cut));
        part_w.push_back(base * std::exp(beta_treatment) * treated);
        part_range.emplace_back(b.begin, cut);
        part_w.push_back(base * untreated);
        part_range.emplace_back(cut, b.end);
        total += part_w[part_w.size() - 2] + part_w.back();
      }
      double u = rng.uniform() * total;
      std::size_t chosen = part_w.size();
      for (std::size_t k = 0; k < part_w.size(); ++k) {
        if (part_w[k] <= 0) continue;
        chosen = k;
        if (u < part_w[k]) break;
        u -= part_w[k];
      }
      if (chosen == part_w.size()) throw NumericalError("profile pool exhausted");
      const auto [lo, hi] = part_range[chosen];
      const long long count = alive.prefix(hi) - alive.prefix(lo);
      slot = alive.find(alive.prefix(lo) + static_cast<long long>(rng.below(static_cast<std::uint64_t>(count))));
    }
    alive.add(slot, -1);
    const Profile& p = profiles[order[slot]];
    Subject s;
    s.id = std::to_string(i + 1);
    s.followup_end = o.followup();
    s.event = o.event;
    s.treat_init = p.treat_init;
    s.covariates = {p.covariate};
    out.push_back(std::move(s));
  }
  return out;
}

inline constexpr std::string_view kSimCovariate = "L0";

/// Full pipeline for one scenario and seed.
inline Cohort simulate(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto outcomes = gen_outcomes(spec, rng);
  const auto profiles = gen_profiles(spec, rng);
  Cohort c;
  c.covariate_names = {std::string(kSimCovariate)};
  c.subjects = permute_match(outcomes, profiles, spec.beta_covariate, spec.beta_treatment, rng, spec.discretize);
  return c;
}

}  // namespace imt
