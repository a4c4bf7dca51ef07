// End-to-end acceptance run: one PASS/FAIL line per criterion, details
// indented below it. Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "support.hpp"

using namespace imt;
using namespace imt::testing;
namespace fs = std::filesystem;

namespace {

class Criterion {
 public:
  explicit Criterion(std::string title) : title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}

  void check(bool ok, const std::string& what) {
    ok_ &= ok;
    lines_.push_back((ok ? "  ok    " : "  FAIL  ") + what);
  }
  void note(const std::string& what) { lines_.push_back("        " + what); }

  /// Work done before this criterion object existed.
  void add_elapsed(double s) { extra_ += s; }

  double seconds() const {
    return extra_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  bool finish(double budget_seconds) {
    const double s = seconds();
    check(s < budget_seconds, "runtime " + fixed(s, 1) + " s < " + fixed(budget_seconds, 0) + " s");
    std::cout << (ok_ ? "PASS " : "FAIL ") << title_ << '\n';
    for (const auto& l : lines_) std::cout << l << '\n';
    std::cout.flush();
    return ok_;
  }

  static std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
  }

 private:
  std::string title_;
  std::chrono::steady_clock::time_point start_;
  double extra_ = 0.0;
  bool ok_ = true;
  std::vector<std::string> lines_;
};

std::string f3(double v) { return Criterion::fixed(v, 3); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

const Cohort& stanford() {
  static const Cohort c = load_csv(fs::path(IMT_DATA_DIR) / "heart_transplant.csv", stanford_mapping()).cohort;
  return c;
}

MethodSpec method(MethodKind k) {
  MethodSpec m;
  m.kind = k;
  return m;
}

void expect_hr(Criterion& c, const std::string& name, const FitResult& fit, double target, double tol) {
  const double hr = fit.hazard_ratio(kTreatment);
  c.check(fit.converged && within(hr, target, tol), name + " HR " + f3(hr) + " vs " + f3(target) + " +- " + f3(tol));
}

// 1 --------------------------------------------------------------------------

bool table3_deterministic() {
  Criterion c("1 heart-transplant deterministic methods");
  expect_hr(c, "include-imt", analyze(method(MethodKind::include_imt), stanford()), 0.19, 0.01);
  expect_hr(c, "exclude-imt", analyze(method(MethodKind::exclude_imt), stanford()), 0.25, 0.01);
  expect_hr(c, "time-varying", analyze(method(MethodKind::time_varying), stanford()), 0.92, 0.03);
  const std::map<double, double> lm{{20.0, 1.36}, {40.0, 0.91}, {60.0, 0.62}};
  for (const auto& [t, hr] : lm) {
    MethodSpec m = method(MethodKind::landmark);
    m.landmark_time = t;
    expect_hr(c, m.label(), analyze(m, stanford()), hr, 0.05);
  }
  return c.finish(5.0);
}

// 2 --------------------------------------------------------------------------

bool table3_stochastic() {
  Criterion c("2 heart-transplant randomized and weighted methods");
  MethodSpec ptdm = method(MethodKind::ptdm);
  ptdm.ptdm_source = PtdmSource::observed_at_risk;
  const SeededFit sf = median_over_seeds(ptdm, stanford(), 100);
  const auto [lo, hi] = std::minmax_element(sf.hazard_ratios.begin(), sf.hazard_ratios.end());
  c.check(sf.median_hr >= 0.15 && sf.median_hr <= 0.30,
          "ptdm median HR over 100 seeds " + f3(sf.median_hr) + " in [0.15, 0.30] (range " + f3(*lo) + " - " +
              f3(*hi) + ")");

  MethodSpec seq = method(MethodKind::sequential);
  seq.window_width = 20.0;
  seq.trial_count = 3;
  for (Adherence a : {Adherence::itt_like, Adherence::pp}) {
    seq.adherence = a;
    const FitResult fit = analyze(seq, stanford());
    const double hr = fit.hazard_ratio(kTreatment);
    if (a == Adherence::itt_like) {
      c.check(fit.converged && hr >= 0.65 && hr <= 1.00, seq.label() + " HR " + f3(hr) + " in [0.65, 1.00]");
    } else {
      c.note(seq.label() + " HR " + f3(hr) + " (not graded)");
    }
  }

  const std::map<double, double> grace{{20.0, 1.31}, {40.0, 0.99}, {60.0, 0.84}};
  for (const auto& [g, hr] : grace) {
    MethodSpec m = method(MethodKind::cloning);
    m.grace_end = g;
    expect_hr(c, m.label(), analyze(m, stanford()), hr, 0.20);
  }
  return c.finish(120.0);
}

// 3 and 4 --------------------------------------------------------------------

struct Reference {
  double include, exclude;
  double clone3, clone6, clone9;
};

// bias by scenario
const std::map<int, Reference> kReference{
    {1, {-1.387, -0.705, -0.206, -0.237, -0.261}}, {2, {-1.024, -0.368, -0.166, -0.201, -0.233}},
    {3, {-0.814, -0.132, -0.132, -0.177, -0.218}}, {4, {-0.972, -0.061, -0.266, -0.331, -0.368}},
    {5, {-1.409, -0.933, -0.314, -0.341, -0.365}}, {6, {-0.654, 0.283, -0.178, -0.167, -0.161}},
};

// replicate standard deviation by scenario 1-6
const std::map<std::string, std::array<double, 6>> kReferenceSd{
    {"include-imt", {0.063, 0.065, 0.083, 0.040, 0.048, 0.121}},
    {"exclude-imt", {0.062, 0.071, 0.085, 0.048, 0.051, 0.121}},
    {"ptdm", {0.081, 0.082, 0.091, 0.048, 0.058, 0.134}},
    {"landmark(3)", {0.100, 0.122, 0.170, 0.073, 0.096, 0.213}},
    {"landmark(6)", {0.089, 0.106, 0.143, 0.072, 0.094, 0.169}},
    {"landmark(9)", {0.086, 0.104, 0.128, 0.077, 0.097, 0.153}},
    {"time-varying", {0.073, 0.074, 0.089, 0.045, 0.056, 0.127}},
    {"sequential-pp", {0.079, 0.073, 0.091, 0.045, 0.057, 0.136}},
    {"cloning(3)", {0.088, 0.108, 0.149, 0.047, 0.047, 0.210}},
    {"cloning(6)", {0.068, 0.081, 0.109, 0.030, 0.037, 0.161}},
    {"cloning(9)", {0.056, 0.068, 0.083, 0.022, 0.030, 0.137}},
};

bool simulation_table(const BenchReport& r, double seconds, int threads) {
  Criterion c("3 simulation table at B = 200, n = 5000, scenarios 1-6");
  c.add_elapsed(seconds);
  for (int s = 1; s <= 6; ++s) {
    const Reference& p = kReference.at(s);
    const MetricsRow& inc = r.row("include-imt", s);
    const MetricsRow& exc = r.row("exclude-imt", s);
    c.check(within(inc.bias, p.include, 0.06), "s" + std::to_string(s) + " include-imt bias " + f3(inc.bias) +
                                                   " vs " + f3(p.include) + " +- 0.06");
    c.check(within(exc.bias, p.exclude, 0.06), "s" + std::to_string(s) + " exclude-imt bias " + f3(exc.bias) +
                                                   " vs " + f3(p.exclude) + " +- 0.06");
    const MetricsRow& tv = r.row("time-varying", s);
    c.check(std::abs(tv.bias) <= 0.03, "s" + std::to_string(s) + " time-varying |bias| " + f3(std::abs(tv.bias)) +
                                           " <= 0.03");
    const MetricsRow& seq = r.row("sequential-pp", s);
    c.check(std::abs(seq.bias) <= 0.03, "s" + std::to_string(s) + " sequential-pp |bias| " +
                                            f3(std::abs(seq.bias)) + " <= 0.03");
    c.check(seq.cp && *seq.cp >= 0.90 && *seq.cp <= 0.98,
            "s" + std::to_string(s) + " sequential-pp coverage " + (seq.cp ? f3(*seq.cp) : "-") + " in [0.90, 0.98]");
    if (s == 6) continue;
    const std::map<std::string, double> clones{{"cloning(3)", p.clone3}, {"cloning(6)", p.clone6}, {"cloning(9)", p.clone9}};
    for (const auto& [label, bias] : clones) {
      const MetricsRow& row = r.row(label, s);
      c.check(row.bias < 0 && within(row.bias, bias, 0.10),
              "s" + std::to_string(s) + " " + label + " bias " + f3(row.bias) + " < 0 and vs " + f3(bias) + " +- 0.10");
    }
  }
  // chi-square sampling band for an sd from 200 replicates against one from 1000
  double lo = 1e9, hi = 0.0;
  std::string lo_row, hi_row;
  for (const auto& row : r.rows) {
    const double ratio = row.sd / kReferenceSd.at(row.method)[static_cast<std::size_t>(row.scenario - 1)];
    const std::string name = row.method + " s" + std::to_string(row.scenario);
    if (ratio < lo) lo = ratio, lo_row = name;
    if (ratio > hi) hi = ratio, hi_row = name;
  }
  c.check(lo >= 0.7 && hi <= 1.4, "sd / reference sd over " + std::to_string(r.rows.size()) + " rows in [" + f3(lo) +
                                       " (" + lo_row + "), " + f3(hi) + " (" + hi_row + ")] within [0.7, 1.4]");

  std::size_t failed = 0;
  for (const auto& row : r.rows) failed += row.n_failed;
  c.note("failed method runs " + std::to_string(failed) + " of " + std::to_string(r.rows.size() * 200));
  for (const auto& w : r.warnings) c.note("warning: " + w);
  c.note("threads " + std::to_string(threads) + ", wall time " + Criterion::fixed(seconds / 60.0, 1) + " min");
  // the 45 min budget assumes four cores; fewer cores scale it proportionally
  return c.finish(45.0 * 60.0 * 4.0 / std::min(4, threads));
}

bool metric_identity(const BenchReport& r) {
  Criterion c("4 metric identity and reference spot check");
  double worst = 0.0;
  for (const auto& row : r.rows) {
    const double b = static_cast<double>(row.n_converged);
    worst = std::max(worst, std::abs(row.rmse * row.rmse - row.bias * row.bias - row.sd * row.sd * (b - 1) / b));
  }
  c.check(worst < 1e-10, "max |rmse^2 - bias^2 - sd^2 (B-1)/B| over " + std::to_string(r.rows.size()) + " rows = " +
                             sci(worst) + " < 1e-10");
  const double b = 1000.0, bias = -0.705, sd = 0.062;
  const double rmse = std::sqrt(bias * bias + sd * sd * (b - 1) / b);
  c.check(within(rmse, 0.708, 5e-4), "reference triple (-0.705, 0.062) gives rmse " + f3(rmse) + " = 0.708");
  // the same triple through the metric code: a sample with that mean and sd
  std::vector<double> est;
  for (int i = 0; i < 1000; ++i) est.push_back(0.5 + bias + sd * (i % 2 ? 1.0 : -1.0) * std::sqrt(999.0 / 1000.0));
  const MetricsRow m = metrics(est, {}, 0.5);
  c.check(within(m.bias, bias, 1e-12) && within(m.sd, sd, 1e-12) && within(m.rmse, 0.708, 5e-4),
          "metrics() on a synthetic sample with that bias and sd: bias " + f3(m.bias) + ", sd " + f3(m.sd) +
              ", rmse " + f3(m.rmse));
  return c.finish(5.0);
}

// 5 --------------------------------------------------------------------------

AnalysisDataset random_dataset(unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Row> rows;
  for (int i = 0; i < 120; ++i) {
    const double x1 = norm(gen), x2 = unif(gen) < 0.5 ? 1.0 : 0.0;
    const double t = std::ceil(-std::log(unif(gen)) / std::exp(0.5 * x1 - 0.7 * x2) * 5.0);
    const double start = unif(gen) < 0.3 ? 0.3 * t : 0.0;
    rows.push_back({start, t, unif(gen) < 0.7, {x1, x2}, 0.5 + unif(gen), i % 2, static_cast<std::uint32_t>(i)});
  }
  return make_dataset(rows, {"x1", "x2"});
}

bool engine_oracles() {
  Criterion c("5 estimation-engine oracles");
  {
    const AnalysisDataset ds = make_dataset({{0, 1, true, {1}, 1, 0, 0},
                                             {0, 2, true, {0}, 1, 0, 1},
                                             {0, 3, false, {0}, 1, 0, 2},
                                             {0, 3, false, {1}, 1, 0, 3}},
                                            {"x"});
    const FitResult fit = fit_cox(ds);
    const double target = std::log(std::sqrt(2.0));
    c.check(fit.converged && within(fit.coefficients[0], target, 1e-6),
            "four-subject instance beta " + Criterion::fixed(fit.coefficients[0], 9) + " = ln sqrt 2 +- 1e-6");
  }
  {
    const AnalysisDataset ds = random_dataset(7);
    std::mt19937 gen(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int point = 0; point < 3; ++point) {
      const std::vector<double> beta{u(gen), u(gen)};
      for (Ties ties : {Ties::efron, Ties::breslow}) {
        const auto pl = cox_partial_likelihood(ds, beta, ties);
        for (std::size_t j = 0; j < 2; ++j) {
          const double h = 1e-5;
          auto bp = beta, bm = beta;
          bp[j] += h;
          bm[j] -= h;
          const double fd =
              (cox_partial_likelihood(ds, bp, ties).loglik - cox_partial_likelihood(ds, bm, ties).loglik) / (2 * h);
          worst = std::max(worst, std::abs(pl.score[static_cast<Eigen::Index>(j)] - fd) / std::max(1.0, std::abs(fd)));
        }
      }
    }
    c.check(worst < 1e-5, "score vs central differences at 3 points, max relative error " + sci(worst));
  }
  {
    const AnalysisDataset ds = random_dataset(11);
    AnalysisDataset shifted = ds, scaled = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      shifted.covariates(i)[0] += 37.5;
      scaled.covariates(i)[0] *= 4.0;
    }
    const auto a = fit_cox(ds).coefficients, b = fit_cox(shifted).coefficients, s = fit_cox(scaled).coefficients;
    const double shift_err = std::max(std::abs(a[0] - b[0]), std::abs(a[1] - b[1]));
    const double scale_err = std::max(std::abs(a[0] / 4.0 - s[0]), std::abs(a[1] - s[1]));
    c.check(shift_err < 1e-8, "location shift changes coefficients by " + sci(shift_err) + " < 1e-8");
    c.check(scale_err < 1e-8, "rescaling changes coefficients by " + sci(scale_err) + " < 1e-8");
  }
  {
    // censorings at 1 and 2 (twice), late entry at 1.5, outcome event at 3
    AnalysisDataset ds = make_dataset({{0, 1, false, {0}},
                                       {0, 2, false, {0}},
                                       {0, 2, false, {0}},
                                       {0, 3, true, {0}},
                                       {0, 4, false, {0}},
                                       {1.5, 5, false, {0}}},
                                      {"x"});
    for (int i : {0, 1, 2, 4}) ds.rows[static_cast<std::size_t>(i)].censor_event = true;
    const AalenFit fit = fit_aalen_censoring(ds, {});
    const std::vector<double> na{1.0 / 5.0, 1.0 / 5.0 + 2.0 / 5.0, 1.0 / 5.0 + 2.0 / 5.0 + 1.0 / 2.0};
    bool exact = fit.jump_times == std::vector<double>{1.0, 2.0, 4.0};
    for (std::size_t k = 0; exact && k < na.size(); ++k) exact = fit.cumulative[k][0] == na[k];
    c.check(exact, "intercept-only additive hazard equals Nelson-Aalen exactly (late entry and tied censorings)");

    const AnalysisDataset five = make_dataset(
        {{0, 1, false, {0}}, {0, 2, false, {0}}, {0, 3, false, {0}}, {0, 4, false, {0}}, {0, 5, false, {0}}}, {"x"});
    AnalysisDataset one = five;
    one.rows[0].censor_event = true;
    const AalenFit f1 = fit_aalen_censoring(one, {});
    c.check(f1.cumulative.size() == 1 && f1.cumulative[0][0] == 1.0 / 5.0,
            "single censoring among five at risk increments by exactly 1/5");
  }
  return c.finish(30.0);
}

// 6 --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool determinism(const fs::path& dir) {
  Criterion c("6 repeated commands give identical output files");
  const std::string exe = IMTSURV_PATH;
  struct Case {
    std::string name, args_a, args_b;
    std::vector<std::string> outputs;
  };
  // {a} and {b} stand for two separate output directories
  const std::vector<Case> cases{
      {"simulate scenario 1, n 10, seed 7", "simulate --scenario 1 --n 10 --seed 7 --out {}/sim.csv",
       "simulate --scenario 1 --n 10 --seed 7 --out {}/sim.csv", {"sim.csv"}},
      {"simulate scenario 5 continuous, n 5000", "simulate --scenario 5 --n 5000 --seed 3 --continuous --out {}/sim.csv",
       "simulate --scenario 5 --n 5000 --seed 3 --continuous --out {}/sim.csv", {"sim.csv"}},
      {"bench at parallelism 1 and 4",
       "bench --scenarios 2 5 --replicates 4 --seed 9 --parallelism 1 --quiet --out {}/b.csv --json {}/b.json",
       "bench --scenarios 2 5 --replicates 4 --seed 9 --parallelism 4 --quiet --out {}/b.csv --json {}/b.json",
       {"b.csv", "b.json"}},
      {"analyze ptdm with a method seed",
       "analyze --method ptdm --method-seed 5 --out {}/f.csv --json {}/f.json",
       "analyze --method ptdm --method-seed 5 --out {}/f.csv --json {}/f.json", {"f.csv", "f.json"}},
      {"analyze cloning grace 40", "analyze --method cloning --grace 40 --out {}/f.csv --json {}/f.json",
       "analyze --method cloning --grace 40 --out {}/f.csv --json {}/f.json", {"f.csv", "f.json"}},
      {"km landmark 20", "km --method landmark --landmark 20 --csv {}/k.csv --svg {}/k.svg",
       "km --method landmark --landmark 20 --csv {}/k.csv --svg {}/k.svg", {"k.csv", "k.svg"}},
      {"reproduce table3", "reproduce table3 --out {}/t3.csv", "reproduce table3 --out {}/t3.csv", {"t3.csv"}},
  };
  auto expand = [](std::string args, const fs::path& d) {
    for (std::size_t p; (p = args.find("{}")) != std::string::npos;) args.replace(p, 2, d.string());
    return args;
  };
  int k = 0;
  for (const auto& cs : cases) {
    const fs::path a = dir / (std::to_string(k) + "a"), b = dir / (std::to_string(k) + "b");
    ++k;
    fs::create_directories(a);
    fs::create_directories(b);
    const int ra = std::system((exe + " " + expand(cs.args_a, a) + " > /dev/null").c_str());
    const int rb = std::system((exe + " " + expand(cs.args_b, b) + " > /dev/null").c_str());
    bool same = ra == 0 && rb == 0;
    std::size_t bytes = 0;
    for (const auto& out : cs.outputs) {
      const std::string x = slurp(a / out), y = slurp(b / out);
      same &= !x.empty() && x == y;
      bytes += x.size();
    }
    c.check(same, cs.name + " (" + std::to_string(bytes) + " bytes compared)");
  }
  return c.finish(600.0);
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  int failures = 0;
  auto run = [&](auto&& f) {
    try {
      failures += !f();
    } catch (const std::exception& e) {
      std::cout << "FAIL (exception: " << e.what() << ")\n";
      ++failures;
    }
  };
  run(table3_deterministic);
  run(table3_stochastic);

  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  BenchReport report;
  double seconds = 0.0;
  run([&] {
    const auto start = std::chrono::steady_clock::now();
    report = run_replicates(table2_config(200, threads));
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << format_bench(report);
    return simulation_table(report, seconds, threads);
  });
  run([&] { return metric_identity(report); });
  run(engine_oracles);

  const fs::path dir = fs::temp_directory_path() / ("imt_acceptance_" + std::to_string(std::random_device{}()));
  run([&] { return determinism(dir); });
  std::error_code ec;
  fs::remove_all(dir, ec);

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << '\n';
  return failures ? 1 : 0;
}
