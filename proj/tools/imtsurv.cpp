#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "imt/imt.hpp"

#ifndef IMT_DATA_DIR
#define IMT_DATA_DIR "data"
#endif

namespace {

using namespace imt;

enum ExitCode { kOk = 0, kInput = 1, kNumerical = 2 };

const std::string kHeartTransplant = std::string(IMT_DATA_DIR) + "/heart_transplant.csv";

struct DataArgs {
  std::string path = kHeartTransplant;
  std::string format = "auto";  // auto | subjects | stanford

  void add(CLI::App* cmd) {
    cmd->add_option("--data", path, "input CSV (default: the bundled heart transplant file)");
    cmd->add_option("--format", format, "input layout")
        ->check(CLI::IsMember({"auto", "subjects", "stanford"}));
  }

  LoadedCohort load() const {
    const CsvTable table = read_csv(path);
    std::string f = format;
    if (f == "auto") f = table.has_column("survtime") ? "stanford" : "subjects";
    LoadedCohort loaded = f == "stanford" ? cohort_from_table(table, stanford_mapping())
                                          : cohort_from_table(table, subject_mapping(table));
    require_valid(loaded.cohort);
    return loaded;
  }
};

struct MethodArgs {
  std::string method = "include-imt";
  std::string config;
  std::optional<double> landmark, grace, window;
  std::optional<int> trials;
  std::string adherence = "itt-like";
  std::string ptdm_source = "observed";
  std::string convention;
  std::uint64_t seed = 1;
  std::optional<double> cap;
  bool unadjusted = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--method", method, "include-imt, exclude-imt, ptdm, landmark, time-varying, sequential, cloning");
    cmd->add_option("--method-config", config, "method spec JSON (overrides the flags below)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--landmark", landmark, "landmark time");
    cmd->add_option("--grace", grace, "grace period end (cloning, uniform-grace PTDM)");
    cmd->add_option("--window", window, "sequential enrollment window width");
    cmd->add_option("--trials", trials, "number of sequential trials");
    cmd->add_option("--adherence", adherence, "sequential analysis")->check(CLI::IsMember({"itt-like", "pp"}));
    cmd->add_option("--ptdm-source", ptdm_source, "PTDM imputation pool")
        ->check(CLI::IsMember({"observed", "uniform-grace", "observed-at-risk"}));
    cmd->add_option("--weight-convention", convention, "censoring weights")
        ->check(CLI::IsMember({"exponential", "product-limit"}));
    cmd->add_option("--weight-cap", cap, "censoring weight cap");
    cmd->add_option("--method-seed", seed, "seed for randomized methods");
    cmd->add_flag("--unadjusted", unadjusted, "fit treatment only");
  }

  MethodSpec spec() const {
    if (!config.empty()) return method_from_json(read_json(config));
    nlohmann::json j{{"kind", method}, {"adherence_mode", adherence}, {"ptdm_source", ptdm_source}, {"rng_seed", seed}};
    if (landmark) j["landmark_time"] = *landmark;
    if (grace) j["grace_end"] = *grace;
    if (window) j["window_width"] = *window;
    if (trials) j["trial_count"] = *trials;
    if (cap) j["weight_cap"] = *cap;
    if (!convention.empty()) j["weight_convention"] = convention;
    if (unadjusted) j["adjust_baseline"] = false;
    return method_from_json(j);
  }
};

CoxOptions cox_options(const std::string& ties) {
  CoxOptions o;
  o.ties = ties == "breslow" ? Ties::breslow : Ties::efron;
  return o;
}

template <class F>
void write_file(const std::string& path, F&& body) {
  if (path.empty()) return;
  OutputFile out(path);
  body(out.stream());
  out.commit();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int run_simulate(int id, const std::string& config, std::optional<int> n, std::uint64_t seed, bool continuous,
                 const std::string& out) {
  ScenarioSpec spec = config.empty() ? scenario(id) : scenario_from_json(read_json(config));
  if (n) spec.n = *n;
  if (continuous) spec.discretize = false;
  spec.validate();
  const Cohort cohort = simulate(spec, seed);
  if (out.empty()) {
    write_subjects_csv(std::cout, cohort);
  } else {
    write_file(out, [&](std::ostream& os) { write_subjects_csv(os, cohort); });
  }
  return kOk;
}

int run_analyze(const DataArgs& data, const MethodArgs& margs, const std::string& ties, const std::string& out,
                const std::string& json_out) {
  const LoadedCohort loaded = data.load();
  const MethodSpec spec = margs.spec();
  const FitResult fit = analyze(spec, loaded.cohort, cox_options(ties));
  std::cout << spec.label() << " (n = " << loaded.cohort.size() << ", events = " << fit.n_events << ")\n"
            << format_fit(fit);
  write_file(out, [&](std::ostream& os) { write_fit_csv(os, fit); });
  write_file(json_out, [&](std::ostream& os) { os << fit_to_json(fit).dump(2) << '\n'; });
  return kOk;
}

void emit_bench(const BenchReport& report, const std::string& out, const std::string& json_out) {
  std::cout << format_bench(report);
  print_warnings(report.warnings);
  write_file(out, [&](std::ostream& os) { write_bench_csv(os, report); });
  write_file(json_out, [&](std::ostream& os) { os << bench_report_to_json(report).dump(2) << '\n'; });
}

BenchReport run_bench_config(const BenchConfig& cfg, bool quiet) {
  auto progress = [&](std::size_t done, std::size_t total) {
    if (!quiet && (done % 10 == 0 || done == total)) std::cerr << "\r" << done << " / " << total << std::flush;
  };
  BenchReport r = run_replicates(cfg, progress);
  if (!quiet) std::cerr << '\n';
  return r;
}

int run_km(const DataArgs& data, const MethodArgs& margs, const std::string& group, const std::string& csv,
           const std::string& svg) {
  const LoadedCohort loaded = data.load();
  const MethodSpec spec = margs.spec();
  const AnalysisDataset ds = prepare(spec, loaded.cohort);
  const auto curves = km_estimate(ds, group);
  for (const auto& [level, c] : curves) {
    std::cout << group << " = " << format_double(level) << ": " << c.times.size() << " distinct times, final survival "
              << format_double(c.survival.empty() ? 1.0 : c.survival.back()) << '\n';
  }
  if (csv.empty() && svg.empty()) write_km_csv(std::cout, curves);
  write_file(csv, [&](std::ostream& os) { write_km_csv(os, curves); });
  write_file(svg, [&](std::ostream& os) { write_km_svg(os, curves, "Kaplan-Meier by " + group + " (" + spec.label() + ")"); });
  return kOk;
}

int run_table3(const std::string& path, const std::string& only, int seeds, const std::string& ties,
               const std::string& out) {
  DataArgs data;
  data.path = path;
  data.format = "stanford";
  const LoadedCohort loaded = data.load();
  const CoxOptions cox = cox_options(ties);
  std::ostringstream csv;
  csv << "method,term,coef,se,hr,lower,upper,p\n";
  bool any = false;
  for (const MethodSpec& spec : table3_methods()) {
    if (!only.empty() && parse_method_kind(only) != spec.kind) continue;
    any = true;
    FitResult fit;
    std::string title = spec.label();
    if (spec.kind == MethodKind::ptdm) {
      fit = median_over_seeds(spec, loaded.cohort, seeds, 1, cox).fit;
      title += " (median of " + std::to_string(seeds) + " seeds: " + fit.meta.at("seed") + ")";
    } else {
      fit = analyze(spec, loaded.cohort, cox);
    }
    std::cout << title << '\n' << format_fit(fit) << '\n';
    for (const auto& r : coefficient_table(fit)) {
      csv << csv_escape(spec.label()) << ',' << csv_escape(r.name) << ',' << format_double(r.coef) << ','
          << format_double(r.se) << ',' << format_double(r.hr) << ',' << format_double(r.lower) << ','
          << format_double(r.upper) << ',' << format_double(r.p) << '\n';
    }
  }
  if (!any) throw InputError("no canned analysis for method '" + only + "'");
  write_file(out, [&](std::ostream& os) { os << csv.str(); });
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Survival analyses under immortal time: simulation, method comparison, benchmarks"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "write a simulated cohort as subject CSV");
  int sim_id = 1;
  std::string sim_config, sim_out;
  std::optional<int> sim_n;
  std::uint64_t sim_seed = 1;
  bool sim_continuous = false;
  sim->add_option("--scenario", sim_id, "scenario 1-6")->check(CLI::Range(1, 6));
  sim->add_option("--config", sim_config, "scenario spec JSON")->check(CLI::ExistingFile);
  sim->add_option("--n", sim_n, "cohort size")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_flag("--continuous", sim_continuous, "keep continuous times instead of the monthly grid");
  sim->add_option("--out", sim_out, "output CSV (default stdout)");

  // analyze
  auto* ana = app.add_subcommand("analyze", "fit one method to one dataset");
  DataArgs ana_data;
  MethodArgs ana_method;
  std::string ana_ties = "efron", ana_out, ana_json;
  ana_data.add(ana);
  ana_method.add(ana);
  ana->add_option("--ties", ana_ties)->check(CLI::IsMember({"efron", "breslow"}));
  ana->add_option("--out", ana_out, "coefficient table CSV");
  ana->add_option("--json", ana_json, "fit as JSON");

  // bench
  auto* ben = app.add_subcommand("bench", "replicated simulation benchmark");
  std::string ben_config, ben_out, ben_json;
  std::vector<int> ben_scenarios;
  std::optional<int> ben_b, ben_par;
  std::optional<std::uint64_t> ben_seed;
  bool ben_quiet = false;
  ben->add_option("--config", ben_config, "bench config JSON")->check(CLI::ExistingFile);
  ben->add_option("--scenarios", ben_scenarios, "scenario ids (default 1-6)")->delimiter(',');
  ben->add_option("--replicates", ben_b, "replicates per scenario")->check(CLI::PositiveNumber);
  ben->add_option("--seed", ben_seed, "master seed");
  ben->add_option("--parallelism", ben_par, "worker threads")->check(CLI::PositiveNumber);
  ben->add_option("--out", ben_out, "report CSV");
  ben->add_option("--json", ben_json, "report JSON");
  ben->add_flag("--quiet", ben_quiet, "no progress output");

  // km
  auto* km = app.add_subcommand("km", "Kaplan-Meier curves per group");
  DataArgs km_data;
  MethodArgs km_method;
  std::string km_group{kTreatment}, km_csv, km_svg;
  km_data.add(km);
  km_method.add(km);
  km->add_option("--group", km_group, "grouping covariate");
  km->add_option("--csv", km_csv, "curves CSV");
  km->add_option("--svg", km_svg, "step plot SVG");

  // reproduce
  auto* rep = app.add_subcommand("reproduce", "canned configurations");
  rep->require_subcommand(1);
  auto* t2 = rep->add_subcommand("table2", "simulation comparison, scenarios 1-6");
  int t2_b = 200, t2_par = 1;
  std::uint64_t t2_seed = BenchConfig{}.master_seed;
  std::string t2_out, t2_json;
  bool t2_quiet = false;
  t2->add_option("--replicates", t2_b)->check(CLI::PositiveNumber);
  t2->add_option("--parallelism", t2_par)->check(CLI::PositiveNumber);
  t2->add_option("--seed", t2_seed, "master seed");
  t2->add_option("--out", t2_out, "report CSV");
  t2->add_option("--json", t2_json, "report JSON");
  t2->add_flag("--quiet", t2_quiet);
  auto* t3 = rep->add_subcommand("table3", "heart-transplant comparison");
  std::string t3_data = kHeartTransplant, t3_method, t3_out, t3_ties = "efron";
  int t3_seeds = 100;
  t3->add_option("--data", t3_data, "heart transplant CSV");
  t3->add_option("--method", t3_method, "run one method only");
  t3->add_option("--ptdm-seeds", t3_seeds, "PTDM seeds to take the median over")->check(CLI::PositiveNumber);
  t3->add_option("--ties", t3_ties)->check(CLI::IsMember({"efron", "breslow"}));
  t3->add_option("--out", t3_out, "coefficient tables CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*sim) return run_simulate(sim_id, sim_config, sim_n, sim_seed, sim_continuous, sim_out);
    if (*ana) return run_analyze(ana_data, ana_method, ana_ties, ana_out, ana_json);
    if (*ben) {
      BenchConfig cfg = ben_config.empty() ? table2_config() : bench_config_from_json(read_json(ben_config));
      if (!ben_scenarios.empty()) {
        cfg.scenarios.clear();
        for (int id : ben_scenarios) cfg.scenarios.push_back(scenario(id));
      }
      if (ben_b) cfg.replicates = *ben_b;
      if (ben_seed) cfg.master_seed = *ben_seed;
      if (ben_par) cfg.parallelism = *ben_par;
      emit_bench(run_bench_config(cfg, ben_quiet), ben_out, ben_json);
      return kOk;
    }
    if (*km) return run_km(km_data, km_method, km_group, km_csv, km_svg);
    if (*t2) {
      BenchConfig cfg = table2_config(t2_b, t2_par);
      cfg.master_seed = t2_seed;
      emit_bench(run_bench_config(cfg, t2_quiet), t2_out, t2_json);
      return kOk;
    }
    if (*t3) return run_table3(t3_data, t3_method, t3_seeds, t3_ties, t3_out);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kOk;
}
