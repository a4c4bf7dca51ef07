#pragma once

// CSV ingestion and emission, JSON specs, fit tables and survival-curve plots.

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "imt/core.hpp"
#include "imt/cox.hpp"
#include "imt/errors.hpp"
#include "imt/methods.hpp"
#include "imt/simgen.hpp"
#include "imt/types.hpp"

namespace imt {

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw InputError("missing column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

/// RFC 4180-style reader: quoted fields, doubled quotes, CRLF or LF.
inline CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      if (t.header.empty() && !any) {
        t.header = std::move(record);
        any = true;
      } else {
        t.rows.push_back(std::move(record));
      }
    }
    record.clear();
  };
  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw InputError("unterminated quoted field");
  if (field_started || !record.empty()) end_record();
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.header.size()) {
      throw InputError("row " + std::to_string(i + 1) + " has " + std::to_string(t.rows[i].size()) +
                       " fields, header has " + std::to_string(t.header.size()));
    }
  }
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return parse_csv(in);
}

enum class TimeUnit { days, months, abstract };

struct CovariateColumn {
  std::string name;                 // covariate name in the cohort
  std::string column;               // source column
  std::map<std::string, double> levels;  // empty: numeric column
};

/// Source columns for each subject field.
struct ColumnMapping {
  std::string id = "id";
  bool id_from_row_number = false;  // when the id column is not unique
  std::string followup_end = "followup_end";
  std::string event = "event";
  std::string treat_init = "treat_init";
  // Optional column marking ever-treated rows; when set, such rows must have
  // a waiting time and other rows are never-treated.
  std::optional<std::string> treated_column;
  std::string treated_value;
  std::vector<CovariateColumn> covariates;
  std::set<std::string> event_true{"1", "true", "TRUE", "yes"};
  std::set<std::string> event_false{"0", "false", "FALSE", "no"};
  TimeUnit time_unit = TimeUnit::abstract;

  void validate() const {
    std::set<std::string> used;
    auto use = [&](const std::string& c) {
      if (c.empty()) throw InputError("required field not mapped");
      if (!used.insert(c).second) throw InputError("column '" + c + "' mapped twice");
    };
    if (!id_from_row_number) use(id);
    use(followup_end);
    use(event);
    use(treat_init);
    if (treated_column) use(*treated_column);
    for (const auto& c : covariates) use(c.column);
  }
};

/// Mapping for the public heart-transplant file (id, acceptyear, age,
/// survived, survtime, prior, transplant, wait). Candidates deselected while
/// waiting appear there as censored controls; they are taken as such. The
/// file's id column repeats four values, so subjects are keyed by row number.
inline ColumnMapping stanford_mapping() {
  ColumnMapping m;
  m.id_from_row_number = true;
  m.followup_end = "survtime";
  m.event = "survived";
  m.event_true = {"dead"};
  m.event_false = {"alive"};
  m.treat_init = "wait";
  m.treated_column = "transplant";
  m.treated_value = "treatment";
  m.covariates = {{"age", "age", {}}, {"prior", "prior", {{"yes", 1.0}, {"no", 0.0}}}};
  m.time_unit = TimeUnit::days;
  return m;
}

/// Mapping for the tool's own subject CSV: every column after treat_init is
/// a numeric covariate.
inline ColumnMapping subject_mapping(const CsvTable& t) {
  ColumnMapping m;
  const std::size_t first = t.column(m.treat_init) + 1;
  for (std::size_t j = first; j < t.header.size(); ++j) m.covariates.push_back({t.header[j], t.header[j], {}});
  return m;
}

struct LoadedCohort {
  Cohort cohort;
  ValidationReport report;
};

inline LoadedCohort cohort_from_table(const CsvTable& t, const ColumnMapping& m) {
  m.validate();
  if (t.rows.empty()) throw InputError("no data rows");
  const std::optional<std::size_t> cid = m.id_from_row_number ? std::nullopt : std::optional(t.column(m.id));
  const std::size_t cfu = t.column(m.followup_end), cev = t.column(m.event),
                    cta = t.column(m.treat_init);
  const std::optional<std::size_t> ctr = m.treated_column ? std::optional(t.column(*m.treated_column)) : std::nullopt;
  std::vector<std::size_t> ccov;
  LoadedCohort out;
  for (const auto& c : m.covariates) {
    ccov.push_back(t.column(c.column));
    out.cohort.covariate_names.push_back(c.name);
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    Subject s;
    s.id = cid ? row[*cid] : std::to_string(i + 1);
    const std::string where = "row " + std::to_string(i + 1) + " (id '" + s.id + "')";
    auto fu = parse_double(row[cfu]);
    if (!fu) throw InputError(where + ": unparseable follow-up time '" + row[cfu] + "'");
    s.followup_end = *fu;
    if (m.event_true.count(row[cev])) {
      s.event = true;
    } else if (m.event_false.count(row[cev])) {
      s.event = false;
    } else {
      throw InputError(where + ": unrecognized event code '" + row[cev] + "'");
    }
    const auto ta = parse_double(row[cta]);
    if (!ta && !row[cta].empty()) throw InputError(where + ": unparseable treatment time '" + row[cta] + "'");
    if (ctr) {
      if (row[*ctr] == m.treated_value) {
        if (!ta) throw InputError(where + ": ever-treated row has no waiting time");
        s.treat_init = ta;
      }
    } else {
      s.treat_init = ta;
    }
    for (std::size_t j = 0; j < ccov.size(); ++j) {
      const auto& spec = m.covariates[j];
      const std::string& raw = row[ccov[j]];
      if (spec.levels.empty()) {
        auto v = parse_double(raw);
        if (!v) throw InputError(where + ": unparseable covariate " + spec.name + " '" + raw + "'");
        s.covariates.push_back(*v);
      } else {
        auto it = spec.levels.find(raw);
        if (it == spec.levels.end()) throw InputError(where + ": unknown level '" + raw + "' for " + spec.name);
        s.covariates.push_back(it->second);
      }
    }
    out.cohort.subjects.push_back(std::move(s));
  }
  out.report = validate(out.cohort);
  return out;
}

inline LoadedCohort load_csv(const std::filesystem::path& path, const ColumnMapping& m) {
  return cohort_from_table(read_csv(path), m);
}

/// Reads the tool's own subject CSV schema.
inline LoadedCohort load_subjects_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  return cohort_from_table(t, subject_mapping(t));
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline void write_subjects_csv(std::ostream& os, const Cohort& c) {
  os << "id,followup_end,event,treat_init";
  for (const auto& n : c.covariate_names) os << ',' << csv_escape(n);
  os << '\n';
  for (const auto& s : c.subjects) {
    os << csv_escape(s.id) << ',' << format_double(s.followup_end) << ',' << (s.event ? 1 : 0) << ',';
    if (s.treat_init) os << format_double(*s.treat_init);
    for (double v : s.covariates) os << ',' << format_double(v);
    os << '\n';
  }
}

/// Writes to a sibling temporary and renames on commit; an uncommitted file
/// is removed, so failed runs leave no partial output.
class OutputFile {
 public:
  explicit OutputFile(std::filesystem::path path) : path_(std::move(path)), tmp_(path_) {
    tmp_ += ".partial";
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw InputError("cannot write '" + path_.string() + "'");
  }
  OutputFile(const OutputFile&) = delete;
  OutputFile& operator=(const OutputFile&) = delete;
  ~OutputFile() {
    if (committed_) return;
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }

  std::ostream& stream() { return out_; }

  void commit() {
    out_.close();
    if (!out_) throw InputError("failed writing '" + path_.string() + "'");
    std::filesystem::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  std::filesystem::path path_, tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

// ---- fit tables ---------------------------------------------------------

/// Two-sided Wald p-value.
inline double wald_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

struct CoefficientRow {
  std::string name;
  double coef, se, hr, lower, upper, z, p;
  bool robust;
};

/// Coefficient table using the robust SE when present.
inline std::vector<CoefficientRow> coefficient_table(const FitResult& fit) {
  std::vector<CoefficientRow> rows;
  for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
    const bool robust = fit.robust_se.has_value();
    const double b = fit.coefficients[j];
    const double se = robust ? (*fit.robust_se)[j] : fit.model_se[j];
    rows.push_back({fit.names[j], b, se, std::exp(b), std::exp(b - 1.96 * se), std::exp(b + 1.96 * se), b / se,
                    wald_p(b / se), robust});
  }
  return rows;
}

inline void write_fit_csv(std::ostream& os, const FitResult& fit) {
  os << "term,coef,se,robust,hr,lower95,upper95,z,p\n";
  for (const auto& r : coefficient_table(fit)) {
    os << csv_escape(r.name) << ',' << format_double(r.coef) << ',' << format_double(r.se) << ','
       << (r.robust ? 1 : 0) << ',' << format_double(r.hr) << ',' << format_double(r.lower) << ','
       << format_double(r.upper) << ',' << format_double(r.z) << ',' << format_double(r.p) << '\n';
  }
}

inline std::string format_p(double p) {
  if (p < 1e-4) return "< 0.0001";
  std::ostringstream os;
  os << std::fixed << std::setprecision(p < 1e-3 ? 4 : 3) << p;
  return os.str();
}

/// Human-readable HR table (2 decimals).
inline std::string format_fit(const FitResult& fit) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "term" << std::right << std::setw(8) << "HR" << std::setw(16) << "95% CI"
     << std::setw(12) << "p" << '\n';
  for (const auto& r : coefficient_table(fit)) {
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(2) << r.lower << ", " << r.upper;
    os << std::left << std::setw(14) << r.name << std::right << std::fixed << std::setprecision(2) << std::setw(8)
       << r.hr << std::setw(16) << ci.str() << std::setw(12) << format_p(r.p) << '\n';
  }
  os << "events " << fit.n_events << ", rows " << fit.n_rows << ", iterations " << fit.iterations
     << (fit.converged ? "" : " (not converged)") << '\n';
  for (const auto& w : fit.warnings) os << "warning: " << w << '\n';
  return os.str();
}

// ---- survival curves ----------------------------------------------------

inline void write_km_csv(std::ostream& os, const std::map<double, SurvivalCurve>& curves) {
  os << "group,time,survival,at_risk,events\n";
  for (const auto& [level, c] : curves) {
    for (std::size_t k = 0; k < c.times.size(); ++k) {
      os << format_double(level) << ',' << format_double(c.times[k]) << ',' << format_double(c.survival[k]) << ','
         << format_double(c.at_risk[k]) << ',' << format_double(c.events[k]) << '\n';
    }
  }
}

/// Step plot; each curve's vertices carry the exact step values in data-*
/// attributes so the SVG can be checked against the CSV.
inline void write_km_svg(std::ostream& os, const std::map<double, SurvivalCurve>& curves,
                         const std::string& title = "Kaplan-Meier") {
  const double w = 640, h = 420, ml = 60, mr = 20, mt = 40, mb = 50;
  double tmax = 0.0;
  for (const auto& [l, c] : curves) tmax = std::max(tmax, c.times.back());
  if (!(tmax > 0)) tmax = 1.0;
  auto px = [&](double t) { return ml + (w - ml - mr) * t / tmax; };
  auto py = [&](double s) { return mt + (h - mt - mb) * (1.0 - s); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
     << "</text>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << w - mr << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << ml << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double s = k / 4.0;
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(s) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << s
       << "</text>\n";
    const double t = tmax * k / 4.0;
    os << "<text x=\"" << px(t) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << format_double(t) << "</text>\n";
  }
  std::size_t idx = 0;
  for (const auto& [level, c] : curves) {
    std::ostringstream pts, times, surv;
    double prev = 1.0;
    for (std::size_t k = 0; k < c.times.size(); ++k) {
      pts << px(c.times[k]) << ',' << py(prev) << ' ' << px(c.times[k]) << ',' << py(c.survival[k]) << ' ';
      prev = c.survival[k];
      times << (k ? " " : "") << format_double(c.times[k]);
      surv << (k ? " " : "") << format_double(c.survival[k]);
    }
    pts << px(tmax) << ',' << py(prev);
    os << "<polyline fill=\"none\" stroke=\"" << colors[idx % 5] << "\" stroke-width=\"1.5\" data-group=\""
       << format_double(level) << "\" data-times=\"" << times.str() << "\" data-survival=\"" << surv.str()
       << "\" points=\"" << pts.str() << "\"/>\n";
    os << "<text x=\"" << w - mr - 90 << "\" y=\"" << mt + 16 * (idx + 1) << "\" font-size=\"12\" fill=\""
       << colors[idx % 5] << "\">group " << format_double(level) << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
}

// ---- JSON specs ---------------------------------------------------------

using nlohmann::json;

inline MethodSpec method_from_json(const json& j) {
  MethodSpec m;
  try {
    m.kind = parse_method_kind(j.at("kind").get<std::string>());
    if (j.contains("landmark_time")) m.landmark_time = j["landmark_time"].get<double>();
    if (j.contains("grace_end")) m.grace_end = j["grace_end"].get<double>();
    if (j.contains("window_width")) m.window_width = j["window_width"].get<double>();
    if (j.contains("trial_count")) m.trial_count = j["trial_count"].get<int>();
    if (j.contains("adherence_mode")) {
      const auto a = j["adherence_mode"].get<std::string>();
      if (a == "pp") m.adherence = Adherence::pp;
      else if (a == "itt_like" || a == "itt-like") m.adherence = Adherence::itt_like;
      else throw InputError("unknown adherence_mode '" + a + "'");
    }
    if (j.contains("ptdm_source")) {
      const auto s = j["ptdm_source"].get<std::string>();
      if (s == "observed") m.ptdm_source = PtdmSource::observed;
      else if (s == "uniform_grace" || s == "uniform-grace") m.ptdm_source = PtdmSource::uniform_grace;
      else if (s == "observed_at_risk" || s == "observed-at-risk") m.ptdm_source = PtdmSource::observed_at_risk;
      else throw InputError("unknown ptdm_source '" + s + "'");
    }
    if (j.contains("rng_seed")) m.rng_seed = j["rng_seed"].get<std::uint64_t>();
    if (j.contains("adjust_baseline")) m.adjust_baseline = j["adjust_baseline"].get<bool>();
    if (j.contains("censor_covariates")) m.censor_covariates = j["censor_covariates"].get<std::vector<std::string>>();
    if (j.contains("weight_cap")) m.weights.cap = j["weight_cap"].get<double>();
    if (j.contains("weight_step")) m.weight_step = j["weight_step"].get<double>();
    if (j.contains("weight_convention")) {
      const auto c = j["weight_convention"].get<std::string>();
      if (c == "exponential") m.weights.convention = WeightConvention::exponential;
      else if (c == "product-limit" || c == "product_limit") m.weights.convention = WeightConvention::product_limit;
      else throw InputError("unknown weight_convention '" + c + "'");
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("method spec: ") + e.what());
  }
  m.validate();
  return m;
}

inline json method_to_json(const MethodSpec& m) {
  json j{{"kind", to_string(m.kind)}};
  if (m.landmark_time) j["landmark_time"] = *m.landmark_time;
  if (m.grace_end) j["grace_end"] = *m.grace_end;
  if (m.window_width) j["window_width"] = *m.window_width;
  if (m.trial_count) j["trial_count"] = *m.trial_count;
  if (m.kind == MethodKind::sequential) j["adherence_mode"] = to_string(m.adherence);
  if (m.kind == MethodKind::ptdm) {
    j["ptdm_source"] = to_string(m.ptdm_source);
    j["rng_seed"] = m.rng_seed;
  }
  if (m.adjust_baseline) j["adjust_baseline"] = *m.adjust_baseline;
  if (m.censor_covariates) j["censor_covariates"] = *m.censor_covariates;
  if (m.kind == MethodKind::sequential || m.kind == MethodKind::cloning) {
    j["weight_cap"] = m.weights.cap;
    j["weight_step"] = m.weight_step;
    if (m.weights.convention) j["weight_convention"] = to_string(*m.weights.convention);
  }
  return j;
}

inline ScenarioSpec scenario_from_json(const json& j) {
  try {
    ScenarioSpec s = j.contains("id") && j["id"].get<int>() != 0 ? scenario(j["id"].get<int>()) : ScenarioSpec{};
    if (j.contains("survival_dist")) {
      const auto& d = j["survival_dist"];
      const auto kind = d.at("kind").get<std::string>();
      if (kind == "exponential") s.survival = SurvivalDist::exponential(d.at("rate").get<double>());
      else if (kind == "gamma") s.survival = SurvivalDist::gamma(d.at("scale").get<double>(), d.at("shape").get<double>());
      else if (kind == "weibull") s.survival = SurvivalDist::weibull(d.at("scale").get<double>(), d.at("shape").get<double>());
      else throw InputError("unknown survival distribution '" + kind + "'");
    }
    auto range = [&](const char* key, UniformRange& r) {
      if (!j.contains(key)) return;
      r.lo = j[key].at("lo").get<double>();
      r.hi = j[key].at("hi").get<double>();
    };
    range("censor_dist", s.censor);
    range("treat_time_dist", s.treat_time);
    if (j.contains("never_treated_fraction")) s.never_treated_fraction = j["never_treated_fraction"].get<double>();
    if (j.contains("n")) s.n = j["n"].get<int>();
    if (j.contains("intervals")) s.intervals = j["intervals"].get<int>();
    if (j.contains("true_log_hr_covariate")) s.beta_covariate = j["true_log_hr_covariate"].get<double>();
    if (j.contains("true_log_hr_treatment")) s.beta_treatment = j["true_log_hr_treatment"].get<double>();
    if (j.contains("covariate_success_prob")) s.covariate_success_prob = j["covariate_success_prob"].get<double>();
    if (j.contains("discretize")) s.discretize = j["discretize"].get<bool>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario spec: ") + e.what());
  }
}

inline json scenario_to_json(const ScenarioSpec& s) {
  json d{{"kind", to_string(s.survival.kind)}};
  if (s.survival.kind == SurvivalDist::Kind::exponential) {
    d["rate"] = s.survival.rate;
  } else {
    d["scale"] = s.survival.scale;
    d["shape"] = s.survival.shape;
  }
  return json{{"id", s.id},
              {"survival_dist", d},
              {"censor_dist", {{"lo", s.censor.lo}, {"hi", s.censor.hi}}},
              {"treat_time_dist", {{"lo", s.treat_time.lo}, {"hi", s.treat_time.hi}}},
              {"never_treated_fraction", s.never_treated_fraction},
              {"n", s.n},
              {"intervals", s.intervals},
              {"true_log_hr_covariate", s.beta_covariate},
              {"true_log_hr_treatment", s.beta_treatment},
              {"covariate_success_prob", s.covariate_success_prob},
              {"discretize", s.discretize}};
}

inline json fit_to_json(const FitResult& fit) {
  json coefs = json::array();
  for (const auto& r : coefficient_table(fit)) {
    coefs.push_back({{"term", r.name}, {"coef", r.coef}, {"se", r.se}, {"robust", r.robust}, {"hr", r.hr},
                     {"lower95", r.lower}, {"upper95", r.upper}, {"p", r.p}});
  }
  return json{{"coefficients", coefs}, {"loglik", fit.loglik},       {"iterations", fit.iterations},
              {"converged", fit.converged}, {"n_events", fit.n_events}, {"n_rows", fit.n_rows},
              {"meta", fit.meta},            {"warnings", fit.warnings}};
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace imt
