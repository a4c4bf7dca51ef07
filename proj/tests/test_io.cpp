#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "support.hpp"

using namespace imt;
using namespace imt::testing;
namespace fs = std::filesystem;

namespace {

CsvTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

fs::path scratch_dir() {
  const fs::path d = fs::temp_directory_path() / ("imt_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                  "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  fs::create_directories(d);
  return d;
}

const fs::path kStanford = fs::path(IMT_DATA_DIR) / "heart_transplant.csv";

std::vector<double> numbers(const std::string& s) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(*parse_double(tok));
  return out;
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.exponential(0.01) * (rng.bernoulli(0.5) ? 1 : -1);
    EXPECT_EQ(*parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(30.0), "30");
}

TEST(ParseDouble, AcceptsPaddingAndRejectsJunk) {
  EXPECT_EQ(*parse_double(" 2.5 "), 2.5);
  EXPECT_EQ(*parse_double("+3"), 3.0);
  EXPECT_FALSE(parse_double(""));
  EXPECT_FALSE(parse_double("2.5x"));
  EXPECT_FALSE(parse_double("NA"));
}

TEST(ParseCsv, QuotesAndLineEndings) {
  const CsvTable t = parse("a,b,c\r\n\"x, y\",\"say \"\"hi\"\"\",3\r\n\n\"multi\nline\",,4\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "x, y");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.rows[1][0], "multi\nline");
  EXPECT_EQ(t.rows[1][1], "");
  EXPECT_EQ(t.rows[1][2], "4");
  EXPECT_EQ(t.column("c"), 2u);
  EXPECT_THROW(t.column("d"), InputError);
}

TEST(ParseCsv, NoTrailingNewlineAndRaggedRows) {
  EXPECT_EQ(parse("a,b\n1,2").rows.size(), 1u);
  EXPECT_THROW(parse("a,b\n1,2,3\n"), InputError);
  EXPECT_THROW(parse("a\n\"open\n"), InputError);
}

TEST(LoadCsv, EmptyFileHasNoDataRows) {
  for (const std::string text : {"", "id,followup_end,event,treat_init\n"}) {
    const CsvTable t = parse(text);
    try {
      cohort_from_table(t, ColumnMapping{});
      FAIL() << "accepted '" << text << "'";
    } catch (const InputError& e) {
      EXPECT_STREQ(e.what(), "no data rows");
    }
  }
}

TEST(LoadCsv, EventCodesAreMapped) {
  ColumnMapping m;
  m.event_true = {"dead"};
  m.event_false = {"alive"};
  const LoadedCohort lc = cohort_from_table(parse("id,followup_end,event,treat_init\na,3,dead,\nb,4,alive,1\n"), m);
  ASSERT_EQ(lc.cohort.size(), 2u);
  EXPECT_TRUE(lc.cohort.subjects[0].event);
  EXPECT_FALSE(lc.cohort.subjects[1].event);
  EXPECT_FALSE(lc.cohort.subjects[0].treat_init);
  EXPECT_EQ(lc.cohort.subjects[1].treat_init, 1.0);
  EXPECT_THROW(cohort_from_table(parse("id,followup_end,event,treat_init\na,3,1,\n"), m), InputError);
}

TEST(LoadCsv, MalformedValuesNameTheRow) {
  try {
    cohort_from_table(parse("id,followup_end,event,treat_init\na,3,1,\nb,x,1,\n"), ColumnMapping{});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
  EXPECT_THROW(cohort_from_table(parse("id,followup_end,event\na,3,1\n"), ColumnMapping{}), InputError);
  ColumnMapping twice;
  twice.treat_init = "event";
  EXPECT_THROW(twice.validate(), InputError);
}

TEST(LoadCsv, ValidationReportIsAttached) {
  const LoadedCohort lc =
      cohort_from_table(parse("id,followup_end,event,treat_init\na,3,1,\na,0,0,\n"), ColumnMapping{});
  EXPECT_FALSE(lc.report.ok());
}

TEST(Stanford, SubjectAndTransplantCounts) {
  const LoadedCohort lc = load_csv(kStanford, stanford_mapping());
  EXPECT_EQ(lc.cohort.size(), 103u);
  std::size_t treated = 0;
  for (const auto& s : lc.cohort.subjects) treated += s.treat_init.has_value();
  EXPECT_EQ(treated, 69u);
  EXPECT_TRUE(lc.report.ok());
  EXPECT_EQ(lc.cohort.covariate_names, (std::vector<std::string>{"age", "prior"}));
}

TEST(Stanford, TransplantedRowWithoutWaitIsRejected) {
  const CsvTable t = parse("id,acceptyear,age,survived,survtime,prior,transplant,wait\n1,68,50,dead,10,no,treatment,\n");
  EXPECT_THROW(cohort_from_table(t, stanford_mapping()), InputError);
}

TEST(SubjectsCsv, SimulatedCohortRoundTripsExactly) {
  ScenarioSpec s = scenario(5);
  s.n = 500;
  s.discretize = false;
  const Cohort c = simulate(s, 9);
  const fs::path path = scratch_dir() / "cohort.csv";
  {
    OutputFile out(path);
    write_subjects_csv(out.stream(), c);
    out.commit();
  }
  const LoadedCohort back = load_subjects_csv(path);
  ASSERT_EQ(back.cohort.size(), c.size());
  EXPECT_EQ(back.cohort.covariate_names, c.covariate_names);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& a = c.subjects[i];
    const auto& b = back.cohort.subjects[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.followup_end, b.followup_end);
    EXPECT_EQ(a.event, b.event);
    EXPECT_EQ(a.treat_init, b.treat_init);
    EXPECT_EQ(a.covariates, b.covariates);
  }
  fs::remove_all(path.parent_path());
}

TEST(OutputFile, UncommittedOutputLeavesNothing) {
  const fs::path dir = scratch_dir();
  const fs::path path = dir / "nested" / "result.csv";
  try {
    OutputFile out(path);
    out.stream() << "partial";
    throw NumericalError("boom");
  } catch (const NumericalError&) {
  }
  EXPECT_FALSE(fs::exists(path));
  EXPECT_FALSE(fs::exists(dir / "nested" / "result.csv.partial"));
  fs::remove_all(dir);
}

TEST(FitCsv, ColumnsAndInterval) {
  const FitResult fit = fit_cox(time_varying(load_csv(kStanford, stanford_mapping()).cohort));
  std::ostringstream os;
  write_fit_csv(os, fit);
  const CsvTable t = parse(os.str());
  EXPECT_EQ(t.header,
            (std::vector<std::string>{"term", "coef", "se", "robust", "hr", "lower95", "upper95", "z", "p"}));
  ASSERT_EQ(t.rows.size(), 3u);
  for (const auto& r : t.rows) {
    const double coef = *parse_double(r[1]), se = *parse_double(r[2]);
    EXPECT_DOUBLE_EQ(*parse_double(r[4]), std::exp(coef));
    EXPECT_DOUBLE_EQ(*parse_double(r[5]), std::exp(coef - 1.96 * se));
    EXPECT_DOUBLE_EQ(*parse_double(r[6]), std::exp(coef + 1.96 * se));
    EXPECT_EQ(r[3], "0");
  }
  EXPECT_EQ(t.rows[0][0], "treatment");
  const std::string text = format_fit(fit);
  EXPECT_NE(text.find("0.92"), std::string::npos);
}

TEST(FormatP, SmallValues) {
  EXPECT_EQ(format_p(5e-5), "< 0.0001");
  EXPECT_EQ(format_p(5e-4), "0.0005");
  EXPECT_EQ(format_p(0.0312), "0.031");
}

TEST(KmOutputs, SvgStepsMatchCsv) {
  const auto curves = km_estimate(include_imt(exemplar()), kTreatment);
  std::ostringstream csv, svg;
  write_km_csv(csv, curves);
  write_km_svg(svg, curves);
  const CsvTable t = parse(csv.str());
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> from_csv;
  for (const auto& r : t.rows) {
    auto& g = from_csv[*parse_double(r[0])];
    g.first.push_back(*parse_double(r[1]));
    g.second.push_back(*parse_double(r[2]));
  }
  const std::regex poly("data-group=\"([^\"]*)\" data-times=\"([^\"]*)\" data-survival=\"([^\"]*)\"");
  const std::string s = svg.str();
  std::size_t groups = 0;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), poly); it != std::sregex_iterator(); ++it) {
    const double g = *parse_double((*it)[1].str());
    ASSERT_TRUE(from_csv.count(g));
    EXPECT_EQ(numbers((*it)[2].str()), from_csv[g].first);
    EXPECT_EQ(numbers((*it)[3].str()), from_csv[g].second);
    ++groups;
  }
  EXPECT_EQ(groups, 2u);
  EXPECT_EQ(s.rfind("</svg>\n"), s.size() - 7);
}

TEST(MethodJson, RoundTripAndErrors) {
  MethodSpec m;
  m.kind = MethodKind::cloning;
  m.grace_end = 6.0;
  m.weights.cap = 15.0;
  m.weights.convention = WeightConvention::product_limit;
  const MethodSpec back = method_from_json(method_to_json(m));
  EXPECT_EQ(method_to_json(back), method_to_json(m));
  EXPECT_EQ(back.weights.convention, WeightConvention::product_limit);

  MethodSpec p;
  p.kind = MethodKind::ptdm;
  p.ptdm_source = PtdmSource::observed_at_risk;
  p.rng_seed = 12;
  EXPECT_EQ(method_to_json(method_from_json(method_to_json(p))), method_to_json(p));

  EXPECT_THROW(method_from_json(json{{"kind", "nope"}}), InputError);
  EXPECT_THROW(method_from_json(json{{"grace_end", 3}}), InputError);
  EXPECT_THROW(method_from_json(json{{"kind", "cloning"}, {"grace_end", "x"}}), InputError);
}

TEST(ScenarioJson, RoundTripAndErrors) {
  for (int id = 1; id <= 6; ++id) {
    const ScenarioSpec s = scenario(id);
    EXPECT_EQ(scenario_to_json(scenario_from_json(scenario_to_json(s))), scenario_to_json(s));
  }
  json custom = scenario_to_json(scenario(5));
  custom["id"] = 0;
  custom["n"] = 77;
  const ScenarioSpec c = scenario_from_json(custom);
  EXPECT_EQ(c.n, 77);
  EXPECT_EQ(c.survival.kind, SurvivalDist::Kind::gamma);
  custom["never_treated_fraction"] = 2.0;
  EXPECT_THROW(scenario_from_json(custom), InputError);
  EXPECT_THROW(scenario_from_json(json{{"survival_dist", {{"kind", "lognormal"}}}}), InputError);
}

TEST(FitJson, CarriesCoefficientsAndMeta) {
  MethodSpec m;
  m.kind = MethodKind::include_imt;
  const FitResult fit = analyze(m, load_csv(kStanford, stanford_mapping()).cohort);
  const json j = fit_to_json(fit);
  ASSERT_EQ(j["coefficients"].size(), fit.coefficients.size());
  EXPECT_EQ(j["coefficients"][0]["term"], "treatment");
  EXPECT_DOUBLE_EQ(j["coefficients"][0]["hr"].get<double>(), std::exp(fit.coefficients[0]));
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_EQ(json::parse(j.dump()), j);
}
