#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "gmerf/glmm.hpp"
#include "gmerf/io.hpp"
#include "gmerf/random.hpp"
#include "gmerf/serialize.hpp"
#include "gmerf/simulation.hpp"

using namespace gmerf;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    Rng rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("gmerf_io_" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::invalid_input;
}

}  // namespace

TEST_CASE("binarizing incomes") {
  const std::vector<double> income{1, 2, 3, 4, 5};
  const Binarized b = binarize_income(income, ThresholdSpec::median_fraction(0.6));
  CHECK(b.threshold == doctest::Approx(1.8));
  CHECK(b.y == std::vector<int>{1, 0, 0, 0, 0});
  CHECK(binarize_income(income, ThresholdSpec::literal(std::numeric_limits<double>::infinity())).y ==
        std::vector<int>(5, 1));
  CHECK(binarize_income(income, ThresholdSpec::literal(0.5)).y == std::vector<int>(5, 0));
  CHECK(binarize_income(income, ThresholdSpec::literal(3.0)).y == std::vector<int>{1, 1, 1, 0, 0});
  const std::vector<double> even{4, 1, 3, 2};
  CHECK(binarize_income(even, ThresholdSpec::median_fraction(1.0)).threshold == 2.5);
  const std::vector<double> bad{1, std::nan("")};
  CHECK(kind_of([&] { binarize_income(bad, ThresholdSpec::literal(1.0)); }) == ErrorKind::invalid_input);
}

TEST_CASE("loading survey and census files") {
  TempDir dir;
  write_file(dir / "s.csv", "area_id,x1,x2,y\n3,0.5,-1,1\n7,1.5,2e-1,0\n");
  const SurveyFrame s = load_survey(dir / "s.csv");
  CHECK(s.y == std::vector<int>{1, 0});
  CHECK(s.area == std::vector<AreaId>{3, 7});
  CHECK(s.feature_names == std::vector<std::string>{"x1", "x2"});
  CHECK(s.features(1, 1) == 0.2);
  CHECK_FALSE(s.poverty_line.has_value());

  write_file(dir / "c.csv", "x2,area_id,x1,extra\n1,3,2,z\n4,7,5,z\n6,9,7,z\n");
  const CensusFrame c = load_census(dir / "c.csv", s.feature_names);
  CHECK(c.features(0, 0) == 2.0);
  CHECK(c.features(0, 1) == 1.0);
  CHECK(c.area_sizes().size() == 3);
  CHECK_NOTHROW(check_survey_census(s, c));

  write_file(dir / "c2.csv", "area_id,x1\n3,1\n");
  try {
    load_census(dir / "c2.csv", s.feature_names);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema);
    CHECK(std::string(e.what()).find("x2") != std::string::npos);
  }

  write_file(dir / "c3.csv", "area_id,x1,x2\n3,1,1\n");
  const CensusFrame missing_area = load_census(dir / "c3.csv", s.feature_names);
  CHECK(kind_of([&] { check_survey_census(s, missing_area); }) == ErrorKind::schema);
}

TEST_CASE("income surveys are binarized on load") {
  TempDir dir;
  write_file(dir / "s.csv", "area_id,x1,income\n1,0,1\n1,0,2\n2,0,3\n2,0,4\n2,0,5\n");
  const SurveyFrame s = load_survey(dir / "s.csv", ThresholdSpec::median_fraction(0.6));
  CHECK(s.y == std::vector<int>{1, 0, 0, 0, 0});
  CHECK(*s.poverty_line == doctest::Approx(1.8));
  CHECK(kind_of([&] { load_survey(dir / "s.csv"); }) == ErrorKind::schema);
}

TEST_CASE("malformed inputs are rejected") {
  TempDir dir;
  const auto rejects = [&](const std::string& text) {
    write_file(dir / "bad.csv", text);
    return kind_of([&] { load_survey(dir / "bad.csv"); }) == ErrorKind::schema;
  };
  CHECK(rejects("x1,y\n1,0\n"));
  CHECK(rejects("area_id,y\n1,0\n"));
  CHECK(rejects("area_id,x1\n1,0\n"));
  CHECK(rejects("area_id,x1,y\n1,0,2\n"));
  CHECK(rejects("area_id,x1,y\n1,abc,1\n"));
  CHECK(rejects("area_id,x1,y\n1,nan,1\n"));
  CHECK(rejects("area_id,x1,y\n1.5,0,1\n"));
  CHECK(rejects("area_id,x1,y\n1,0\n"));
  CHECK(rejects("area_id,x1,x1,y\n1,0,0,1\n"));
  CHECK(rejects(""));
  CHECK(kind_of([&] { load_survey(dir / "absent.csv"); }) == ErrorKind::io);

  write_file(dir / "quoted.csv", "area_id,\"x1\",y\r\n\"4\",\"1.25\",1\r\n");
  CHECK(load_survey(dir / "quoted.csv").features(0, 0) == 1.25);
}

TEST_CASE("estimates round trip at full precision") {
  TempDir dir;
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<AreaEstimate> es;
  for (int i = 0; i < 30; ++i) {
    AreaEstimate e;
    e.area = 100 + i;
    e.n_i = i;
    e.N_i = 1000 + i;
    e.in_sample = i > 0;
    e.mu_hat = u(rng);
    if (i % 3 != 0) e.mse = u(rng) * 1e-3;
    if (i % 3 == 1) e.cv = std::sqrt(*e.mse) / e.mu_hat;
    e.flags = i % 5 == 0 ? "macro_cap;micro_cap" : "";
    es.push_back(e);
  }
  RunConfig cfg;
  cfg.seed = 987654321;
  emit_estimates(es, dir / "out" / "estimates.csv", make_sidecar("fit", cfg));
  const auto back = load_estimates(dir / "out" / "estimates.csv");
  REQUIRE(back.size() == es.size());
  for (std::size_t i = 0; i < es.size(); ++i) {
    CHECK(back[i].area == es[i].area);
    CHECK(back[i].n_i == es[i].n_i);
    CHECK(back[i].N_i == es[i].N_i);
    CHECK(back[i].in_sample == es[i].in_sample);
    CHECK(back[i].mu_hat == es[i].mu_hat);
    CHECK(back[i].mse == es[i].mse);
    CHECK(back[i].cv == es[i].cv);
    CHECK(back[i].flags == es[i].flags);
  }
  const std::string text = read_file(dir / "out" / "estimates.csv");
  CHECK(text.find("area_id,n_i,N_i,in_sample,mu_hat,mse,cv,flags\n") == 0);
  // An absent CV is an empty field, never zero.
  CHECK(text.find("\n100,0,1000,0,") != std::string::npos);
  const auto line = text.substr(text.find("\n100,"), text.find('\n', text.find("\n100,") + 1) - text.find("\n100,"));
  CHECK(line.find(",,,") != std::string::npos);

  const auto sidecar = nlohmann::json::parse(read_file(dir / "out" / "estimates.csv.json"));
  CHECK(sidecar.at("seed").get<std::uint64_t>() == 987654321);
  CHECK(sidecar.at("command") == "fit");
}

TEST_CASE("runs are replayable from the sidecar") {
  RunConfig cfg;
  cfg.survey = "survey.csv";
  cfg.census = "census.csv";
  cfg.seed = 77;
  cfg.poverty_line = ThresholdSpec::median_fraction(0.5);
  cfg.gmerf.forest.n_trees = 123;
  cfg.gmerf.forest.mtry = 2;
  cfg.gmerf.pql.max_macro = 7;
  cfg.gmerf.area_mean = AreaMean::linear_predictor;
  cfg.bootstrap.B = 33;
  cfg.bootstrap.refit_trees = 40;
  cfg.scenario_spec = builtin_scenario("interaction_small");
  cfg.methods = {"gmerf", "direct"};
  apply_seed(cfg);

  const RunConfig back = config_from_json(make_sidecar("mse", cfg));
  CHECK(back.survey == cfg.survey);
  CHECK(back.seed == 77);
  CHECK(back.poverty_line->kind == ThresholdSpec::Kind::median_fraction);
  CHECK(back.poverty_line->value == 0.5);
  CHECK(back.gmerf.forest.n_trees == 123);
  CHECK(*back.gmerf.forest.mtry == 2);
  CHECK(back.gmerf.forest.seed == cfg.gmerf.forest.seed);
  CHECK(back.gmerf.pql.max_macro == 7);
  CHECK(back.gmerf.area_mean == AreaMean::linear_predictor);
  CHECK(back.bootstrap.B == 33);
  CHECK(*back.bootstrap.refit_trees == 40);
  CHECK(back.bootstrap.seed == cfg.bootstrap.seed);
  CHECK(back.scenario_spec->predictor.coefficients == cfg.scenario_spec->predictor.coefficients);
  CHECK(back.methods == cfg.methods);
  CHECK(to_json(back) == to_json(cfg));

  nlohmann::json broken = to_json(cfg);
  broken["forest"]["n_trees"] = "many";
  CHECK(kind_of([&] { config_from_json(broken); }) == ErrorKind::schema);
  broken = to_json(cfg);
  broken["area_mean"] = "median";
  CHECK_THROWS_AS(config_from_json(broken), Error);
}

TEST_CASE("different seeds give different derived seeds") {
  RunConfig a, b;
  a.seed = 1;
  b.seed = 2;
  apply_seed(a);
  apply_seed(b);
  CHECK(a.gmerf.forest.seed != b.gmerf.forest.seed);
  CHECK(a.bootstrap.seed != a.gmerf.forest.seed);
}

TEST_CASE("fitted models survive serialization") {
  const Scenario sc = builtin_scenario("normal_small");
  const Population pop = generate_population(sc, 31);
  const SurveySample s = draw_sample(pop, sc.allocation, 32);
  GmerfConfig cfg;
  cfg.forest.n_trees = 15;
  cfg.pql.max_micro = 2;
  cfg.pql.max_macro = 2;
  const GmerfModel m = fit_gmerf(s.y, s.features, s.area, cfg);
  const GmerfModel back = gmerf_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  CHECK(back.nu_hat == m.nu_hat);
  CHECK(back.sample_sizes == m.sample_sizes);
  CHECK(back.sigma2_nu == m.sigma2_nu);
  CHECK(back.fitted_eta == m.fitted_eta);
  CHECK(back.flags() == m.flags());
  const auto a = area_proportions(m, pop.census);
  const auto b = area_proportions(back, pop.census);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].mu_hat == b[i].mu_hat);

  const GlmmModel g = fit_glmm_pql(s.y, s.features, s.area, PqlControl{});
  const GlmmModel gb = glmm_model_from_json(nlohmann::json::parse(to_json(g).dump()));
  CHECK(gb.beta == g.beta);
  CHECK(gb.nu_hat == g.nu_hat);

  CHECK(kind_of([&] { gmerf_model_from_json(to_json(g)); }) == ErrorKind::schema);
  nlohmann::json j = to_json(m);
  j["forest"]["trees"][0]["left"][0] = 9999;
  CHECK(kind_of([&] { gmerf_model_from_json(j); }) == ErrorKind::schema);
}

TEST_CASE("district mapping files") {
  TempDir dir;
  write_file(dir / "m.csv", "area_id,district_id\n1,10\n2,10\n3,20\n");
  const auto m = load_mapping(dir / "m.csv");
  CHECK(m.at(2) == 10);
  CHECK(m.at(3) == 20);
  write_file(dir / "dup.csv", "area_id,district_id\n1,10\n1,20\n");
  CHECK(kind_of([&] { load_mapping(dir / "dup.csv"); }) == ErrorKind::schema);
}

TEST_CASE("numbers print in shortest round-trip form") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double v = u(rng) / 7.0;
    CHECK(parse_double(format_double(v), "v") == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(0.75) == "0.75");
}
