#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "gmerf/io.hpp"
#include "gmerf/random.hpp"

using namespace gmerf;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    Rng rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("gmerf_cli_" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

struct Run {
  int status;
  std::string err;
};

// Runs the CLI with the given arguments; stdout is discarded, stderr captured.
Run cli(const std::string& args, const TempDir& dir) {
  const std::string err_file = dir / "stderr.txt";
  const int raw = std::system((std::string(GMERF_CLI_PATH) + " " + args + " > /dev/null 2> " + err_file).c_str());
  std::ifstream in(err_file);
  return {WEXITSTATUS(raw), {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};
}

void write_inputs(const TempDir& dir) {
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::ofstream survey(dir / "survey.csv");
  std::ofstream census(dir / "census.csv");
  survey << "area_id,x1,x2,y\n";
  census << "area_id,x1,x2\n";
  for (int a = 1; a <= 6; ++a) {
    for (int k = 0; k < 40; ++k) {
      const double x1 = normal(rng), x2 = normal(rng);
      census << a << ',' << format_double(x1) << ',' << format_double(x2) << '\n';
      if (a <= 5 && k < 15) survey << a << ',' << format_double(x1) << ',' << format_double(x2) << ','
                                   << (uniform01(rng) < expit(0.5 * x1 - 0.2 * a) ? 1 : 0) << '\n';
    }
  }
  std::ofstream(dir / "mapping.csv") << "area_id,district_id\n1,1\n2,1\n3,1\n4,2\n5,2\n6,2\n";
}

}  // namespace

TEST_CASE("usage errors exit with status 2 and a JSON message") {
  TempDir dir;
  const Run r = cli("fit --no-such-flag", dir);
  CHECK(r.status == 2);
  CHECK(nlohmann::json::parse(r.err).at("error") == "usage");
  CHECK(cli("", dir).status == 2);
}

TEST_CASE("run errors exit with status 1 and name the error kind") {
  TempDir dir;
  const Run missing = cli("fit --method direct --out " + (dir / "o"), dir);
  CHECK(missing.status == 1);
  CHECK(nlohmann::json::parse(missing.err).at("error") == "invalid_input");

  const Run absent = cli("fit --method direct --survey " + (dir / "absent.csv") + " --out " + (dir / "o"), dir);
  CHECK(absent.status == 1);
  CHECK(nlohmann::json::parse(absent.err).at("error") == "io");
}

TEST_CASE("a saved model predicts what the fit reported") {
  TempDir dir;
  write_inputs(dir);
  const std::string inputs = " --survey " + (dir / "survey.csv") + " --census " + (dir / "census.csv");
  REQUIRE(cli("fit --trees 20 --seed 3" + inputs + " --out " + (dir / "fit"), dir).status == 0);
  REQUIRE(cli("predict --model " + (dir / "fit/model.json") + " --census " + (dir / "census.csv") + " --out " +
                  (dir / "pred"),
              dir)
              .status == 0);
  const auto fitted = load_estimates(dir / "fit/estimates.csv");
  const auto predicted = load_estimates(dir / "pred/estimates.csv");
  REQUIRE(fitted.size() == 6);
  REQUIRE(predicted.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(predicted[i].mu_hat == fitted[i].mu_hat);
  CHECK_FALSE(fitted[5].in_sample);

  const auto diag = nlohmann::json::parse(std::ifstream(dir / "fit/diagnostics.json"));
  CHECK(diag.at("in_sample").at("auc").get<double>() > 0.5);
}

TEST_CASE("the sidecar replays a run") {
  TempDir dir;
  write_inputs(dir);
  const std::string inputs = " --survey " + (dir / "survey.csv") + " --census " + (dir / "census.csv");
  REQUIRE(cli("mse --trees 15 --B 4 --seed 9" + inputs + " --out " + (dir / "a"), dir).status == 0);
  REQUIRE(cli("mse --config " + (dir / "a/estimates.csv.json") + " --out " + (dir / "b"), dir).status == 0);
  const auto a = load_estimates(dir / "a/estimates.csv");
  const auto b = load_estimates(dir / "b/estimates.csv");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mu_hat == b[i].mu_hat);
    CHECK(a[i].mse == b[i].mse);
    CHECK(a[i].mse.has_value());
  }
}

TEST_CASE("district aggregation through the command line") {
  TempDir dir;
  write_inputs(dir);
  REQUIRE(cli("fit --method direct --survey " + (dir / "survey.csv") + " --census " + (dir / "census.csv") +
                  " --out " + (dir / "fit"),
              dir)
              .status == 0);
  REQUIRE(cli("aggregate --estimates " + (dir / "fit/estimates.csv") + " --mapping " + (dir / "mapping.csv") +
                  " --out " + (dir / "agg"),
              dir)
              .status == 0);
  const auto areas = load_estimates(dir / "fit/estimates.csv");
  const auto districts = load_estimates(dir / "agg/districts.csv");
  REQUIRE(districts.size() == 2);
  double first = 0.0;
  for (std::size_t i = 0; i < 3; ++i) first += areas[i].mu_hat * areas[i].N_i;
  CHECK(districts[0].mu_hat == doctest::Approx(first / 120.0).epsilon(1e-12));
}

TEST_CASE("tuning and simulation commands write their reports") {
  TempDir dir;
  write_inputs(dir);
  REQUIRE(cli("tune --survey " + (dir / "survey.csv") + " --folds 3 --candidates 1,2 --trees 20 --out " +
                  (dir / "tune"),
              dir)
              .status == 0);
  const auto tune = nlohmann::json::parse(std::ifstream(dir / "tune/tune.json"));
  CHECK(tune.dump().find("mtry") != std::string::npos);

  std::ofstream(dir / "tiny.json") << R"({"name": "tiny", "predictor": {"1": 0.3, "x1": -0.5},
    "x1": {"mean": 0, "sd": 1}, "x2": {"mean": 0, "sd": 1}, "sigma2_nu": 0.2,
    "D": 4, "N_i": 60, "allocation": [5, 8, 10, 3]})";
  REQUIRE(cli("simulate --scenario " + (dir / "tiny.json") + " --reps 3 --methods cep,direct --out " +
                  (dir / "sim"),
              dir)
              .status == 0);
  std::ifstream report(dir / "sim/report.csv");
  std::string header;
  std::getline(report, header);
  CHECK(header.find("rrmse") != std::string::npos);
}
