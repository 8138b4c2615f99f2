#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gmerf/bootstrap.hpp"
#include "gmerf/gmerf.hpp"
#include "gmerf/predict.hpp"

namespace gmerf {

/// Linear predictor over the terms "1", "x1", "x2", "x1:x2", "x1^2", "x2^2".
struct Predictor {
  std::map<std::string, double> coefficients;

  double operator()(double x1, double x2) const;
  static bool is_known_term(std::string_view term);
};

struct NormalLaw {
  double mean = 0.0;
  double sd = 1.0;
};

struct Scenario {
  std::string name;
  Predictor predictor;
  NormalLaw x1_law;
  NormalLaw x2_law;
  double sigma2_nu = 0.0;
  int D = 50;
  int N_i = 1000;
  std::vector<int> allocation;  // n_i per area, length D

  void validate() const;
};

/// Fixed sample allocation for D = 50: sizes 1..28, median 13, total 687.
const std::vector<int>& default_allocation();

/// "normal_small", "interaction_small", "normal_large", "interaction_large".
Scenario builtin_scenario(std::string_view name);
std::vector<std::string> builtin_scenario_names();

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& s);

/// Intraclass correlation on the latent logistic scale.
double vpc(double sigma2_nu);

/// Synthetic finite population. Areas are 1..D with contiguous blocks of
/// N_i rows; latent quantities are kept for truth computation.
struct Population {
  CensusFrame census;
  std::vector<int> y;
  Vector nu;     // per area
  Vector eta;    // per unit
  Vector mu;     // per unit
  std::vector<AreaId> areas;
  Vector truth;  // realized share of y = 1 per area
};

Population generate_population(const Scenario& s, std::uint64_t seed);

struct SurveySample {
  std::vector<Index> rows;  // population rows, ascending
  std::vector<AreaId> area;
  Matrix features;
  std::vector<int> y;
};

/// Stratified simple random sampling without replacement, allocation[i]
/// units from the i-th area.
SurveySample draw_sample(const Population& pop, std::span<const int> allocation, std::uint64_t seed);

struct ReplicateContext {
  const Population& population;
  const SurveySample& sample;
  std::uint64_t seed;
  int replicate;
};

struct MethodOutput {
  Vector mu_hat;              // per population area, in `areas` order
  std::optional<Vector> mse;  // estimated MSE per area, if the method has one
};

struct SimulationMethod {
  std::string name;
  std::function<MethodOutput(const ReplicateContext&)> run;
};

SimulationMethod gmerf_method(const GmerfConfig& cfg, std::optional<BootstrapConfig> bootstrap = std::nullopt);
SimulationMethod cep_method(const PqlControl& ctl);
SimulationMethod direct_method();

struct MetricSummary {
  double rb = 0.0;
  double rrmse = 0.0;
  double rb_rmse = 0.0;
  double rrmse_rmse = 0.0;
};

struct AreaMetrics {
  AreaId area = 0;
  double rb = 0.0;
  double rrmse = 0.0;
  double rmse_emp = 0.0;
  // NaN when the method reports no MSE.
  double rb_rmse = 0.0;
  double rrmse_rmse = 0.0;
};

struct MethodMetrics {
  std::string name;
  std::vector<AreaMetrics> areas;
  MetricSummary mean;
  MetricSummary median;
  int replicates = 0;
  int failures = 0;
  bool has_mse = false;
};

struct MetricsTable {
  std::string scenario;
  int M = 0;
  std::uint64_t seed = 0;
  std::vector<MethodMetrics> methods;

  const MethodMetrics& method(std::string_view name) const;
};

/// Quality metrics over replicates. Rows of the matrices are replicates,
/// columns areas. `mse` may be null.
MethodMetrics compute_metrics(std::string name, std::span<const AreaId> areas, const Matrix& truth,
                              const Matrix& estimates, const Matrix* mse);

/// Summary statistics recomputed from per-area rows.
void summarize(MethodMetrics& m);

struct StudyConfig {
  int M = 500;
  std::uint64_t seed = 1;
  int threads = 1;
  // Share of replicates a method may fail before the study aborts.
  double max_failure_share = 0.05;
};

/// Monte Carlo study: every replicate regenerates the population, draws the
/// stratified sample and runs each method on it.
MetricsTable run_study(const Scenario& s, std::span<const SimulationMethod> methods, const StudyConfig& cfg);

}  // namespace gmerf
