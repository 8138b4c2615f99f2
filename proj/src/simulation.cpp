#include "gmerf/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "gmerf/glmm.hpp"
#include "gmerf/parallel.hpp"
#include "gmerf/random.hpp"

namespace gmerf {

namespace {

constexpr std::uint64_t kPopulationStream = 0x706f70ULL;
constexpr std::uint64_t kSampleStream = 0x73616d70ULL;
constexpr std::uint64_t kMethodStream = 0x6d657468ULL;

constexpr std::array<const char*, 6> kTerms{"1", "x1", "x2", "x1:x2", "x1^2", "x2^2"};

double median_of(std::vector<double> v) {
  std::erase_if(v, [](double x) { return std::isnan(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

Vector to_vector(const std::vector<AreaEstimate>& est) {
  Vector v(static_cast<Index>(est.size()));
  for (std::size_t i = 0; i < est.size(); ++i) v[static_cast<Index>(i)] = est[i].mu_hat;
  return v;
}

}  // namespace

double Predictor::operator()(double x1, double x2) const {
  double eta = 0.0;
  for (const auto& [term, c] : coefficients) {
    if (term == "1") {
      eta += c;
    } else if (term == "x1") {
      eta += c * x1;
    } else if (term == "x2") {
      eta += c * x2;
    } else if (term == "x1:x2") {
      eta += c * x1 * x2;
    } else if (term == "x1^2") {
      eta += c * x1 * x1;
    } else if (term == "x2^2") {
      eta += c * x2 * x2;
    } else {
      throw Error(ErrorKind::invalid_input, "unknown predictor term '" + term + "'");
    }
  }
  return eta;
}

bool Predictor::is_known_term(std::string_view term) {
  return std::find(kTerms.begin(), kTerms.end(), term) != kTerms.end();
}

void Scenario::validate() const {
  if (D < 1 || N_i < 1) throw Error(ErrorKind::invalid_input, "scenario needs D >= 1 and N_i >= 1");
  if (static_cast<int>(allocation.size()) != D) {
    throw Error(ErrorKind::invalid_input, "scenario allocation has " + std::to_string(allocation.size()) +
                                              " entries for " + std::to_string(D) + " areas");
  }
  for (int n : allocation) {
    if (n < 1 || n > N_i) throw Error(ErrorKind::invalid_input, "scenario allocation entries must lie in [1, N_i]");
  }
  if (!(sigma2_nu >= 0.0) || !std::isfinite(sigma2_nu)) {
    throw Error(ErrorKind::invalid_input, "scenario sigma2_nu must be finite and nonnegative");
  }
  if (!(x1_law.sd >= 0.0) || !(x2_law.sd >= 0.0)) {
    throw Error(ErrorKind::invalid_input, "covariate standard deviations must be nonnegative");
  }
  for (const auto& [term, c] : predictor.coefficients) {
    if (!Predictor::is_known_term(term)) throw Error(ErrorKind::invalid_input, "unknown predictor term '" + term + "'");
    if (!std::isfinite(c)) throw Error(ErrorKind::invalid_input, "predictor coefficient for '" + term + "' is not finite");
  }
}

const std::vector<int>& default_allocation() {
  static const std::vector<int> allocation{
      13, 16, 11, 15, 10, 26, 10, 12, 14, 14, 20, 18, 15, 9,  1,  23, 13, 11, 13, 20, 25, 13, 28, 8,  18,
      12, 16, 2,  19, 12, 17, 12, 21, 13, 14, 6,  3,  11, 15, 22, 17, 13, 7,  16, 5,  4,  19, 13, 9,  13};
  return allocation;
}

std::vector<std::string> builtin_scenario_names() {
  return {"normal_small", "interaction_small", "normal_large", "interaction_large"};
}

Scenario builtin_scenario(std::string_view name) {
  Scenario s;
  s.name = std::string(name);
  s.x1_law = {0.0, 2.0};
  s.x2_law = {0.0, 3.0};
  s.D = 50;
  s.N_i = 1000;
  s.allocation = default_allocation();
  const std::map<std::string, double> normal_small{{"1", 0.5}, {"x1", -0.8}, {"x2", -0.6}};
  const std::map<std::string, double> normal_large{{"1", 0.5}, {"x1", -0.1}, {"x2", -0.2}};
  const std::map<std::string, double> interaction{{"1", 1.0}, {"x1:x2", -1.0}, {"x1^2", -0.6}};
  if (name == "normal_small") {
    s.predictor.coefficients = normal_small;
    s.sigma2_nu = 0.1;
  } else if (name == "interaction_small") {
    s.predictor.coefficients = interaction;
    s.sigma2_nu = 0.1;
  } else if (name == "normal_large") {
    s.predictor.coefficients = normal_large;
    s.sigma2_nu = 1.0;
  } else if (name == "interaction_large") {
    s.predictor.coefficients = interaction;
    s.sigma2_nu = 1.0;
  } else {
    throw Error(ErrorKind::invalid_input, "unknown scenario '" + std::string(name) + "'");
  }
  return s;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.name = j.value("name", std::string("custom"));
    for (const auto& [term, c] : j.at("predictor").items()) s.predictor.coefficients[term] = c.get<double>();
    s.x1_law = {j.at("x1").at("mean").get<double>(), j.at("x1").at("sd").get<double>()};
    s.x2_law = {j.at("x2").at("mean").get<double>(), j.at("x2").at("sd").get<double>()};
    s.sigma2_nu = j.at("sigma2_nu").get<double>();
    s.D = j.at("D").get<int>();
    s.N_i = j.at("N_i").get<int>();
    s.allocation = j.contains("allocation") ? j.at("allocation").get<std::vector<int>>() : default_allocation();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["predictor"] = s.predictor.coefficients;
  j["x1"] = {{"mean", s.x1_law.mean}, {"sd", s.x1_law.sd}};
  j["x2"] = {{"mean", s.x2_law.mean}, {"sd", s.x2_law.sd}};
  j["sigma2_nu"] = s.sigma2_nu;
  j["D"] = s.D;
  j["N_i"] = s.N_i;
  j["allocation"] = s.allocation;
  return j;
}

double vpc(double sigma2_nu) {
  return sigma2_nu / (sigma2_nu + std::numbers::pi * std::numbers::pi / 3.0);
}

Population generate_population(const Scenario& s, std::uint64_t seed) {
  s.validate();
  Rng rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const double nu_sd = std::sqrt(s.sigma2_nu);

  Population pop;
  pop.nu.resize(s.D);
  for (int i = 0; i < s.D; ++i) pop.nu[i] = nu_sd * std_normal(rng);

  const Index n = static_cast<Index>(s.D) * s.N_i;
  pop.census.features.resize(n, 2);
  pop.census.feature_names = {"x1", "x2"};
  pop.census.area.resize(static_cast<std::size_t>(n));
  pop.eta.resize(n);
  pop.mu.resize(n);
  pop.y.resize(static_cast<std::size_t>(n));
  pop.truth = Vector::Zero(s.D);
  for (int i = 0; i < s.D; ++i) {
    pop.areas.push_back(i + 1);
    for (int k = 0; k < s.N_i; ++k) {
      const Index j = static_cast<Index>(i) * s.N_i + k;
      const double x1 = s.x1_law.mean + s.x1_law.sd * std_normal(rng);
      const double x2 = s.x2_law.mean + s.x2_law.sd * std_normal(rng);
      pop.census.features(j, 0) = x1;
      pop.census.features(j, 1) = x2;
      pop.census.area[static_cast<std::size_t>(j)] = i + 1;
      pop.eta[j] = s.predictor(x1, x2) + pop.nu[i];
      pop.mu[j] = expit(pop.eta[j]);
      const int y = uniform01(rng) < pop.mu[j] ? 1 : 0;
      pop.y[static_cast<std::size_t>(j)] = y;
      pop.truth[i] += y;
    }
    pop.truth[i] /= s.N_i;
  }
  return pop;
}

SurveySample draw_sample(const Population& pop, std::span<const int> allocation, std::uint64_t seed) {
  const auto d = pop.areas.size();
  if (allocation.size() != d) throw Error(ErrorKind::invalid_input, "allocation length does not match the areas");
  std::vector<std::vector<Index>> rows_of(d);
  for (std::size_t j = 0; j < pop.census.area.size(); ++j) {
    const auto it = std::lower_bound(pop.areas.begin(), pop.areas.end(), pop.census.area[j]);
    rows_of[static_cast<std::size_t>(it - pop.areas.begin())].push_back(static_cast<Index>(j));
  }
  Rng rng(seed);
  SurveySample sample;
  for (std::size_t i = 0; i < d; ++i) {
    auto& rows = rows_of[i];
    const auto n_i = static_cast<std::size_t>(allocation[i]);
    if (allocation[i] < 0 || n_i > rows.size()) {
      throw Error(ErrorKind::invalid_input, "allocation exceeds the population of area " + std::to_string(pop.areas[i]));
    }
    for (std::size_t k = 0; k < n_i; ++k) {
      const std::size_t pick = k + static_cast<std::size_t>(rng() % (rows.size() - k));
      std::swap(rows[k], rows[pick]);
      sample.rows.push_back(rows[k]);
    }
  }
  std::sort(sample.rows.begin(), sample.rows.end());
  sample.features = pop.census.features(sample.rows, Eigen::all);
  for (Index r : sample.rows) {
    sample.area.push_back(pop.census.area[static_cast<std::size_t>(r)]);
    sample.y.push_back(pop.y[static_cast<std::size_t>(r)]);
  }
  return sample;
}

SimulationMethod gmerf_method(const GmerfConfig& cfg, std::optional<BootstrapConfig> bootstrap) {
  return {"GMERF", [cfg, bootstrap](const ReplicateContext& ctx) {
            GmerfConfig local = cfg;
            local.forest.seed = derive_seed(ctx.seed, 1);
            local.forest.threads = 1;
            const GmerfModel model = fit_gmerf(ctx.sample.y, ctx.sample.features, ctx.sample.area, local);
            MethodOutput out{to_vector(area_proportions(model, ctx.population.census)), std::nullopt};
            if (bootstrap) {
              BootstrapConfig b = *bootstrap;
              b.seed = derive_seed(ctx.seed, 2);
              b.threads = 1;
              out.mse = mse_parametric(model, ctx.population.census, model.sample_sizes, b).mse;
            }
            return out;
          }};
}

SimulationMethod cep_method(const PqlControl& ctl) {
  return {"CEP", [ctl](const ReplicateContext& ctx) {
            const GlmmModel model = fit_glmm_pql(ctx.sample.y, ctx.sample.features, ctx.sample.area, ctl);
            return MethodOutput{to_vector(cep_area_proportions(model, ctx.population.census)), std::nullopt};
          }};
}

SimulationMethod direct_method() {
  return {"Direct", [](const ReplicateContext& ctx) {
            const auto est = direct_estimates(ctx.sample.area, ctx.sample.y);
            if (est.size() != ctx.population.areas.size()) {
              throw Error(ErrorKind::insufficient_data, "direct estimator needs a sample in every area");
            }
            return MethodOutput{to_vector(est), std::nullopt};
          }};
}

const MethodMetrics& MetricsTable::method(std::string_view name) const {
  for (const MethodMetrics& m : methods) {
    if (m.name == name) return m;
  }
  throw Error(ErrorKind::invalid_input, "no method named '" + std::string(name) + "' in the metrics table");
}

MethodMetrics compute_metrics(std::string name, std::span<const AreaId> areas, const Matrix& truth,
                              const Matrix& estimates, const Matrix* mse) {
  const Index m_count = truth.rows();
  const Index d = truth.cols();
  if (estimates.rows() != m_count || estimates.cols() != d || static_cast<Index>(areas.size()) != d ||
      (mse && (mse->rows() != m_count || mse->cols() != d))) {
    throw Error(ErrorKind::invalid_input, "metric inputs have inconsistent shapes");
  }
  if (m_count < 1) throw Error(ErrorKind::insufficient_data, "metrics need at least one replicate");
  MethodMetrics out;
  out.name = std::move(name);
  out.replicates = static_cast<int>(m_count);
  out.has_mse = mse != nullptr;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Index i = 0; i < d; ++i) {
    AreaMetrics a;
    a.area = areas[static_cast<std::size_t>(i)];
    const auto err = (estimates.col(i) - truth.col(i)).array();
    a.rb = (err / truth.col(i).array()).mean();
    a.rmse_emp = std::sqrt(err.square().mean());
    a.rrmse = a.rmse_emp / truth.col(i).mean();
    if (mse) {
      const auto est_mse = mse->col(i).array();
      a.rb_rmse = (std::sqrt(est_mse.mean()) - a.rmse_emp) / a.rmse_emp;
      a.rrmse_rmse = std::sqrt((est_mse.sqrt() - a.rmse_emp).square().mean()) / a.rmse_emp;
    } else {
      a.rb_rmse = nan;
      a.rrmse_rmse = nan;
    }
    out.areas.push_back(a);
  }
  summarize(out);
  return out;
}

void summarize(MethodMetrics& m) {
  auto column = [&](auto member) {
    std::vector<double> v;
    for (const AreaMetrics& a : m.areas) v.push_back(a.*member);
    return v;
  };
  const auto rb = column(&AreaMetrics::rb);
  const auto rrmse = column(&AreaMetrics::rrmse);
  const auto rb_rmse = column(&AreaMetrics::rb_rmse);
  const auto rrmse_rmse = column(&AreaMetrics::rrmse_rmse);
  m.mean = {mean_of(rb), mean_of(rrmse), mean_of(rb_rmse), mean_of(rrmse_rmse)};
  m.median = {median_of(rb), median_of(rrmse), median_of(rb_rmse), median_of(rrmse_rmse)};
}

MetricsTable run_study(const Scenario& s, std::span<const SimulationMethod> methods, const StudyConfig& cfg) {
  s.validate();
  if (cfg.M < 1) throw Error(ErrorKind::invalid_input, "study needs M >= 1");
  if (methods.empty()) throw Error(ErrorKind::invalid_input, "study needs at least one method");
  const auto m_count = static_cast<std::size_t>(cfg.M);
  const auto k_count = methods.size();

  struct Replicate {
    Vector truth;
    std::vector<std::optional<MethodOutput>> outputs;
  };
  std::vector<Replicate> reps(m_count);
  parallel_for(m_count, cfg.threads, [&](std::size_t m) {
    const Population pop = generate_population(s, derive_seed(cfg.seed, kPopulationStream, m));
    const SurveySample sample = draw_sample(pop, s.allocation, derive_seed(cfg.seed, kSampleStream, m));
    const ReplicateContext ctx{pop, sample, derive_seed(cfg.seed, kMethodStream, m), static_cast<int>(m)};
    Replicate& rep = reps[m];
    rep.truth = pop.truth;
    rep.outputs.resize(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      try {
        MethodOutput out = methods[k].run(ctx);
        if (out.mu_hat.size() != s.D || (out.mse && out.mse->size() != s.D)) {
          throw Error(ErrorKind::method_failure, "method output has the wrong length");
        }
        rep.outputs[k] = std::move(out);
      } catch (const std::exception& e) {
        warn(methods[k].name + " failed in replicate " + std::to_string(m) + ": " + e.what());
      }
    }
  });

  MetricsTable table;
  table.scenario = s.name;
  table.M = cfg.M;
  table.seed = cfg.seed;
  std::vector<AreaId> areas(static_cast<std::size_t>(s.D));
  for (int i = 0; i < s.D; ++i) areas[static_cast<std::size_t>(i)] = i + 1;
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<std::size_t> good;
    for (std::size_t m = 0; m < m_count; ++m) {
      if (reps[m].outputs[k]) good.push_back(m);
    }
    const int failures = static_cast<int>(m_count - good.size());
    if (good.empty() || failures > cfg.max_failure_share * static_cast<double>(m_count)) {
      throw Error(ErrorKind::method_failure, "method " + methods[k].name + " failed in " + std::to_string(failures) +
                                                 " of " + std::to_string(m_count) + " replicates");
    }
    const bool with_mse = std::all_of(good.begin(), good.end(), [&](std::size_t m) {
      return reps[m].outputs[k]->mse.has_value();
    });
    Matrix truth(static_cast<Index>(good.size()), s.D), est(truth.rows(), s.D), mse(truth.rows(), s.D);
    for (std::size_t r = 0; r < good.size(); ++r) {
      const Replicate& rep = reps[good[r]];
      truth.row(static_cast<Index>(r)) = rep.truth.transpose();
      est.row(static_cast<Index>(r)) = rep.outputs[k]->mu_hat.transpose();
      if (with_mse) mse.row(static_cast<Index>(r)) = rep.outputs[k]->mse->transpose();
    }
    MethodMetrics mm = compute_metrics(methods[k].name, areas, truth, est, with_mse ? &mse : nullptr);
    mm.failures = failures;
    table.methods.push_back(std::move(mm));
  }
  return table;
}

}  // namespace gmerf
