// Command-line front end: fit, predict, mse, simulate, tune, aggregate.
//
// Every subcommand accepts --config (a JSON run configuration or a sidecar
// written by an earlier run); flags given on the command line override it.
// Failures exit nonzero with a JSON object on stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmerf/bootstrap.hpp"
#include "gmerf/glmm.hpp"
#include "gmerf/gmerf.hpp"
#include "gmerf/io.hpp"
#include "gmerf/predict.hpp"
#include "gmerf/serialize.hpp"
#include "gmerf/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<std::string> survey, census, mapping, model, estimates, method;
  std::optional<double> poverty_line, poverty_fraction;
  std::optional<int> trees, mtry, min_node_size, max_micro, max_macro;
  std::optional<double> sample_fraction;
  std::optional<std::string> area_mean;
  std::optional<int> B, refit_trees;
  std::optional<std::string> scenario;
  std::optional<int> reps, bootstrap_B;
  std::optional<std::vector<std::string>> methods;
  std::optional<int> folds;
  std::optional<std::vector<int>> candidates;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw gmerf::Error(gmerf::ErrorKind::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw gmerf::Error(gmerf::ErrorKind::schema, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw gmerf::Error(gmerf::ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <class T, class U>
void override(T& target, const std::optional<U>& value) {
  if (value) target = *value;
}

gmerf::RunConfig resolve(const Flags& f) {
  gmerf::RunConfig cfg = f.config.empty() ? gmerf::RunConfig{} : gmerf::config_from_json(read_json(f.config));
  override(cfg.seed, f.seed);
  override(cfg.threads, f.threads);
  override(cfg.output_dir, f.out);
  override(cfg.survey, f.survey);
  override(cfg.census, f.census);
  override(cfg.mapping, f.mapping);
  override(cfg.model, f.model);
  override(cfg.estimates, f.estimates);
  override(cfg.method, f.method);
  if (f.poverty_line) cfg.poverty_line = gmerf::ThresholdSpec::literal(*f.poverty_line);
  if (f.poverty_fraction) cfg.poverty_line = gmerf::ThresholdSpec::median_fraction(*f.poverty_fraction);
  override(cfg.gmerf.forest.n_trees, f.trees);
  if (f.mtry) cfg.gmerf.forest.mtry = *f.mtry;
  override(cfg.gmerf.forest.min_node_size, f.min_node_size);
  override(cfg.gmerf.forest.sample_fraction, f.sample_fraction);
  override(cfg.gmerf.pql.max_micro, f.max_micro);
  override(cfg.gmerf.pql.max_macro, f.max_macro);
  if (f.area_mean) cfg.gmerf.area_mean = gmerf::area_mean_from_string(*f.area_mean);
  override(cfg.bootstrap.B, f.B);
  if (f.refit_trees) cfg.bootstrap.refit_trees = *f.refit_trees;
  if (f.scenario) {
    cfg.scenario = *f.scenario;
    cfg.scenario_spec.reset();
  }
  override(cfg.reps, f.reps);
  override(cfg.bootstrap_B_sim, f.bootstrap_B);
  override(cfg.methods, f.methods);
  override(cfg.folds, f.folds);
  override(cfg.mtry_candidates, f.candidates);
  gmerf::apply_seed(cfg);
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw gmerf::Error(gmerf::ErrorKind::invalid_input, std::string("missing required ") + flag);
}

struct Inputs {
  gmerf::SurveyFrame survey;
  std::optional<gmerf::CensusFrame> census;
};

Inputs load_inputs(const gmerf::RunConfig& cfg, bool need_census) {
  require(cfg.survey, "--survey");
  Inputs in{gmerf::load_survey(cfg.survey, cfg.poverty_line), std::nullopt};
  if (need_census || !cfg.census.empty()) {
    require(cfg.census, "--census");
    in.census = gmerf::load_census(cfg.census, in.survey.feature_names);
    gmerf::check_survey_census(in.survey, *in.census);
  }
  return in;
}

void set_flags(std::vector<gmerf::AreaEstimate>& est, const std::string& flags) {
  for (auto& e : est) e.flags = flags;
}

json diagnostics(std::span<const int> y, const gmerf::Vector& fitted_eta) {
  std::vector<double> p(static_cast<std::size_t>(fitted_eta.size()));
  for (gmerf::Index j = 0; j < fitted_eta.size(); ++j) p[static_cast<std::size_t>(j)] = gmerf::expit(fitted_eta[j]);
  json bins = json::array();
  const int n_bins = std::min<int>(10, static_cast<int>(p.size()));
  for (const auto& b : gmerf::calibration_bins(y, p, n_bins)) {
    bins.push_back({{"mean_score", b.mean_score}, {"mean_label", b.mean_label}, {"count", b.count}});
  }
  return {{"auc", gmerf::roc_auc(y, p)}, {"calibration", bins}};
}

json trace_summary(const gmerf::PqlTrace& t) {
  return {{"macro_iterations", t.macro.size()},
          {"micro_iterations", t.total_micro()},
          {"macro_capped", t.capped},
          {"micro_capped", t.any_micro_capped()}};
}

int cmd_fit(const gmerf::RunConfig& cfg, bool with_mse) {
  const fs::path out = cfg.output_dir;
  if (cfg.method == "direct") {
    const Inputs in = load_inputs(cfg, false);
    auto est = gmerf::direct_estimates(in.survey.area, in.survey.y);
    if (in.census) {
      const auto sizes = in.census->area_sizes();
      for (auto& e : est) e.N_i = sizes.at(e.area);
    }
    gmerf::emit_estimates(est, out / "estimates.csv", gmerf::make_sidecar("fit", cfg));
    return 0;
  }
  const Inputs in = load_inputs(cfg, true);
  const gmerf::CensusFrame& census = *in.census;
  json side = gmerf::make_sidecar(with_mse ? "mse" : "fit", cfg);
  if (in.survey.poverty_line) side["poverty_line_resolved"] = *in.survey.poverty_line;

  if (cfg.method == "cep") {
    if (with_mse) throw gmerf::Error(gmerf::ErrorKind::invalid_input, "bootstrap MSE is implemented for gmerf only");
    const auto model = gmerf::fit_glmm_pql(in.survey.y, in.survey.features, in.survey.area, cfg.gmerf.pql,
                                           in.survey.feature_names);
    auto est = gmerf::cep_area_proportions(model, census);
    set_flags(est, model.flags());
    json saved = gmerf::to_json(model);
    saved["feature_names"] = in.survey.feature_names;
    write_json(out / "model.json", saved);
    write_json(out / "diagnostics.json",
               json{{"in_sample", diagnostics(in.survey.y, model.fitted_eta)}, {"trace", trace_summary(model.trace)}});
    gmerf::emit_estimates(est, out / "estimates.csv", side);
    return 0;
  }
  if (cfg.method != "gmerf") {
    throw gmerf::Error(gmerf::ErrorKind::invalid_input, "unknown method '" + cfg.method + "'");
  }
  const auto model = gmerf::fit_gmerf(in.survey.y, in.survey.features, in.survey.area, cfg.gmerf);
  auto est = gmerf::area_proportions(model, census, cfg.threads);
  std::string flags = model.flags();
  if (with_mse) {
    const auto boot = gmerf::mse_parametric(model, census, model.sample_sizes, cfg.bootstrap);
    gmerf::attach_mse(est, boot.mse_by_area());
    if (!boot.failed.empty()) {
      flags += (flags.empty() ? "" : ";") + std::string("bootstrap_failures=") + std::to_string(boot.failed.size());
    }
    side["bootstrap_successes"] = boot.succeeded.size();
  }
  set_flags(est, flags);
  json saved = gmerf::to_json(model);
  saved["feature_names"] = in.survey.feature_names;
  write_json(out / "model.json", saved);
  write_json(out / "diagnostics.json", json{{"in_sample", diagnostics(in.survey.y, model.fitted_eta)},
                                            {"trace", trace_summary(model.trace)},
                                            {"sigma2_nu", model.sigma2_nu}});
  gmerf::emit_estimates(est, out / "estimates.csv", side);
  return 0;
}

int cmd_predict(const gmerf::RunConfig& cfg) {
  require(cfg.model, "--model");
  require(cfg.census, "--census");
  const json j = read_json(cfg.model);
  const std::string type = j.value("type", "");
  std::vector<gmerf::AreaEstimate> est;
  if (type == "glmm") {
    const auto model = gmerf::glmm_model_from_json(j);
    std::vector<std::string> names;
    for (gmerf::Index k = 1; k < model.beta.size(); ++k) names.push_back("x" + std::to_string(k));
    if (j.contains("feature_names")) names = j.at("feature_names").get<std::vector<std::string>>();
    const auto census = gmerf::load_census(cfg.census, names);
    est = gmerf::cep_area_proportions(model, census);
    set_flags(est, model.flags());
  } else {
    const auto model = gmerf::gmerf_model_from_json(j);
    std::vector<std::string> names;
    for (gmerf::Index k = 1; k <= model.forest.num_features(); ++k) names.push_back("x" + std::to_string(k));
    if (j.contains("feature_names")) names = j.at("feature_names").get<std::vector<std::string>>();
    const auto census = gmerf::load_census(cfg.census, names);
    est = gmerf::area_proportions(model, census, cfg.threads);
    set_flags(est, model.flags());
  }
  gmerf::emit_estimates(est, fs::path(cfg.output_dir) / "estimates.csv", gmerf::make_sidecar("predict", cfg));
  return 0;
}

int cmd_simulate(const gmerf::RunConfig& cfg) {
  gmerf::Scenario scenario;
  if (cfg.scenario_spec) {
    scenario = *cfg.scenario_spec;
  } else if (cfg.scenario.ends_with(".json")) {
    scenario = gmerf::scenario_from_json(read_json(cfg.scenario));
  } else {
    scenario = gmerf::builtin_scenario(cfg.scenario);
  }
  std::vector<gmerf::SimulationMethod> methods;
  for (const std::string& m : cfg.methods) {
    if (m == "gmerf") {
      std::optional<gmerf::BootstrapConfig> boot;
      if (cfg.bootstrap_B_sim > 0) {
        boot = cfg.bootstrap;
        boot->B = cfg.bootstrap_B_sim;
      }
      methods.push_back(gmerf::gmerf_method(cfg.gmerf, boot));
    } else if (m == "cep") {
      methods.push_back(gmerf::cep_method(cfg.gmerf.pql));
    } else if (m == "direct") {
      methods.push_back(gmerf::direct_method());
    } else {
      throw gmerf::Error(gmerf::ErrorKind::invalid_input, "unknown simulation method '" + m + "'");
    }
  }
  const auto table = gmerf::run_study(scenario, methods, {cfg.reps, cfg.seed, cfg.threads, 0.05});
  json side = gmerf::make_sidecar("simulate", cfg);
  side["scenario_resolved"] = gmerf::to_json(scenario);
  gmerf::emit_report(table, fs::path(cfg.output_dir) / "report.csv", side);
  for (const auto& m : table.methods) {
    std::cout << m.name << ": median RB " << 100 * m.median.rb << "%, median RRMSE " << 100 * m.median.rrmse << "%";
    if (m.has_mse) std::cout << ", median RB-RMSE " << 100 * m.median.rb_rmse << "%";
    std::cout << '\n';
  }
  return 0;
}

int cmd_tune(const gmerf::RunConfig& cfg) {
  const Inputs in = load_inputs(cfg, false);
  const auto n = static_cast<gmerf::Index>(in.survey.y.size());
  gmerf::Vector y(n);
  for (gmerf::Index j = 0; j < n; ++j) y[j] = in.survey.y[static_cast<std::size_t>(j)];
  const gmerf::Vector w = gmerf::Vector::Ones(n);
  std::vector<int> candidates = cfg.mtry_candidates;
  if (candidates.empty()) {
    for (int c = 1; c <= in.survey.features.cols(); ++c) candidates.push_back(c);
  }
  const auto result = gmerf::tune_mtry({in.survey.features, y, w}, cfg.folds, candidates, cfg.gmerf.forest);
  const json j{{"mtry", result.mtry}, {"candidates", result.candidates}, {"cv_error", result.cv_error},
               {"folds", cfg.folds}, {"seed", cfg.seed}};
  write_json(fs::path(cfg.output_dir) / "tune.json", j);
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_aggregate(const gmerf::RunConfig& cfg) {
  require(cfg.estimates, "--estimates");
  require(cfg.mapping, "--mapping");
  const auto est = gmerf::load_estimates(cfg.estimates);
  const auto districts = gmerf::aggregate(est, gmerf::load_mapping(cfg.mapping));
  gmerf::emit_estimates(districts, fs::path(cfg.output_dir) / "districts.csv", gmerf::make_sidecar("aggregate", cfg));
  return 0;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run configuration or sidecar to replay");
  app->add_option("--seed", f.seed, "global seed");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_option("--out", f.out, "output directory");
}

void add_model_flags(CLI::App* app, Flags& f) {
  app->add_option("--survey", f.survey, "survey CSV (area_id, x*, y or income)");
  app->add_option("--census", f.census, "census CSV (area_id, x*)");
  app->add_option("--method", f.method, "gmerf | cep | direct");
  app->add_option("--poverty-line", f.poverty_line, "literal poverty line for an income column");
  app->add_option("--poverty-line-median-fraction", f.poverty_fraction, "poverty line as a fraction of the median");
  app->add_option("--trees", f.trees, "number of trees");
  app->add_option("--mtry", f.mtry, "split candidates per node");
  app->add_option("--min-node-size", f.min_node_size, "minimum node size");
  app->add_option("--sample-fraction", f.sample_fraction, "resample size as a fraction of n");
  app->add_option("--max-micro", f.max_micro, "cap on inner iterations");
  app->add_option("--max-macro", f.max_macro, "cap on outer iterations");
  app->add_option("--area-mean", f.area_mean, "unit_probability | linear_predictor");
}

void fail(std::string_view kind, std::string_view message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small area proportions with generalized mixed effects random forests"};
  app.require_subcommand(1);
  Flags f;

  auto* fit = app.add_subcommand("fit", "fit a model and write area estimates");
  add_common(fit, f);
  add_model_flags(fit, f);

  auto* mse = app.add_subcommand("mse", "fit a GMERF and add parametric bootstrap MSE and CV");
  add_common(mse, f);
  add_model_flags(mse, f);
  mse->add_option("--B", f.B, "bootstrap replicates");
  mse->add_option("--refit-trees", f.refit_trees, "trees per bootstrap refit");

  auto* pred = app.add_subcommand("predict", "area estimates from a saved model");
  add_common(pred, f);
  pred->add_option("--model", f.model, "model.json written by fit");
  pred->add_option("--census", f.census, "census CSV");

  auto* sim = app.add_subcommand("simulate", "model-based Monte Carlo study");
  add_common(sim, f);
  sim->add_option("--scenario", f.scenario, "builtin scenario name or scenario JSON file");
  sim->add_option("--reps", f.reps, "Monte Carlo replicates");
  sim->add_option("--methods", f.methods, "methods: gmerf cep direct")->delimiter(',');
  sim->add_option("--bootstrap-B", f.bootstrap_B, "bootstrap replicates per GMERF fit (0 = none)");
  sim->add_option("--trees", f.trees, "number of trees");
  sim->add_option("--mtry", f.mtry, "split candidates per node");
  sim->add_option("--refit-trees", f.refit_trees, "trees per bootstrap refit");
  sim->add_option("--area-mean", f.area_mean, "unit_probability | linear_predictor");
  sim->add_option("--max-micro", f.max_micro, "cap on inner iterations");
  sim->add_option("--max-macro", f.max_macro, "cap on outer iterations");

  auto* tune = app.add_subcommand("tune", "cross-validated choice of mtry");
  add_common(tune, f);
  tune->add_option("--survey", f.survey, "survey CSV");
  tune->add_option("--poverty-line", f.poverty_line, "literal poverty line for an income column");
  tune->add_option("--poverty-line-median-fraction", f.poverty_fraction, "poverty line as a fraction of the median");
  tune->add_option("--folds", f.folds, "number of folds");
  tune->add_option("--candidates", f.candidates, "mtry candidates")->delimiter(',');
  tune->add_option("--trees", f.trees, "number of trees");

  auto* agg = app.add_subcommand("aggregate", "population-weighted district estimates");
  add_common(agg, f);
  agg->add_option("--estimates", f.estimates, "estimates.csv");
  agg->add_option("--mapping", f.mapping, "CSV with area_id, district_id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    const gmerf::RunConfig cfg = resolve(f);
    if (fit->parsed()) return cmd_fit(cfg, false);
    if (mse->parsed()) return cmd_fit(cfg, true);
    if (pred->parsed()) return cmd_predict(cfg);
    if (sim->parsed()) return cmd_simulate(cfg);
    if (tune->parsed()) return cmd_tune(cfg);
    if (agg->parsed()) return cmd_aggregate(cfg);
  } catch (const gmerf::Error& e) {
    fail(gmerf::to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 1;
}
