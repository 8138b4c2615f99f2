#include "gmerf/serialize.hpp"

namespace gmerf {

namespace {

nlohmann::json to_json(const PqlTrace& trace) {
  nlohmann::json macro = nlohmann::json::array();
  for (const MacroStep& s : trace.macro) {
    macro.push_back({{"gll", s.micro.gll}, {"micro_capped", s.micro.capped}, {"eta_change", s.eta_change}});
  }
  return {{"macro", macro}, {"capped", trace.capped}};
}

PqlTrace trace_from_json(const nlohmann::json& j) {
  PqlTrace t;
  t.capped = j.at("capped").get<bool>();
  for (const auto& s : j.at("macro")) {
    MacroStep step;
    step.micro.gll = s.at("gll").get<std::vector<double>>();
    step.micro.capped = s.at("micro_capped").get<bool>();
    step.eta_change = s.at("eta_change").get<double>();
    t.macro.push_back(std::move(step));
  }
  return t;
}

// JSON object keys are strings; area ids are stored as [id, value] pairs.
template <class V>
nlohmann::json area_map(const std::map<AreaId, V>& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [id, v] : m) out.push_back({id, v});
  return out;
}

template <class V>
std::map<AreaId, V> area_map_from_json(const nlohmann::json& j) {
  std::map<AreaId, V> out;
  for (const auto& pair : j) out.emplace(pair.at(0).get<AreaId>(), pair.at(1).get<V>());
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string(what) + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const Forest& forest) {
  nlohmann::json trees = nlohmann::json::array();
  for (const Tree& tree : forest.trees()) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    for (const TreeNode& n : tree.nodes()) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back(
        {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
  }
  return {{"num_features", forest.num_features()}, {"num_train", forest.num_train()}, {"trees", trees}};
}

Forest forest_from_json(const nlohmann::json& j) {
  return guarded("forest", [&] {
    const auto p = j.at("num_features").get<Index>();
    std::vector<Tree> trees;
    for (const auto& t : j.at("trees")) {
      const auto feature = t.at("feature").get<std::vector<int>>();
      const auto threshold = t.at("threshold").get<std::vector<double>>();
      const auto left = t.at("left").get<std::vector<int>>();
      const auto right = t.at("right").get<std::vector<int>>();
      const auto value = t.at("value").get<std::vector<double>>();
      const std::size_t m = feature.size();
      if (threshold.size() != m || left.size() != m || right.size() != m || value.size() != m) {
        throw Error(ErrorKind::schema, "forest: tree arrays differ in length");
      }
      std::vector<TreeNode> nodes(m);
      for (std::size_t k = 0; k < m; ++k) {
        nodes[k] = {feature[k], threshold[k], left[k], right[k], value[k]};
        const bool leaf = feature[k] < 0;
        const auto in_range = [m](int c) { return c > 0 && static_cast<std::size_t>(c) < m; };
        if (!leaf && (feature[k] >= p || !in_range(left[k]) || !in_range(right[k]))) {
          throw Error(ErrorKind::schema, "forest: malformed node");
        }
      }
      trees.emplace_back(std::move(nodes));
    }
    return Forest(std::move(trees), p, j.at("num_train").get<Index>());
  });
}

nlohmann::json to_json(const GmerfConfig& cfg) {
  const ForestConfig& f = cfg.forest;
  return {{"pql",
           {{"gll_rel_tol", cfg.pql.gll_rel_tol},
            {"eta_rel_tol", cfg.pql.eta_rel_tol},
            {"max_micro", cfg.pql.max_micro},
            {"max_macro", cfg.pql.max_macro},
            {"mu_clamp_eps", cfg.pql.mu_clamp_eps}}},
          {"forest",
           {{"n_trees", f.n_trees},
            {"mtry", f.mtry ? nlohmann::json(*f.mtry) : nlohmann::json(nullptr)},
            {"min_node_size", f.min_node_size},
            {"sample_fraction", f.sample_fraction},
            {"seed", f.seed}}},
          {"area_mean", to_string(cfg.area_mean)}};
}

GmerfConfig gmerf_config_from_json(const nlohmann::json& j, GmerfConfig base) {
  return guarded("config", [&] {
    if (j.contains("pql")) {
      const auto& p = j.at("pql");
      base.pql.gll_rel_tol = p.value("gll_rel_tol", base.pql.gll_rel_tol);
      base.pql.eta_rel_tol = p.value("eta_rel_tol", base.pql.eta_rel_tol);
      base.pql.max_micro = p.value("max_micro", base.pql.max_micro);
      base.pql.max_macro = p.value("max_macro", base.pql.max_macro);
      base.pql.mu_clamp_eps = p.value("mu_clamp_eps", base.pql.mu_clamp_eps);
    }
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      base.forest.n_trees = f.value("n_trees", base.forest.n_trees);
      if (f.contains("mtry")) {
        base.forest.mtry = f.at("mtry").is_null() ? std::nullopt : std::optional<int>(f.at("mtry").get<int>());
      }
      base.forest.min_node_size = f.value("min_node_size", base.forest.min_node_size);
      base.forest.sample_fraction = f.value("sample_fraction", base.forest.sample_fraction);
      base.forest.seed = f.value("seed", base.forest.seed);
    }
    if (j.contains("area_mean")) base.area_mean = area_mean_from_string(j.at("area_mean").get<std::string>());
    return base;
  });
}

nlohmann::json to_json(const GmerfModel& model) {
  return {{"type", "gmerf"},
          {"forest", to_json(model.forest)},
          {"nu_hat", area_map(model.nu_hat)},
          {"sample_sizes", area_map(model.sample_sizes)},
          {"sigma2_nu", model.sigma2_nu},
          {"trace", to_json(model.trace)},
          {"fitted_eta", to_std(model.fitted_eta)},
          {"oob_degenerate", model.oob_degenerate},
          {"config", to_json(model.config)}};
}

GmerfModel gmerf_model_from_json(const nlohmann::json& j) {
  return guarded("model", [&] {
    if (j.at("type").get<std::string>() != "gmerf") throw Error(ErrorKind::schema, "model: not a GMERF model");
    return GmerfModel{forest_from_json(j.at("forest")),
                      area_map_from_json<double>(j.at("nu_hat")),
                      area_map_from_json<int>(j.at("sample_sizes")),
                      j.at("sigma2_nu").get<double>(),
                      trace_from_json(j.at("trace")),
                      to_eigen(j.at("fitted_eta").get<std::vector<double>>()),
                      j.at("oob_degenerate").get<Index>(),
                      gmerf_config_from_json(j.at("config"))};
  });
}

nlohmann::json to_json(const GlmmModel& model) {
  return {{"type", "glmm"},
          {"beta", to_std(model.beta)},
          {"nu_hat", area_map(model.nu_hat)},
          {"sample_sizes", area_map(model.sample_sizes)},
          {"sigma2_nu", model.sigma2_nu},
          {"trace", to_json(model.trace)},
          {"fitted_eta", to_std(model.fitted_eta)}};
}

GlmmModel glmm_model_from_json(const nlohmann::json& j) {
  return guarded("model", [&] {
    if (j.at("type").get<std::string>() != "glmm") throw Error(ErrorKind::schema, "model: not a GLMM model");
    return GlmmModel{to_eigen(j.at("beta").get<std::vector<double>>()),
                     area_map_from_json<double>(j.at("nu_hat")),
                     area_map_from_json<int>(j.at("sample_sizes")),
                     j.at("sigma2_nu").get<double>(),
                     trace_from_json(j.at("trace")),
                     to_eigen(j.at("fitted_eta").get<std::vector<double>>())};
  });
}

}  // namespace gmerf
