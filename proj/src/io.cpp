#include "gmerf/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gmerf/random.hpp"
#include "gmerf/serialize.hpp"

namespace gmerf {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kForestSeedStream = 0x666f72ULL;
constexpr std::uint64_t kBootstrapSeedStream = 0x627374ULL;

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::vector<std::string> split_line(const std::string& line, const fs::path& path, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::schema, where(path, line_no) + ": unterminated quote");
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string nan_field(double v) { return std::isnan(v) ? std::string() : format_double(v); }

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  return out;
}

void write_sidecar(const fs::path& path, const nlohmann::json& sidecar) {
  if (sidecar.is_null()) return;
  std::ofstream out = open_output(fs::path(path.string() + ".json"));
  out << sidecar.dump(2) << '\n';
}

std::size_t require_column(const CsvTable& t, std::string_view name, const fs::path& path) {
  const auto c = t.column(name);
  if (!c) throw Error(ErrorKind::schema, path.string() + ": missing column '" + std::string(name) + "'");
  return *c;
}

template <class T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::optional<std::size_t> CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line.empty()) continue;
    auto fields = split_line(line, path, line_no);
    if (table.header.empty()) {
      table.header = std::move(fields);
      std::set<std::string> seen;
      for (const auto& h : table.header) {
        if (!seen.insert(h).second) throw Error(ErrorKind::schema, path.string() + ": duplicate column '" + h + "'");
      }
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(ErrorKind::schema, where(path, line_no) + ": expected " + std::to_string(table.header.size()) +
                                         " fields, found " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw Error(ErrorKind::schema, path.string() + ": empty file");
  return table;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw Error(ErrorKind::schema, std::string(what) + ": '" + std::string(text) + "' is not a finite number");
  }
  return v;
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw Error(ErrorKind::schema, std::string(what) + ": '" + std::string(text) + "' is not an integer");
  }
  return v;
}

Binarized binarize_income(std::span<const double> income, const ThresholdSpec& spec) {
  for (double z : income) {
    if (!std::isfinite(z)) throw Error(ErrorKind::invalid_input, "income values must be finite");
  }
  Binarized out;
  if (spec.kind == ThresholdSpec::Kind::literal) {
    if (std::isnan(spec.value)) throw Error(ErrorKind::invalid_input, "poverty line is NaN");
    out.threshold = spec.value;
  } else {
    if (income.empty()) throw Error(ErrorKind::insufficient_data, "median of an empty income vector");
    std::vector<double> sorted(income.begin(), income.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size() / 2;
    const double median = sorted.size() % 2 == 1 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    out.threshold = spec.value * median;
  }
  out.y.reserve(income.size());
  for (double z : income) out.y.push_back(z <= out.threshold ? 1 : 0);
  return out;
}

SurveyFrame load_survey(const fs::path& path, std::optional<ThresholdSpec> threshold) {
  const CsvTable t = read_csv(path);
  const std::size_t area_col = require_column(t, "area_id", path);
  std::vector<std::size_t> x_cols;
  SurveyFrame s;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].starts_with('x')) {
      x_cols.push_back(c);
      s.feature_names.push_back(t.header[c]);
    }
  }
  if (x_cols.empty()) throw Error(ErrorKind::schema, path.string() + ": no covariate columns (x*)");
  const auto y_col = t.column("y");
  const auto income_col = t.column("income");
  if (!y_col && !income_col) throw Error(ErrorKind::schema, path.string() + ": missing column 'y' (or 'income')");
  if (!y_col && !threshold) {
    throw Error(ErrorKind::schema, path.string() + ": 'income' column needs a poverty line");
  }
  if (t.rows.empty()) throw Error(ErrorKind::insufficient_data, path.string() + ": no data rows");

  const auto n = static_cast<Index>(t.rows.size());
  s.features.resize(n, static_cast<Index>(x_cols.size()));
  std::vector<double> income;
  for (Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    const std::string ctx = where(path, static_cast<std::size_t>(r) + 2);
    s.area.push_back(parse_int(row[area_col], ctx + " area_id"));
    for (std::size_t k = 0; k < x_cols.size(); ++k) {
      s.features(r, static_cast<Index>(k)) = parse_double(row[x_cols[k]], ctx + " " + t.header[x_cols[k]]);
    }
    if (y_col) {
      const std::string& v = row[*y_col];
      if (v != "0" && v != "1") throw Error(ErrorKind::schema, ctx + " y: '" + v + "' is not 0 or 1");
      s.y.push_back(v == "1" ? 1 : 0);
    } else {
      income.push_back(parse_double(row[*income_col], ctx + " income"));
    }
  }
  if (!y_col) {
    Binarized b = binarize_income(income, *threshold);
    s.y = std::move(b.y);
    s.poverty_line = b.threshold;
  }
  return s;
}

CensusFrame load_census(const fs::path& path, std::span<const std::string> feature_names) {
  const CsvTable t = read_csv(path);
  const std::size_t area_col = require_column(t, "area_id", path);
  std::vector<std::size_t> cols;
  for (const std::string& name : feature_names) {
    const auto c = t.column(name);
    if (!c) throw Error(ErrorKind::schema, path.string() + ": census is missing covariate '" + name + "'");
    cols.push_back(*c);
  }
  if (t.rows.empty()) throw Error(ErrorKind::insufficient_data, path.string() + ": no data rows");
  CensusFrame census;
  census.feature_names.assign(feature_names.begin(), feature_names.end());
  const auto n = static_cast<Index>(t.rows.size());
  census.features.resize(n, static_cast<Index>(cols.size()));
  for (Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    const std::string ctx = where(path, static_cast<std::size_t>(r) + 2);
    census.area.push_back(parse_int(row[area_col], ctx + " area_id"));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      census.features(r, static_cast<Index>(k)) = parse_double(row[cols[k]], ctx + " " + feature_names[k]);
    }
  }
  return census;
}

void check_survey_census(const SurveyFrame& survey, const CensusFrame& census) {
  if (survey.feature_names != census.feature_names) {
    throw Error(ErrorKind::schema, "survey and census covariates differ");
  }
  const std::set<AreaId> census_areas(census.area.begin(), census.area.end());
  for (AreaId a : std::set<AreaId>(survey.area.begin(), survey.area.end())) {
    if (!census_areas.contains(a)) {
      throw Error(ErrorKind::schema, "area " + std::to_string(a) + " is in the survey but not in the census");
    }
  }
}

std::map<AreaId, AreaId> load_mapping(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t a = require_column(t, "area_id", path);
  const std::size_t d = require_column(t, "district_id", path);
  std::map<AreaId, AreaId> mapping;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string ctx = where(path, r + 2);
    const AreaId area = parse_int(t.rows[r][a], ctx + " area_id");
    const AreaId district = parse_int(t.rows[r][d], ctx + " district_id");
    if (!mapping.emplace(area, district).second) {
      throw Error(ErrorKind::schema, ctx + ": area " + std::to_string(area) + " mapped twice");
    }
  }
  return mapping;
}

void emit_estimates(const std::vector<AreaEstimate>& estimates, const fs::path& path,
                    const nlohmann::json& sidecar) {
  std::ofstream out = open_output(path);
  out << "area_id,n_i,N_i,in_sample,mu_hat,mse,cv,flags\n";
  for (const AreaEstimate& e : estimates) {
    out << e.area << ',' << e.n_i << ',' << e.N_i << ',' << (e.in_sample ? 1 : 0) << ',' << format_double(e.mu_hat)
        << ',' << optional_field(e.mse) << ',' << optional_field(e.cv) << ',' << csv_field(e.flags) << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
  write_sidecar(path, sidecar);
}

std::vector<AreaEstimate> load_estimates(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_area = require_column(t, "area_id", path);
  const std::size_t c_n = require_column(t, "n_i", path);
  const std::size_t c_N = require_column(t, "N_i", path);
  const std::size_t c_in = require_column(t, "in_sample", path);
  const std::size_t c_mu = require_column(t, "mu_hat", path);
  const std::size_t c_mse = require_column(t, "mse", path);
  const std::size_t c_cv = require_column(t, "cv", path);
  const auto c_flags = t.column("flags");
  std::vector<AreaEstimate> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = where(path, r + 2);
    AreaEstimate e;
    e.area = parse_int(row[c_area], ctx + " area_id");
    e.n_i = static_cast<int>(parse_int(row[c_n], ctx + " n_i"));
    e.N_i = static_cast<int>(parse_int(row[c_N], ctx + " N_i"));
    const std::string& in = row[c_in];
    if (in != "0" && in != "1") throw Error(ErrorKind::schema, ctx + " in_sample: '" + in + "' is not 0 or 1");
    e.in_sample = in == "1";
    e.mu_hat = parse_double(row[c_mu], ctx + " mu_hat");
    if (!row[c_mse].empty()) e.mse = parse_double(row[c_mse], ctx + " mse");
    if (!row[c_cv].empty()) e.cv = parse_double(row[c_cv], ctx + " cv");
    if (c_flags) e.flags = row[*c_flags];
    out.push_back(std::move(e));
  }
  return out;
}

void emit_report(const MetricsTable& metrics, const fs::path& path, const nlohmann::json& sidecar) {
  std::ofstream out = open_output(path);
  out << "method,stat,area_id,rb,rrmse,rb_rmse,rrmse_rmse,rmse_emp,replicates,failures\n";
  for (const MethodMetrics& m : metrics.methods) {
    const std::string tail = ',' + std::to_string(m.replicates) + ',' + std::to_string(m.failures) + '\n';
    for (const AreaMetrics& a : m.areas) {
      out << csv_field(m.name) << ",area," << a.area << ',' << nan_field(a.rb) << ',' << nan_field(a.rrmse) << ','
          << nan_field(a.rb_rmse) << ',' << nan_field(a.rrmse_rmse) << ',' << nan_field(a.rmse_emp) << tail;
    }
    for (const auto& [stat, s] : {std::pair{"mean", m.mean}, std::pair{"median", m.median}}) {
      out << csv_field(m.name) << ',' << stat << ",," << nan_field(s.rb) << ',' << nan_field(s.rrmse) << ','
          << nan_field(s.rb_rmse) << ',' << nan_field(s.rrmse_rmse) << ',' << tail;
    }
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
  write_sidecar(path, sidecar);
}

RunConfig config_from_json(const nlohmann::json& input) {
  const nlohmann::json& j = input.contains("config") && input.contains("command") ? input.at("config") : input;
  RunConfig cfg;
  try {
    cfg.survey = json_get(j, "survey", cfg.survey);
    cfg.census = json_get(j, "census", cfg.census);
    cfg.mapping = json_get(j, "mapping", cfg.mapping);
    cfg.model = json_get(j, "model", cfg.model);
    cfg.estimates = json_get(j, "estimates", cfg.estimates);
    cfg.method = json_get(j, "method", cfg.method);
    cfg.output_dir = json_get(j, "output_dir", cfg.output_dir);
    cfg.seed = json_get(j, "seed", cfg.seed);
    cfg.threads = json_get(j, "threads", cfg.threads);
    if (j.contains("poverty_line") && !j.at("poverty_line").is_null()) {
      const auto& p = j.at("poverty_line");
      if (p.contains("value")) {
        cfg.poverty_line = ThresholdSpec::literal(p.at("value").get<double>());
      } else {
        cfg.poverty_line = ThresholdSpec::median_fraction(p.at("median_fraction").get<double>());
      }
    }
    nlohmann::json model_cfg = nlohmann::json::object();
    if (j.contains("gmerf")) model_cfg["pql"] = j.at("gmerf");
    if (j.contains("forest")) model_cfg["forest"] = j.at("forest");
    if (j.contains("area_mean")) model_cfg["area_mean"] = j.at("area_mean");
    cfg.gmerf = gmerf_config_from_json(model_cfg);
    if (j.contains("bootstrap")) {
      const auto& b = j.at("bootstrap");
      cfg.bootstrap.B = json_get(b, "B", cfg.bootstrap.B);
      if (b.contains("refit_trees") && !b.at("refit_trees").is_null()) {
        cfg.bootstrap.refit_trees = b.at("refit_trees").get<int>();
      }
    }
    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      cfg.scenario = json_get(s, "scenario", cfg.scenario);
      if (s.contains("scenario_spec") && !s.at("scenario_spec").is_null()) {
        cfg.scenario_spec = scenario_from_json(s.at("scenario_spec"));
      }
      cfg.reps = json_get(s, "reps", cfg.reps);
      cfg.methods = json_get(s, "methods", cfg.methods);
      cfg.bootstrap_B_sim = json_get(s, "bootstrap_B", cfg.bootstrap_B_sim);
    }
    if (j.contains("tune")) {
      const auto& t = j.at("tune");
      cfg.folds = json_get(t, "folds", cfg.folds);
      cfg.mtry_candidates = json_get(t, "candidates", cfg.mtry_candidates);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("config: ") + e.what());
  }
  apply_seed(cfg);
  return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["survey"] = cfg.survey;
  j["census"] = cfg.census;
  j["mapping"] = cfg.mapping;
  j["model"] = cfg.model;
  j["estimates"] = cfg.estimates;
  j["method"] = cfg.method;
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  if (cfg.poverty_line) {
    if (cfg.poverty_line->kind == ThresholdSpec::Kind::literal) {
      j["poverty_line"] = {{"value", cfg.poverty_line->value}};
    } else {
      j["poverty_line"] = {{"median_fraction", cfg.poverty_line->value}};
    }
  } else {
    j["poverty_line"] = nullptr;
  }
  const nlohmann::json model_cfg = to_json(cfg.gmerf);
  j["gmerf"] = model_cfg.at("pql");
  j["forest"] = model_cfg.at("forest");
  j["forest"].erase("seed");
  j["area_mean"] = model_cfg.at("area_mean");
  j["bootstrap"] = {{"B", cfg.bootstrap.B},
                    {"refit_trees", cfg.bootstrap.refit_trees ? nlohmann::json(*cfg.bootstrap.refit_trees)
                                                              : nlohmann::json(nullptr)}};
  j["simulate"] = {{"scenario", cfg.scenario},
                   {"scenario_spec", cfg.scenario_spec ? to_json(*cfg.scenario_spec) : nlohmann::json(nullptr)},
                   {"reps", cfg.reps},
                   {"methods", cfg.methods},
                   {"bootstrap_B", cfg.bootstrap_B_sim}};
  j["tune"] = {{"folds", cfg.folds}, {"candidates", cfg.mtry_candidates}};
  return j;
}

void apply_seed(RunConfig& cfg) {
  cfg.gmerf.forest.seed = derive_seed(cfg.seed, kForestSeedStream);
  cfg.bootstrap.seed = derive_seed(cfg.seed, kBootstrapSeedStream);
  cfg.gmerf.forest.threads = cfg.threads;
  cfg.bootstrap.threads = cfg.threads;
}

nlohmann::json make_sidecar(const std::string& command, const RunConfig& cfg) {
  return {{"command", command},
          {"version", kVersion},
          {"seed", cfg.seed},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"config", to_json(cfg)}};
}

}  // namespace gmerf
