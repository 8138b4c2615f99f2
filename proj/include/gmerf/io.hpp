#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmerf/bootstrap.hpp"
#include "gmerf/gmerf.hpp"
#include "gmerf/predict.hpp"
#include "gmerf/simulation.hpp"

namespace gmerf {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position, or nullopt when absent.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// RFC 4180 subset: comma separated, optional double quotes, LF or CRLF.
CsvTable read_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Strict number parsing: the whole field must be consumed and finite.
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);

// ---------------------------------------------------------------------------
// Poverty line

struct ThresholdSpec {
  enum class Kind { literal, median_fraction };
  Kind kind = Kind::median_fraction;
  double value = 0.6;

  static ThresholdSpec literal(double t) { return {Kind::literal, t}; }
  static ThresholdSpec median_fraction(double f) { return {Kind::median_fraction, f}; }
};

struct Binarized {
  std::vector<int> y;
  double threshold = 0.0;
};

/// y = 1 iff income <= t. A median-fraction spec resolves t from the
/// median of `income`.
Binarized binarize_income(std::span<const double> income, const ThresholdSpec& spec);

// ---------------------------------------------------------------------------
// Survey and census

struct SurveyFrame {
  std::vector<AreaId> area;
  Matrix features;
  std::vector<std::string> feature_names;
  std::vector<int> y;
  std::optional<double> poverty_line;  // set when y came from income
};

/// Needs `area_id`, at least one `x*` covariate and either `y` (0/1) or
/// `income` together with a threshold.
SurveyFrame load_survey(const std::filesystem::path& path, std::optional<ThresholdSpec> threshold = std::nullopt);

/// Reads `area_id` and the named covariates, in that order.
CensusFrame load_census(const std::filesystem::path& path, std::span<const std::string> feature_names);

/// Every survey area must appear in the census.
void check_survey_census(const SurveyFrame& survey, const CensusFrame& census);

/// Two columns, `area_id` and `district_id`.
std::map<AreaId, AreaId> load_mapping(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Outputs

/// Writes the estimates CSV and, when `sidecar` is not null, `<path>.json`.
void emit_estimates(const std::vector<AreaEstimate>& estimates, const std::filesystem::path& path,
                    const nlohmann::json& sidecar = nullptr);
std::vector<AreaEstimate> load_estimates(const std::filesystem::path& path);

void emit_report(const MetricsTable& metrics, const std::filesystem::path& path,
                 const nlohmann::json& sidecar = nullptr);

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::string survey;
  std::string census;
  std::string mapping;
  std::string model;
  std::string estimates;
  std::string method = "gmerf";  // gmerf | cep | direct
  std::string output_dir = ".";
  std::uint64_t seed = 20240101;
  int threads = 1;
  std::optional<ThresholdSpec> poverty_line;
  GmerfConfig gmerf;
  BootstrapConfig bootstrap;
  // simulate
  std::string scenario = "normal_small";
  std::optional<Scenario> scenario_spec;
  int reps = 50;
  std::vector<std::string> methods{"gmerf", "cep"};
  int bootstrap_B_sim = 0;
  // tune
  int folds = 5;
  std::vector<int> mtry_candidates;
};

/// Accepts either a bare config object or a sidecar (config under "config").
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// Forest and bootstrap seeds follow from the global seed.
void apply_seed(RunConfig& cfg);

nlohmann::json make_sidecar(const std::string& command, const RunConfig& cfg);

}  // namespace gmerf
