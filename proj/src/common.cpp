#include "gmerf/common.hpp"

#include <iostream>
#include <mutex>

namespace gmerf {

std::string to_string(AreaMean mean) {
  return mean == AreaMean::unit_probability ? "unit_probability" : "linear_predictor";
}

AreaMean area_mean_from_string(std::string_view name) {
  if (name == "unit_probability") return AreaMean::unit_probability;
  if (name == "linear_predictor") return AreaMean::linear_predictor;
  throw Error(ErrorKind::invalid_input,
              "unknown area mean '" + std::string(name) + "' (expected unit_probability or linear_predictor)");
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid_input";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::degenerate_response: return "degenerate_response";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::rank_deficient: return "rank_deficient";
    case ErrorKind::schema: return "schema";
    case ErrorKind::io: return "io";
    case ErrorKind::replicate_failure: return "replicate_failure";
    case ErrorKind::method_failure: return "method_failure";
  }
  return "unknown";
}

namespace {

std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}

void to_stderr(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }

WarningHandler& warning_handler() {
  static WarningHandler handler = to_stderr;
  return handler;
}

}  // namespace

void set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(warning_mutex());
  warning_handler() = handler ? std::move(handler) : WarningHandler(to_stderr);
}

void warn(std::string_view message) {
  std::lock_guard lock(warning_mutex());
  warning_handler()(message);
}

}  // namespace gmerf
