#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace gmerf {

/// How unit-level predictions are combined into an area proportion.
/// unit_probability: mean over units of expit(f(x_ij) + nu_i).
/// linear_predictor: expit(mean over units of f(x_ij) + nu_i).
enum class AreaMean { unit_probability, linear_predictor };

std::string to_string(AreaMean mean);
AreaMean area_mean_from_string(std::string_view name);

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Area identifiers are integers everywhere; dense 0..D-1 indices are used
// internally and never leak into outputs.
using AreaId = std::int64_t;

enum class ErrorKind {
  invalid_input,
  insufficient_data,
  degenerate_response,
  convergence,
  rank_deficient,
  schema,
  io,
  replicate_failure,
  method_failure,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline double expit(double eta) {
  if (eta >= 0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double logit(double mu) { return std::log(mu / (1.0 - mu)); }

// Warnings are routed through a replaceable sink; an empty handler restores stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace gmerf
