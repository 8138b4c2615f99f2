#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gmerf/forest.hpp"
#include "gmerf/mixed_model.hpp"
#include "gmerf/pql.hpp"

namespace gmerf {

// Smaller leaves let the PQL updates run away towards separation.
inline constexpr int kGmerfMinNodeSize = 20;

inline ForestConfig gmerf_forest_defaults() {
  ForestConfig f;
  f.min_node_size = kGmerfMinNodeSize;
  return f;
}

// Forest refits never reach the PQL tolerances (OOB noise keeps the relative
// changes near 0.1), so the caps decide when a fit stops.
inline constexpr int kGmerfMaxMicro = 5;
inline constexpr int kGmerfMaxMacro = 10;

inline PqlControl gmerf_pql_defaults() {
  PqlControl c;
  c.max_micro = kGmerfMaxMicro;
  c.max_macro = kGmerfMaxMacro;
  return c;
}

struct GmerfConfig {
  PqlControl pql = gmerf_pql_defaults();
  ForestConfig forest = gmerf_forest_defaults();
  AreaMean area_mean = AreaMean::unit_probability;
};

/// Fitted generalized mixed effects random forest: a forest for the fixed
/// part on the logit scale plus one random intercept per sampled area.
struct GmerfModel {
  Forest forest;
  std::map<AreaId, double> nu_hat;       // sampled areas only
  std::map<AreaId, int> sample_sizes;    // n_i of the training sample
  double sigma2_nu = 0.0;
  PqlTrace trace;
  Vector fitted_eta;                     // OOB fixed part + nu at termination
  Index oob_degenerate = 0;              // rows in-bag in every tree
  GmerfConfig config;

  /// Semicolon-separated convergence/degeneracy flags, empty when clean.
  std::string flags() const;
};

struct MicroFit {
  Forest forest;
  Vector nu;
  double sigma2_nu = 0.0;
  Vector oob;
  MicroTrace trace;
  Index oob_degenerate = 0;
};

/// Inner loop for fixed working response and weights: alternate forest fits
/// on y_l - Z nu with variance-component and BLUP updates until the GLL
/// settles. `area` holds dense indices in [0, num_areas).
MicroFit fit_micro(const Vector& y_l, const Vector& w, const Matrix& features, const std::vector<int>& area,
                   int num_areas, const GmerfConfig& cfg);

GmerfModel fit_gmerf(std::span<const int> y, const Matrix& features, std::span<const AreaId> area,
                     const GmerfConfig& cfg);

}  // namespace gmerf
