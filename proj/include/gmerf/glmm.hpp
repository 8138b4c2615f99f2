#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gmerf/pql.hpp"
#include "gmerf/predict.hpp"

namespace gmerf {

/// Random-intercept logistic GLMM fitted by PQL; the linear counterpart of
/// the GMERF and the baseline in simulation comparisons.
struct GlmmModel {
  Vector beta;  // intercept first, then one slope per covariate
  std::map<AreaId, double> nu_hat;
  std::map<AreaId, int> sample_sizes;
  double sigma2_nu = 0.0;
  PqlTrace trace;
  Vector fitted_eta;

  std::string flags() const;
};

/// Throws rank_deficient naming the columns that are linear combinations of
/// earlier ones. `names` defaults to x1..xp.
GlmmModel fit_glmm_pql(std::span<const int> y, const Matrix& features, std::span<const AreaId> area,
                       const PqlControl& ctl, std::span<const std::string> names = {});

/// Plug-in conditional expectation: mean over census units of
/// expit(x'beta + nu_i), with nu_i = 0 for out-of-sample areas.
std::vector<AreaEstimate> cep_area_proportions(const GlmmModel& model, const CensusFrame& census);

}  // namespace gmerf
