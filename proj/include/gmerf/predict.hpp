#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmerf/common.hpp"

namespace gmerf {

struct GmerfModel;

/// Unit-level census covariates. Column order must match the training data.
struct CensusFrame {
  std::vector<AreaId> area;
  Matrix features;
  std::vector<std::string> feature_names;

  std::map<AreaId, int> area_sizes() const;
};

struct AreaEstimate {
  AreaId area = 0;
  double mu_hat = 0.0;
  int n_i = 0;
  int N_i = 0;
  bool in_sample = false;
  std::optional<double> mse;
  std::optional<double> cv;
  std::string flags;
};

/// Area proportions from the fixed part on the logit scale plus nu_i,
/// combined over census units as `mean` says. Areas without an entry in
/// `nu_hat` are out of sample and use the fixed part alone. Areas with a
/// random effect but no census rows are skipped with a warning.
std::vector<AreaEstimate> area_proportions(const Vector& fixed_part, const CensusFrame& census,
                                           const std::map<AreaId, double>& nu_hat,
                                           const std::map<AreaId, int>& sample_sizes,
                                           AreaMean mean = AreaMean::unit_probability);

std::vector<AreaEstimate> area_proportions(const GmerfModel& model, const CensusFrame& census, int threads = 1);

/// expit(f(x_ij) + nu_i) for every census unit.
Vector unit_probabilities(const GmerfModel& model, const CensusFrame& census, int threads = 1);

/// Unweighted sample share of y = 1 per area present in the sample.
std::vector<AreaEstimate> direct_estimates(std::span<const AreaId> area, std::span<const int> y);

/// Population-weighted district values, sum_i (N_i / N_d) mu_i.
std::vector<AreaEstimate> aggregate(const std::vector<AreaEstimate>& estimates,
                                    const std::map<AreaId, AreaId>& district_of);

/// Sets mse and cv = sqrt(mse) / mu_hat for every area in `mse`. A zero
/// mu_hat leaves cv empty and raises a warning.
void attach_mse(std::vector<AreaEstimate>& estimates, const std::map<AreaId, double>& mse);

/// Mann-Whitney AUC; tied scores count one half.
double roc_auc(std::span<const int> labels, std::span<const double> scores);

struct CalibrationBin {
  double mean_score = 0.0;
  double mean_label = 0.0;
  int count = 0;
};

/// Equal-count bins over the sorted scores.
std::vector<CalibrationBin> calibration_bins(std::span<const int> labels, std::span<const double> scores,
                                             int n_bins);

}  // namespace gmerf
