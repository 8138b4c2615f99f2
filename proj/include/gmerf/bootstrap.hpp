#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "gmerf/gmerf.hpp"
#include "gmerf/predict.hpp"

namespace gmerf {

struct BootstrapConfig {
  int B = 200;
  std::uint64_t seed = 1;
  // Tree count for the refits; unset reuses the fitted model's setting.
  std::optional<int> refit_trees;
  int threads = 1;
};

/// One bootstrap population drawn from the fitted model over the census.
struct BootstrapPopulation {
  const CensusFrame* census = nullptr;
  std::vector<AreaId> areas;       // sorted census areas
  Vector nu;                       // random effect per area
  std::vector<int> y;              // Bernoulli draw per census row
  Vector truth;                    // population share of y = 1 per area
  std::vector<Index> sample_rows;  // stratified SRS, ascending
};

/// Replicate estimator: area proportions in `areas` order from the
/// population's sample. Throwing marks the replicate as failed.
using ReplicateEstimator = std::function<Vector(const BootstrapPopulation&)>;

struct BootstrapResult {
  std::vector<AreaId> areas;
  Vector mse;
  Matrix estimates;            // areas x successful replicates
  Matrix truth;                // areas x successful replicates
  std::vector<int> succeeded;  // replicate indices, ascending
  std::vector<int> failed;

  std::map<AreaId, double> mse_by_area() const;
};

std::uint64_t replicate_seed(std::uint64_t seed, int replicate);

/// Draws random effects for every census area, Bernoulli responses for every
/// census unit, and a stratified sample of `sample_sizes[i]` units per area.
BootstrapPopulation draw_bootstrap_population(const Vector& fixed_part, double sigma2_nu,
                                              const CensusFrame& census,
                                              const std::map<AreaId, int>& sample_sizes, std::uint64_t seed);

/// Estimator that reruns the full GMERF fit on the bootstrap sample and
/// predicts every census area.
ReplicateEstimator gmerf_refit_estimator(const GmerfConfig& cfg);

BootstrapResult mse_parametric(const Vector& fixed_part, double sigma2_nu, const CensusFrame& census,
                               const std::map<AreaId, int>& sample_sizes,
                               std::span<const std::uint64_t> replicate_seeds, const ReplicateEstimator& estimator,
                               int threads = 1);

/// Parametric bootstrap MSE of the GMERF area proportions.
BootstrapResult mse_parametric(const GmerfModel& model, const CensusFrame& census,
                               const std::map<AreaId, int>& sample_sizes, const BootstrapConfig& cfg);

}  // namespace gmerf
