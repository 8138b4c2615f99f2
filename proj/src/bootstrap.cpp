#include "gmerf/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gmerf/parallel.hpp"
#include "gmerf/random.hpp"

namespace gmerf {

namespace {

constexpr std::uint64_t kReplicateStream = 0x626f6f74ULL;

}  // namespace

std::map<AreaId, double> BootstrapResult::mse_by_area() const {
  std::map<AreaId, double> out;
  for (std::size_t i = 0; i < areas.size(); ++i) out[areas[i]] = mse[static_cast<Index>(i)];
  return out;
}

std::uint64_t replicate_seed(std::uint64_t seed, int replicate) {
  return derive_seed(seed, kReplicateStream, static_cast<std::uint64_t>(replicate));
}

BootstrapPopulation draw_bootstrap_population(const Vector& fixed_part, double sigma2_nu,
                                              const CensusFrame& census,
                                              const std::map<AreaId, int>& sample_sizes, std::uint64_t seed) {
  const AreaIndex index(census.area);
  const int d = index.size();
  if (fixed_part.size() != static_cast<Index>(census.area.size())) {
    throw Error(ErrorKind::invalid_input, "fixed part and census differ in length");
  }
  std::vector<std::vector<Index>> rows_of(d);
  for (std::size_t j = 0; j < census.area.size(); ++j) rows_of[index.rows()[j]].push_back(static_cast<Index>(j));

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(std::max(sigma2_nu, 0.0)));
  BootstrapPopulation pop;
  pop.census = &census;
  pop.areas = index.ids();
  pop.nu.resize(d);
  for (int i = 0; i < d; ++i) pop.nu[i] = sigma2_nu > 0.0 ? normal(rng) : 0.0;

  const auto n = census.area.size();
  pop.y.resize(n);
  pop.truth = Vector::Zero(d);
  for (std::size_t j = 0; j < n; ++j) {
    const int i = index.rows()[j];
    const double p = expit(fixed_part[static_cast<Index>(j)] + pop.nu[i]);
    pop.y[j] = uniform01(rng) < p ? 1 : 0;
    pop.truth[i] += pop.y[j];
  }
  for (int i = 0; i < d; ++i) pop.truth[i] /= index.counts()[i];

  std::vector<int> dense_of;
  for (const auto& [id, n_i] : sample_sizes) {
    const auto it = std::lower_bound(pop.areas.begin(), pop.areas.end(), id);
    if (it == pop.areas.end() || *it != id) {
      throw Error(ErrorKind::invalid_input, "sampled area " + std::to_string(id) + " is missing from the census");
    }
    auto& rows = rows_of[static_cast<std::size_t>(it - pop.areas.begin())];
    if (n_i < 0 || static_cast<std::size_t>(n_i) > rows.size()) {
      throw Error(ErrorKind::invalid_input, "sample size for area " + std::to_string(id) + " exceeds its population");
    }
    for (int k = 0; k < n_i; ++k) {
      const auto pick = k + static_cast<std::size_t>(rng() % (rows.size() - static_cast<std::size_t>(k)));
      std::swap(rows[static_cast<std::size_t>(k)], rows[pick]);
      pop.sample_rows.push_back(rows[static_cast<std::size_t>(k)]);
    }
  }
  std::sort(pop.sample_rows.begin(), pop.sample_rows.end());
  return pop;
}

ReplicateEstimator gmerf_refit_estimator(const GmerfConfig& cfg) {
  return [cfg](const BootstrapPopulation& pop) {
    const CensusFrame& census = *pop.census;
    const auto n = static_cast<Index>(pop.sample_rows.size());
    Matrix x = census.features(pop.sample_rows, Eigen::all);
    std::vector<int> y(static_cast<std::size_t>(n));
    std::vector<AreaId> area(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
      y[static_cast<std::size_t>(k)] = pop.y[static_cast<std::size_t>(pop.sample_rows[k])];
      area[static_cast<std::size_t>(k)] = census.area[static_cast<std::size_t>(pop.sample_rows[k])];
    }
    const GmerfModel refit = fit_gmerf(y, x, area, cfg);
    const auto est = area_proportions(refit, census);
    Vector mu(static_cast<Index>(est.size()));
    for (std::size_t i = 0; i < est.size(); ++i) mu[static_cast<Index>(i)] = est[i].mu_hat;
    return mu;
  };
}

BootstrapResult mse_parametric(const Vector& fixed_part, double sigma2_nu, const CensusFrame& census,
                               const std::map<AreaId, int>& sample_sizes,
                               std::span<const std::uint64_t> replicate_seeds, const ReplicateEstimator& estimator,
                               int threads) {
  const auto b_total = replicate_seeds.size();
  if (b_total < 2) throw Error(ErrorKind::invalid_input, "bootstrap needs B >= 2");
  if (!(sigma2_nu >= 0.0)) throw Error(ErrorKind::invalid_input, "sigma2_nu must be nonnegative");

  const AreaIndex index(census.area);
  const int d = index.size();
  std::vector<Vector> est(b_total), truth(b_total);
  std::vector<char> ok(b_total, 0);
  parallel_for(b_total, threads, [&](std::size_t b) {
    const BootstrapPopulation pop =
        draw_bootstrap_population(fixed_part, sigma2_nu, census, sample_sizes, replicate_seeds[b]);
    try {
      Vector mu = estimator(pop);
      if (mu.size() != d || !mu.allFinite()) throw Error(ErrorKind::replicate_failure, "bad replicate estimate");
      est[b] = std::move(mu);
      truth[b] = pop.truth;
      ok[b] = 1;
    } catch (const std::exception& e) {
      warn("bootstrap replicate " + std::to_string(b) + " failed: " + e.what());
    }
  });

  BootstrapResult out;
  out.areas = index.ids();
  for (std::size_t b = 0; b < b_total; ++b) (ok[b] ? out.succeeded : out.failed).push_back(static_cast<int>(b));
  const auto good = out.succeeded.size();
  if (static_cast<double>(good) < 0.9 * static_cast<double>(b_total)) {
    throw Error(ErrorKind::replicate_failure, "bootstrap: only " + std::to_string(good) + " of " +
                                                  std::to_string(b_total) + " replicates succeeded");
  }
  out.estimates.resize(d, static_cast<Index>(good));
  out.truth.resize(d, static_cast<Index>(good));
  for (std::size_t k = 0; k < good; ++k) {
    out.estimates.col(static_cast<Index>(k)) = est[static_cast<std::size_t>(out.succeeded[k])];
    out.truth.col(static_cast<Index>(k)) = truth[static_cast<std::size_t>(out.succeeded[k])];
  }
  out.mse = (out.estimates - out.truth).array().square().rowwise().mean();
  return out;
}

BootstrapResult mse_parametric(const GmerfModel& model, const CensusFrame& census,
                               const std::map<AreaId, int>& sample_sizes, const BootstrapConfig& cfg) {
  if (cfg.B < 2) throw Error(ErrorKind::invalid_input, "bootstrap needs B >= 2");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.B));
  for (int b = 0; b < cfg.B; ++b) seeds[static_cast<std::size_t>(b)] = replicate_seed(cfg.seed, b);
  GmerfConfig refit = model.config;
  if (cfg.refit_trees) refit.forest.n_trees = *cfg.refit_trees;
  refit.forest.threads = 1;
  const Vector fixed = predict(model.forest, census.features, cfg.threads);
  return mse_parametric(fixed, model.sigma2_nu, census, sample_sizes, seeds, gmerf_refit_estimator(refit),
                        cfg.threads);
}

}  // namespace gmerf
