#include "gmerf/predict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmerf/gmerf.hpp"

namespace gmerf {

std::map<AreaId, int> CensusFrame::area_sizes() const {
  std::map<AreaId, int> sizes;
  for (AreaId a : area) ++sizes[a];
  return sizes;
}

std::vector<AreaEstimate> area_proportions(const Vector& fixed_part, const CensusFrame& census,
                                           const std::map<AreaId, double>& nu_hat,
                                           const std::map<AreaId, int>& sample_sizes, AreaMean mean) {
  if (fixed_part.size() != static_cast<Index>(census.area.size())) {
    throw Error(ErrorKind::invalid_input, "fixed part and census differ in length");
  }
  std::map<AreaId, std::pair<double, int>> sums;
  for (std::size_t j = 0; j < census.area.size(); ++j) {
    const AreaId id = census.area[j];
    auto& s = sums[id];
    double value = fixed_part[static_cast<Index>(j)];
    if (mean == AreaMean::unit_probability) {
      const auto it = nu_hat.find(id);
      value = expit(value + (it == nu_hat.end() ? 0.0 : it->second));
    }
    s.first += value;
    ++s.second;
  }
  for (const auto& [id, nu] : nu_hat) {
    if (!sums.contains(id)) warn("area " + std::to_string(id) + " has no census rows; skipped");
  }
  std::vector<AreaEstimate> out;
  out.reserve(sums.size());
  for (const auto& [id, s] : sums) {
    AreaEstimate e;
    e.area = id;
    e.N_i = s.second;
    const auto nu = nu_hat.find(id);
    e.in_sample = nu != nu_hat.end();
    if (auto it = sample_sizes.find(id); it != sample_sizes.end()) e.n_i = it->second;
    if (mean == AreaMean::unit_probability) {
      e.mu_hat = s.first / s.second;
    } else {
      e.mu_hat = expit(s.first / s.second + (e.in_sample ? nu->second : 0.0));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<AreaEstimate> area_proportions(const GmerfModel& model, const CensusFrame& census, int threads) {
  const Vector fixed = predict(model.forest, census.features, threads);
  return area_proportions(fixed, census, model.nu_hat, model.sample_sizes, model.config.area_mean);
}

Vector unit_probabilities(const GmerfModel& model, const CensusFrame& census, int threads) {
  Vector p = predict(model.forest, census.features, threads);
  for (Index j = 0; j < p.size(); ++j) {
    const auto it = model.nu_hat.find(census.area[static_cast<std::size_t>(j)]);
    p[j] = expit(p[j] + (it == model.nu_hat.end() ? 0.0 : it->second));
  }
  return p;
}

std::vector<AreaEstimate> direct_estimates(std::span<const AreaId> area, std::span<const int> y) {
  if (area.size() != y.size()) throw Error(ErrorKind::invalid_input, "area ids and response differ in length");
  std::map<AreaId, std::pair<int, int>> tally;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] != 0 && y[j] != 1) throw Error(ErrorKind::invalid_input, "response must be binary (0/1)");
    auto& t = tally[area[j]];
    t.first += y[j];
    ++t.second;
  }
  std::vector<AreaEstimate> out;
  for (const auto& [id, t] : tally) {
    AreaEstimate e;
    e.area = id;
    e.mu_hat = static_cast<double>(t.first) / t.second;
    e.n_i = t.second;
    e.in_sample = true;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<AreaEstimate> aggregate(const std::vector<AreaEstimate>& estimates,
                                    const std::map<AreaId, AreaId>& district_of) {
  struct Acc {
    double weighted = 0.0;
    long long N = 0;
    int n = 0;
    bool in_sample = false;
  };
  std::map<AreaId, Acc> acc;
  for (const AreaEstimate& e : estimates) {
    const auto it = district_of.find(e.area);
    if (it == district_of.end()) {
      throw Error(ErrorKind::invalid_input, "area " + std::to_string(e.area) + " has no district mapping");
    }
    if (e.N_i <= 0) {
      throw Error(ErrorKind::invalid_input, "area " + std::to_string(e.area) + " has no population size");
    }
    Acc& a = acc[it->second];
    a.weighted += e.N_i * e.mu_hat;
    a.N += e.N_i;
    a.n += e.n_i;
    a.in_sample = a.in_sample || e.in_sample;
  }
  std::vector<AreaEstimate> out;
  for (const auto& [district, a] : acc) {
    AreaEstimate e;
    e.area = district;
    e.mu_hat = a.weighted / static_cast<double>(a.N);
    e.N_i = static_cast<int>(a.N);
    e.n_i = a.n;
    e.in_sample = a.in_sample;
    out.push_back(std::move(e));
  }
  return out;
}

void attach_mse(std::vector<AreaEstimate>& estimates, const std::map<AreaId, double>& mse) {
  for (AreaEstimate& e : estimates) {
    const auto it = mse.find(e.area);
    if (it == mse.end()) continue;
    e.mse = it->second;
    if (e.mu_hat > 0.0) {
      e.cv = std::sqrt(it->second) / e.mu_hat;
    } else {
      e.cv.reset();
      warn("area " + std::to_string(e.area) + ": CV undefined for a zero estimate");
    }
  }
}

double roc_auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(ErrorKind::invalid_input, "labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t end = k;
    while (end < n && scores[order[end]] == scores[order[k]]) ++end;
    const double mid_rank = 0.5 * static_cast<double>(k + 1 + end);
    for (std::size_t t = k; t < end; ++t) {
      const int l = labels[order[t]];
      if (l != 0 && l != 1) throw Error(ErrorKind::invalid_input, "labels must be binary (0/1)");
      if (l == 1) {
        rank_sum += mid_rank;
        ++positives;
      }
    }
    k = end;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorKind::invalid_input, "AUC needs both positive and negative labels");
  }
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

std::vector<CalibrationBin> calibration_bins(std::span<const int> labels, std::span<const double> scores,
                                             int n_bins) {
  if (labels.size() != scores.size()) throw Error(ErrorKind::invalid_input, "labels and scores differ in length");
  const std::size_t n = labels.size();
  if (n_bins < 1 || static_cast<std::size_t>(n_bins) > n) {
    throw Error(ErrorKind::invalid_input, "n_bins must lie in [1, n]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<CalibrationBin> bins;
  const auto nb = static_cast<std::size_t>(n_bins);
  for (std::size_t k = 0; k < nb; ++k) {
    const std::size_t begin = k * n / nb;
    const std::size_t end = (k + 1) * n / nb;
    CalibrationBin bin;
    for (std::size_t t = begin; t < end; ++t) {
      bin.mean_score += scores[order[t]];
      bin.mean_label += labels[order[t]];
    }
    bin.count = static_cast<int>(end - begin);
    bin.mean_score /= bin.count;
    bin.mean_label /= bin.count;
    bins.push_back(bin);
  }
  return bins;
}

}  // namespace gmerf
