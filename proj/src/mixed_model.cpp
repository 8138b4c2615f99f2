#include "gmerf/mixed_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include <boost/math/tools/minima.hpp>

namespace gmerf {

namespace {

struct AreaSums {
  Vector sum_w;       // T_i
  Vector sum_wr;      // S_i
  Vector sum_wrr;     // sum w r^2
  Vector sum_log_w;   // sum log w
  std::vector<int> count;
};

AreaSums area_sums(const GroupedData& data) {
  const int d = data.num_areas;
  AreaSums s{Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), std::vector<int>(d, 0)};
  for (Index j = 0; j < data.y_l.size(); ++j) {
    const int i = data.area[j];
    const double w = data.weights[j];
    const double r = data.y_l[j] - data.offset[j];
    s.sum_w[i] += w;
    s.sum_wr[i] += w * r;
    s.sum_wrr[i] += w * r * r;
    s.sum_log_w[i] += std::log(w);
    ++s.count[i];
  }
  return s;
}

double log_likelihood(const AreaSums& s, double sigma2) {
  double total = 0.0;
  double n = 0.0;
  for (Index i = 0; i < s.sum_w.size(); ++i) {
    const double denom = 1.0 + sigma2 * s.sum_w[i];
    const double log_det = -s.sum_log_w[i] + std::log(denom);
    const double quad = s.sum_wrr[i] - sigma2 * s.sum_wr[i] * s.sum_wr[i] / denom;
    total += log_det + quad;
    n += s.count[i];
  }
  return -0.5 * (total + n * std::log(2.0 * std::numbers::pi));
}

}  // namespace

void validate(const GroupedData& data) {
  const Index n = data.y_l.size();
  if (data.offset.size() != n || data.weights.size() != n || static_cast<Index>(data.area.size()) != n) {
    throw Error(ErrorKind::invalid_input, "grouped data: y_l, offset, weights and area differ in length");
  }
  if (data.num_areas < 1) throw Error(ErrorKind::invalid_input, "grouped data: no areas");
  if (!data.y_l.allFinite() || !data.offset.allFinite() || !data.weights.allFinite()) {
    throw Error(ErrorKind::invalid_input, "grouped data: non-finite value");
  }
  if ((data.weights.array() <= 0.0).any()) {
    throw Error(ErrorKind::invalid_input, "grouped data: weights must be positive");
  }
  std::vector<int> seen(data.num_areas, 0);
  for (int a : data.area) {
    if (a < 0 || a >= data.num_areas) throw Error(ErrorKind::invalid_input, "grouped data: area index out of range");
    seen[a] = 1;
  }
  for (int i = 0; i < data.num_areas; ++i) {
    if (!seen[i]) {
      throw Error(ErrorKind::invalid_input, "grouped data: area " + std::to_string(i) + " has no rows");
    }
  }
}

double log_likelihood(const GroupedData& data, double sigma2) {
  return log_likelihood(area_sums(data), sigma2);
}

VarianceComponents estimate_sigma2(const GroupedData& data) {
  validate(data);
  const AreaSums sums = area_sums(data);
  auto negative = [&](double s2) { return -log_likelihood(sums, s2); };

  // Scan 0 plus a log-spaced grid, then refine between the neighbours of
  // the best grid point.
  constexpr int kGrid = 48;
  std::vector<double> grid{0.0};
  for (int k = 0; k < kGrid; ++k) {
    grid.push_back(kSigma2Max * std::pow(10.0, -8.0 * (kGrid - 1 - k) / (kGrid - 1)));
  }
  std::vector<double> values(grid.size());
  std::transform(grid.begin(), grid.end(), values.begin(), negative);
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  double best_s2 = grid[best];
  double best_value = values[best];

  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  if (hi > lo) {
    constexpr int kBits = 40;
    constexpr std::uintmax_t kMaxIter = 500;
    std::uintmax_t iterations = kMaxIter;
    const auto [s2, value] = boost::math::tools::brent_find_minima(negative, lo, hi, kBits, iterations);
    if (iterations >= kMaxIter) {
      throw Error(ErrorKind::convergence,
                  "sigma2 search did not converge in " + std::to_string(kMaxIter) + " iterations; bracket [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "], last " + std::to_string(s2));
    }
    if (value < best_value) {
      best_s2 = s2;
      best_value = value;
    }
  }
  return VarianceComponents{std::clamp(best_s2, 0.0, kSigma2Max)};
}

Vector blup(const GroupedData& data, const VarianceComponents& vc) {
  const AreaSums sums = area_sums(data);
  const double s2 = vc.sigma2_nu;
  Vector nu(data.num_areas);
  for (int i = 0; i < data.num_areas; ++i) {
    nu[i] = s2 * sums.sum_wr[i] / (1.0 + s2 * sums.sum_w[i]);
  }
  return nu;
}

double gll(const GroupedData& data, const Vector& nu, const VarianceComponents& vc) {
  const double s2 = std::max(vc.sigma2_nu, kGllSigma2Floor);
  double total = 0.0;
  for (Index j = 0; j < data.y_l.size(); ++j) {
    const double w = data.weights[j];
    const double r = data.y_l[j] - data.offset[j] - nu[data.area[j]];
    total += w * r * r - std::log(w);
  }
  for (int i = 0; i < data.num_areas; ++i) {
    total += nu[i] * nu[i] / s2 + std::log(s2);
  }
  return total;
}

}  // namespace gmerf
