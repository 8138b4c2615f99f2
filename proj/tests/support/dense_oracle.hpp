#pragma once

// Dense reference computations for the random-intercept model, used as
// oracles for the closed forms.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "gmerf/mixed_model.hpp"
#include "gmerf/random.hpp"

namespace gmerf::testing {

inline GroupedData make_data(std::vector<double> y, std::vector<double> w, std::vector<int> area, int d) {
  const auto n = static_cast<Index>(y.size());
  GroupedData g;
  g.y_l = Eigen::Map<Vector>(y.data(), n);
  g.offset = Vector::Zero(n);
  g.weights = Eigen::Map<Vector>(w.data(), n);
  g.area = std::move(area);
  g.num_areas = d;
  return g;
}

/// Between 1 and max_areas areas, each with 1..max_per_area rows.
inline GroupedData random_instance(Rng& rng, int max_areas, int max_per_area) {
  std::uniform_int_distribution<int> areas(1, max_areas);
  std::uniform_int_distribution<int> per(1, max_per_area);
  std::uniform_real_distribution<double> weight(0.01, 0.25);
  std::normal_distribution<double> normal(0.0, 1.5);
  const int d = areas(rng);
  std::vector<double> y, w, off;
  std::vector<int> area;
  for (int i = 0; i < d; ++i) {
    const int m = per(rng);
    const double shift = normal(rng);
    for (int j = 0; j < m; ++j) {
      y.push_back(shift + normal(rng));
      off.push_back(0.3 * normal(rng));
      w.push_back(weight(rng));
      area.push_back(i);
    }
  }
  GroupedData g = make_data(y, w, area, d);
  g.offset = Eigen::Map<Vector>(off.data(), static_cast<Index>(off.size()));
  return g;
}

/// V = sigma2 Z Z' + W^-1.
inline Matrix dense_cov(const GroupedData& g, double sigma2) {
  const Index n = g.y_l.size();
  Matrix v = Matrix::Zero(n, n);
  for (Index a = 0; a < n; ++a) {
    for (Index b = 0; b < n; ++b) {
      if (g.area[a] == g.area[b]) v(a, b) = sigma2;
    }
    v(a, a) += 1.0 / g.weights[a];
  }
  return v;
}

/// sigma2 Z' V^-1 (y - offset).
inline Vector dense_blup(const GroupedData& g, double sigma2) {
  const Index n = g.y_l.size();
  Matrix z = Matrix::Zero(n, g.num_areas);
  for (Index a = 0; a < n; ++a) z(a, g.area[a]) = 1.0;
  const Matrix v = dense_cov(g, sigma2);
  const Vector r = g.y_l - g.offset;
  return sigma2 * z.transpose() * v.ldlt().solve(r);
}

/// Multivariate normal log-density of y - offset under V.
inline double dense_loglik(const GroupedData& g, double sigma2) {
  const Matrix v = dense_cov(g, sigma2);
  const Vector r = g.y_l - g.offset;
  const Eigen::LDLT<Matrix> ldlt(v);
  const double log_det = ldlt.vectorD().array().log().sum();
  const double n = static_cast<double>(r.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + r.dot(ldlt.solve(r)));
}

}  // namespace gmerf::testing
