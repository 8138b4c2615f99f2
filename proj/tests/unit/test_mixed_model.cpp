#include "doctest.h"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "gmerf/mixed_model.hpp"
#include "gmerf/random.hpp"
#include "support/dense_oracle.hpp"

using namespace gmerf;
using namespace gmerf::testing;

TEST_CASE("blup matches the dense matrix formula on random instances") {
  Rng rng(2024);
  std::uniform_real_distribution<double> s2(0.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const GroupedData g = random_instance(rng, 6, 5);
    const double sigma2 = s2(rng);
    const Vector closed = blup(g, {sigma2});
    const Vector dense = dense_blup(g, sigma2);
    CHECK((closed - dense).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("log likelihood matches the dense normal density on a grid") {
  Rng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    const GroupedData g = random_instance(rng, 5, 4);
    for (int k = 0; k < 50; ++k) {
      const double sigma2 = 0.002 + 0.1 * k;
      CHECK(log_likelihood(g, sigma2) == doctest::Approx(dense_loglik(g, sigma2)).epsilon(1e-10));
      CHECK(std::abs(log_likelihood(g, sigma2) - dense_loglik(g, sigma2)) < 1e-8);
    }
  }
}

TEST_CASE("blup worked example") {
  const GroupedData g = make_data({2.0, 2.0}, {0.25, 0.25}, {0, 0}, 1);
  const Vector nu = blup(g, {1.0});
  CHECK(nu[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(std::abs(nu[0] - dense_blup(g, 1.0)[0]) < 1e-12);

  const GroupedData sym = make_data({2.0, -2.0}, {0.25, 0.25}, {0, 0}, 1);
  CHECK(blup(sym, {1.0})[0] == 0.0);
  CHECK(blup(g, {0.0})[0] == 0.0);
}

TEST_CASE("zero residuals give zero variance") {
  GroupedData g = make_data({0.5, 0.5, -1.0, -1.0}, {0.2, 0.1, 0.25, 0.05}, {0, 0, 1, 1}, 2);
  g.offset = g.y_l;
  CHECK(estimate_sigma2(g).sigma2_nu == 0.0);
}

TEST_CASE("interior maximum agrees with a dense grid search") {
  const double a = 3.0;
  const GroupedData g = make_data({a, a, -a, -a}, {0.25, 0.25, 0.25, 0.25}, {0, 0, 1, 1}, 2);
  const double s2 = estimate_sigma2(g).sigma2_nu;
  CHECK(s2 > 0.0);
  double best = 0.0, best_value = -1e300;
  for (int k = 0; k <= 200000; ++k) {
    const double t = 20.0 * k / 200000.0;
    const double v = dense_loglik(g, t);
    if (v > best_value) {
      best_value = v;
      best = t;
    }
  }
  CHECK(s2 == doctest::Approx(best).epsilon(1e-3));
  // Closed form for this design: sigma2 = a^2 - 2 (per-area mean square minus its sampling variance).
  CHECK(s2 == doctest::Approx(a * a - 2.0).epsilon(1e-6));
}

TEST_CASE("gll worked example and invariances") {
  GroupedData g = make_data({1.0, 2.0, 3.0, 4.0}, {0.25, 0.25, 0.25, 0.25}, {0, 0, 0, 0}, 1);
  g.offset = g.y_l;
  const Vector nu = Vector::Zero(1);
  CHECK(gll(g, nu, {1.0}) == doctest::Approx(4.0 * std::log(4.0)));
  CHECK(gll(g, nu, {1.0}) == doctest::Approx(5.5452).epsilon(1e-4));

  Rng rng(5);
  GroupedData r = random_instance(rng, 4, 4);
  const Vector nu_r = blup(r, {0.7});
  const double before = gll(r, nu_r, {0.7});
  GroupedData shifted = r;
  shifted.y_l.array() += 3.25;
  shifted.offset.array() += 3.25;
  CHECK(gll(shifted, nu_r, {0.7}) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("gll is minimized in nu by the blup") {
  Rng rng(11);
  std::uniform_real_distribution<double> s2(0.05, 2.0);
  for (int rep = 0; rep < 50; ++rep) {
    const GroupedData g = random_instance(rng, 5, 5);
    const VarianceComponents vc{s2(rng)};
    const Vector nu = blup(g, vc);
    const double at_blup = gll(g, nu, vc);
    for (int i = 0; i < g.num_areas; ++i) {
      for (double step : {-0.1, 0.1, -0.01, 0.01}) {
        Vector moved = nu;
        moved[i] += step;
        CHECK(gll(g, moved, vc) > at_blup);
        Vector further = nu;
        further[i] += 2.0 * step;
        CHECK(gll(g, further, vc) > gll(g, moved, vc));
      }
    }
  }
}

TEST_CASE("gll floors a zero variance") {
  GroupedData g = make_data({1.0, 1.0}, {0.25, 0.25}, {0, 0}, 1);
  const double value = gll(g, Vector::Zero(1), {0.0});
  CHECK(std::isfinite(value));
  CHECK(value == doctest::Approx(0.5 + std::log(kGllSigma2Floor) + 2.0 * std::log(4.0)));
}

TEST_CASE("shrinkage properties of the blup") {
  Rng rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    const GroupedData g = random_instance(rng, 6, 5);
    std::vector<double> s(g.num_areas, 0.0), t(g.num_areas, 0.0);
    for (Index j = 0; j < g.y_l.size(); ++j) {
      s[g.area[j]] += g.weights[j] * (g.y_l[j] - g.offset[j]);
      t[g.area[j]] += g.weights[j];
    }
    Vector previous = Vector::Zero(g.num_areas);
    for (double sigma2 : {0.01, 0.1, 0.5, 1.0, 5.0, 50.0}) {
      const Vector nu = blup(g, {sigma2});
      for (int i = 0; i < g.num_areas; ++i) {
        CHECK(std::abs(nu[i]) <= std::abs(s[i]) / t[i] + 1e-12);
        CHECK(std::abs(nu[i]) >= std::abs(previous[i]) - 1e-12);
        if (s[i] != 0.0) CHECK((nu[i] > 0) == (s[i] > 0));
      }
      previous = nu;
    }
  }
}

TEST_CASE("variance estimate is invariant to relabeling and row order") {
  Rng rng(123);
  for (int rep = 0; rep < 30; ++rep) {
    const GroupedData g = random_instance(rng, 6, 5);
    const double base = estimate_sigma2(g).sigma2_nu;

    std::vector<int> relabel(g.num_areas);
    std::iota(relabel.begin(), relabel.end(), 0);
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<Index> order(static_cast<std::size_t>(g.y_l.size()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    GroupedData p = g;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Index from = order[k];
      p.y_l[static_cast<Index>(k)] = g.y_l[from];
      p.offset[static_cast<Index>(k)] = g.offset[from];
      p.weights[static_cast<Index>(k)] = g.weights[from];
      p.area[k] = relabel[g.area[from]];
    }
    CHECK(estimate_sigma2(p).sigma2_nu == doctest::Approx(base).epsilon(1e-7));
  }
}

TEST_CASE("estimate maximizes the likelihood") {
  Rng rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    const GroupedData g = random_instance(rng, 6, 5);
    const double s2 = estimate_sigma2(g).sigma2_nu;
    const double at = log_likelihood(g, s2);
    for (int k = 0; k <= 400; ++k) {
      const double t = kSigma2Max * std::pow(10.0, -8.0 + 8.0 * k / 400.0);
      CHECK(log_likelihood(g, t) <= at + 1e-9);
    }
    CHECK(log_likelihood(g, 0.0) <= at + 1e-9);
  }
}

TEST_CASE("grouped data validation") {
  GroupedData g = make_data({1.0, 2.0}, {0.25, 0.25}, {0, 1}, 3);
  CHECK_THROWS_AS(validate(g), Error);
  g.num_areas = 2;
  CHECK_NOTHROW(validate(g));
  g.weights[0] = 0.0;
  CHECK_THROWS_AS(validate(g), Error);
  g.weights[0] = 0.25;
  g.y_l[1] = std::nan("");
  CHECK_THROWS_AS(estimate_sigma2(g), Error);
}
