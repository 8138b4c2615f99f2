#pragma once

// Doubly iterative PQL driver shared by the forest and linear fixed parts.
//
// A Learner provides `Vector fit(const Vector& y_star, const Vector& w)`,
// returning its prediction of the fixed part for every training row (OOB
// predictions for a forest, fitted values for least squares). The learner
// keeps the state of its most recent fit.

#include <cmath>

#include "gmerf/mixed_model.hpp"
#include "gmerf/pql.hpp"

namespace gmerf::detail {

struct MicroState {
  Vector nu;
  VarianceComponents vc;
  Vector offset;
  MicroTrace trace;
};

template <class Learner>
MicroState run_micro(const Vector& y_l, const Vector& w, const std::vector<int>& area, int num_areas,
                     const PqlControl& ctl, Learner& learner) {
  MicroState st;
  st.nu = Vector::Zero(num_areas);
  GroupedData data{y_l, Vector(), w, area, num_areas};
  Vector y_star(y_l.size());
  double previous = 0.0;
  for (int b = 1; b <= ctl.max_micro; ++b) {
    for (Index j = 0; j < y_l.size(); ++j) y_star[j] = y_l[j] - st.nu[area[j]];
    data.offset = learner.fit(y_star, w);
    st.vc = estimate_sigma2(data);
    st.nu = blup(data, st.vc);
    const double value = gll(data, st.nu, st.vc);
    st.trace.gll.push_back(value);
    if (b > 1 && std::abs(value - previous) < ctl.gll_rel_tol * std::abs(previous)) {
      st.offset = std::move(data.offset);
      return st;
    }
    previous = value;
  }
  st.trace.capped = true;
  st.offset = std::move(data.offset);
  return st;
}

struct PqlState {
  Vector nu;
  double sigma2_nu = 0.0;
  Vector eta;
  PqlTrace trace;
};

template <class Learner>
PqlState run_pql(std::span<const int> y, const AreaIndex& areas, const PqlControl& ctl, Learner& learner) {
  const auto n = static_cast<Index>(y.size());
  Vector mu = initialize_mu(y);
  Linearized lin = linearize(y, mu, ctl.mu_clamp_eps);
  Vector eta_old(n);
  for (Index j = 0; j < n; ++j) eta_old[j] = logit(clamp_mu(mu[j], ctl.mu_clamp_eps));

  PqlState out;
  out.trace.capped = true;
  for (int macro = 1; macro <= ctl.max_macro; ++macro) {
    MicroState st = run_micro(lin.y_l, lin.w, areas.rows(), areas.size(), ctl, learner);
    Vector eta(n);
    double change = 0.0;
    for (Index j = 0; j < n; ++j) {
      eta[j] = st.offset[j] + st.nu[areas.rows()[j]];
      change += std::abs(eta[j] - eta_old[j]) / (std::abs(eta_old[j]) + 1.0);
    }
    change /= static_cast<double>(n);
    out.trace.macro.push_back({std::move(st.trace), change});
    out.nu = std::move(st.nu);
    out.sigma2_nu = st.vc.sigma2_nu;
    for (Index j = 0; j < n; ++j) mu[j] = clamp_mu(expit(eta[j]), ctl.mu_clamp_eps);
    out.eta = eta;
    if (change < ctl.eta_rel_tol) {
      out.trace.capped = false;
      break;
    }
    eta_old = std::move(eta);
    lin = linearize(y, mu, ctl.mu_clamp_eps);
  }
  return out;
}

}  // namespace gmerf::detail
