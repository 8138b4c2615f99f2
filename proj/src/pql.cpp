#include "gmerf/pql.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace gmerf {

void validate(const PqlControl& ctl) {
  if (!(ctl.gll_rel_tol > 0.0) || !(ctl.eta_rel_tol > 0.0)) {
    throw Error(ErrorKind::invalid_input, "convergence tolerances must be positive");
  }
  if (ctl.max_micro < 1 || ctl.max_macro < 1) {
    throw Error(ErrorKind::invalid_input, "iteration caps must be at least 1");
  }
  if (!(ctl.mu_clamp_eps > 0.0 && ctl.mu_clamp_eps < 0.5)) {
    throw Error(ErrorKind::invalid_input, "mu_clamp_eps must lie in (0, 0.5)");
  }
}

void validate_binary_response(std::span<const int> y) {
  if (y.size() < 2) throw Error(ErrorKind::insufficient_data, "insufficient data: fewer than 2 observations");
  int ones = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(ErrorKind::invalid_input, "response must be binary (0/1)");
    ones += v;
  }
  if (ones == 0 || ones == static_cast<int>(y.size())) {
    throw Error(ErrorKind::degenerate_response, "degenerate response: all observations are " +
                                                    std::string(ones == 0 ? "0" : "1"));
  }
}

Vector initialize_mu(std::span<const int> y) {
  Vector mu(static_cast<Index>(y.size()));
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] != 0 && y[j] != 1) throw Error(ErrorKind::invalid_input, "response must be binary (0/1)");
    mu[static_cast<Index>(j)] = y[j] == 1 ? 0.75 : 0.25;
  }
  return mu;
}

Linearized linearize(std::span<const int> y, const Vector& mu, double mu_clamp_eps) {
  const std::vector<double> real(y.begin(), y.end());
  return linearize(std::span<const double>(real), mu, mu_clamp_eps);
}

Linearized linearize(std::span<const double> y, const Vector& mu, double mu_clamp_eps) {
  const auto n = static_cast<Index>(y.size());
  if (mu.size() != n) throw Error(ErrorKind::invalid_input, "linearize: y and mu differ in length");
  Linearized out{Vector(n), Vector(n)};
  for (Index j = 0; j < n; ++j) {
    const double m = clamp_mu(mu[j], mu_clamp_eps);
    const double v = m * (1.0 - m);
    out.y_l[j] = logit(m) + (y[j] - m) / v;
    out.w[j] = v;
  }
  return out;
}

bool PqlTrace::any_micro_capped() const {
  return std::any_of(macro.begin(), macro.end(), [](const MacroStep& s) { return s.micro.capped; });
}

int PqlTrace::total_micro() const {
  int total = 0;
  for (const MacroStep& s : macro) total += static_cast<int>(s.micro.gll.size());
  return total;
}

AreaIndex::AreaIndex(std::span<const AreaId> area) {
  std::map<AreaId, int> lookup;
  for (AreaId a : area) lookup.emplace(a, 0);
  int k = 0;
  for (auto& [id, idx] : lookup) {
    idx = k++;
    ids_.push_back(id);
  }
  counts_.assign(ids_.size(), 0);
  dense_.reserve(area.size());
  for (AreaId a : area) {
    const int idx = lookup.at(a);
    dense_.push_back(idx);
    ++counts_[idx];
  }
}

}  // namespace gmerf
