#pragma once

#include <span>
#include <vector>

#include "gmerf/common.hpp"

namespace gmerf {

/// Convergence control shared by every PQL fit (GMERF and the GLMM baseline).
struct PqlControl {
  double gll_rel_tol = 1e-5;
  double eta_rel_tol = 0.01;
  int max_micro = 100;
  int max_macro = 50;
  double mu_clamp_eps = 1e-6;
};

void validate(const PqlControl& ctl);

/// Starting means: 0.75 where y = 1, 0.25 where y = 0.
Vector initialize_mu(std::span<const int> y);

inline double clamp_mu(double mu, double eps) { return std::min(std::max(mu, eps), 1.0 - eps); }

struct Linearized {
  Vector y_l;  // logit(mu) + (y - mu) / (mu (1 - mu))
  Vector w;    // mu (1 - mu)
};

/// First-order Taylor working response and weights. mu is clamped into
/// [eps, 1 - eps] first, so every weight lies in (0, 0.25].
Linearized linearize(std::span<const int> y, const Vector& mu, double mu_clamp_eps);

/// Same formula for a real-valued response in [0, 1].
Linearized linearize(std::span<const double> y, const Vector& mu, double mu_clamp_eps);

/// Throws degenerate_response/invalid_input unless y is a non-constant 0/1 vector.
void validate_binary_response(std::span<const int> y);

struct MicroTrace {
  std::vector<double> gll;
  bool capped = false;
};

struct MacroStep {
  MicroTrace micro;
  double eta_change = 0.0;
};

struct PqlTrace {
  std::vector<MacroStep> macro;
  bool capped = false;

  bool any_micro_capped() const;
  int total_micro() const;
};

/// Sorted distinct area ids with the dense index of every row.
class AreaIndex {
 public:
  explicit AreaIndex(std::span<const AreaId> area);

  int size() const noexcept { return static_cast<int>(ids_.size()); }
  const std::vector<AreaId>& ids() const noexcept { return ids_; }
  const std::vector<int>& rows() const noexcept { return dense_; }
  const std::vector<int>& counts() const noexcept { return counts_; }

 private:
  std::vector<AreaId> ids_;
  std::vector<int> dense_;
  std::vector<int> counts_;
};

}  // namespace gmerf
