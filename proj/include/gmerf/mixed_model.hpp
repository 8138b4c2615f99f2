#pragma once

#include <vector>

#include "gmerf/common.hpp"

namespace gmerf {

/// Working data of the weighted random-intercept model
///   y_l = offset + nu[area] + e,   e ~ N(0, diag(1 / weights)),
/// with the offset entering at a fixed coefficient of one. Areas are dense
/// indices in [0, num_areas).
struct GroupedData {
  Vector y_l;
  Vector offset;
  Vector weights;
  std::vector<int> area;
  int num_areas = 0;
};

struct VarianceComponents {
  double sigma2_nu = 0.0;
};

inline constexpr double kSigma2Max = 100.0;
inline constexpr double kGllSigma2Floor = 1e-8;

/// Throws unless lengths agree, weights are positive and finite, and every
/// area index in [0, num_areas) owns at least one row.
void validate(const GroupedData& data);

/// Gaussian log-likelihood of r = y_l - offset with per-area covariance
/// sigma2 * J + W^-1, evaluated through the rank-one determinant and
/// Sherman-Morrison identities.
double log_likelihood(const GroupedData& data, double sigma2);

/// Maximum-likelihood sigma2 on [0, kSigma2Max]. A log-spaced scan brackets
/// the maximum, Brent's method refines it; zero is a legal answer.
VarianceComponents estimate_sigma2(const GroupedData& data);

/// nu_i = sigma2 * S_i / (1 + sigma2 * T_i), S_i = sum w r, T_i = sum w.
Vector blup(const GroupedData& data, const VarianceComponents& vc);

/// Generalized log-likelihood used to monitor the inner iterations. sigma2
/// is floored at kGllSigma2Floor before taking log and inverse.
double gll(const GroupedData& data, const Vector& nu, const VarianceComponents& vc);

}  // namespace gmerf
