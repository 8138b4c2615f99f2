#include "gmerf/glmm.hpp"

#include "gmerf/pql_loop.hpp"

namespace gmerf {

namespace {

Matrix with_intercept(const Matrix& features) {
  Matrix design(features.rows(), features.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(features.cols()) = features;
  return design;
}

void check_rank(const Matrix& design, std::span<const std::string> names) {
  auto name_of = [&](Index col) -> std::string {
    if (col == 0) return "(intercept)";
    if (static_cast<std::size_t>(col - 1) < names.size()) return names[col - 1];
    return "x" + std::to_string(col);
  };
  // Columns are checked left to right: a column is offending when it adds
  // nothing to the span of the columns kept before it.
  std::vector<Index> kept;
  std::string offending;
  for (Index c = 0; c < design.cols(); ++c) {
    kept.push_back(c);
    Eigen::ColPivHouseholderQR<Matrix> qr(design(Eigen::all, kept));
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Index>(kept.size())) {
      kept.pop_back();
      if (!offending.empty()) offending += ", ";
      offending += name_of(c);
    }
  }
  if (!offending.empty()) {
    throw Error(ErrorKind::rank_deficient, "design matrix is rank deficient; offending columns: " + offending);
  }
}

class LinearLearner {
 public:
  explicit LinearLearner(const Matrix& design) : design_(design) {}

  Vector fit(const Vector& y_star, const Vector& w) {
    const Vector sw = w.array().sqrt();
    const Matrix a = sw.asDiagonal() * design_;
    const Vector b = sw.cwiseProduct(y_star);
    beta_ = a.colPivHouseholderQr().solve(b);
    return design_ * beta_;
  }

  const Vector& beta() const { return beta_; }

 private:
  const Matrix& design_;
  Vector beta_;
};

}  // namespace

std::string GlmmModel::flags() const {
  std::string out;
  if (trace.capped) out = "macro_cap";
  if (trace.any_micro_capped()) out += out.empty() ? "micro_cap" : ";micro_cap";
  return out;
}

GlmmModel fit_glmm_pql(std::span<const int> y, const Matrix& features, std::span<const AreaId> area,
                       const PqlControl& ctl, std::span<const std::string> names) {
  if (static_cast<Index>(y.size()) != features.rows() || y.size() != area.size()) {
    throw Error(ErrorKind::invalid_input, "response, features and area ids differ in length");
  }
  validate_binary_response(y);
  validate(ctl);
  if (!features.allFinite()) throw Error(ErrorKind::invalid_input, "invalid input: non-finite covariate");
  const Matrix design = with_intercept(features);
  check_rank(design, names);

  const AreaIndex areas(area);
  LinearLearner learner(design);
  detail::PqlState st = detail::run_pql(y, areas, ctl, learner);

  GlmmModel model{learner.beta(), {}, {}, st.sigma2_nu, std::move(st.trace), std::move(st.eta)};
  if (!model.beta.allFinite()) throw Error(ErrorKind::convergence, "GLMM coefficients are not finite");
  for (int i = 0; i < areas.size(); ++i) {
    model.nu_hat[areas.ids()[i]] = st.nu[i];
    model.sample_sizes[areas.ids()[i]] = areas.counts()[i];
  }
  return model;
}

std::vector<AreaEstimate> cep_area_proportions(const GlmmModel& model, const CensusFrame& census) {
  if (census.features.cols() + 1 != model.beta.size()) {
    throw Error(ErrorKind::invalid_input, "census covariates do not match the GLMM coefficients");
  }
  const Vector lin = (census.features * model.beta.tail(model.beta.size() - 1)).array() + model.beta[0];
  std::map<AreaId, std::pair<double, int>> sums;
  for (std::size_t j = 0; j < census.area.size(); ++j) {
    const AreaId id = census.area[j];
    const auto it = model.nu_hat.find(id);
    auto& s = sums[id];
    s.first += expit(lin[static_cast<Index>(j)] + (it == model.nu_hat.end() ? 0.0 : it->second));
    ++s.second;
  }
  std::vector<AreaEstimate> out;
  for (const auto& [id, s] : sums) {
    AreaEstimate e;
    e.area = id;
    e.mu_hat = s.first / s.second;
    e.N_i = s.second;
    e.in_sample = model.nu_hat.contains(id);
    if (auto it = model.sample_sizes.find(id); it != model.sample_sizes.end()) e.n_i = it->second;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gmerf
