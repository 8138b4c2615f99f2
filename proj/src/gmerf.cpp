#include "gmerf/gmerf.hpp"

#include <optional>

#include "gmerf/pql_loop.hpp"

namespace gmerf {

namespace {

class ForestLearner {
 public:
  ForestLearner(const Matrix& features, const ForestConfig& cfg) : features_(features), cfg_(cfg) {}

  Vector fit(const Vector& y_star, const Vector& w) {
    forest_.emplace(fit_forest({features_, y_star, w}, cfg_));
    OobPrediction oob = oob_predict(*forest_, features_);
    degenerate_ = oob.num_degenerate();
    return std::move(oob.values);
  }

  Forest take() { return std::move(*forest_); }
  Index degenerate() const { return degenerate_; }

 private:
  const Matrix& features_;
  ForestConfig cfg_;
  std::optional<Forest> forest_;
  Index degenerate_ = 0;
};

void check_shapes(std::size_t n, const Matrix& features, std::size_t n_area) {
  if (static_cast<Index>(n) != features.rows() || n != n_area) {
    throw Error(ErrorKind::invalid_input, "response, features and area ids differ in length");
  }
}

}  // namespace

std::string GmerfModel::flags() const {
  std::string out;
  auto add = [&](const char* f) {
    if (!out.empty()) out += ';';
    out += f;
  };
  if (trace.capped) add("macro_cap");
  if (trace.any_micro_capped()) add("micro_cap");
  if (oob_degenerate > 0) add("oob_degenerate");
  return out;
}

MicroFit fit_micro(const Vector& y_l, const Vector& w, const Matrix& features, const std::vector<int>& area,
                   int num_areas, const GmerfConfig& cfg) {
  validate(cfg.pql);
  if (y_l.size() != features.rows() || w.size() != y_l.size() || static_cast<Index>(area.size()) != y_l.size()) {
    throw Error(ErrorKind::invalid_input, "fit_micro: inputs differ in length");
  }
  ForestLearner learner(features, cfg.forest);
  detail::MicroState st = detail::run_micro(y_l, w, area, num_areas, cfg.pql, learner);
  return MicroFit{learner.take(), std::move(st.nu), st.vc.sigma2_nu, std::move(st.offset), std::move(st.trace),
                  learner.degenerate()};
}

GmerfModel fit_gmerf(std::span<const int> y, const Matrix& features, std::span<const AreaId> area,
                     const GmerfConfig& cfg) {
  check_shapes(y.size(), features, area.size());
  validate_binary_response(y);
  validate(cfg.pql);
  const AreaIndex areas(area);
  ForestLearner learner(features, cfg.forest);
  detail::PqlState st = detail::run_pql(y, areas, cfg.pql, learner);

  GmerfModel model{learner.take(), {}, {}, st.sigma2_nu, std::move(st.trace), std::move(st.eta),
                   learner.degenerate(), cfg};
  for (int i = 0; i < areas.size(); ++i) {
    model.nu_hat[areas.ids()[i]] = st.nu[i];
    model.sample_sizes[areas.ids()[i]] = areas.counts()[i];
  }
  return model;
}

}  // namespace gmerf
