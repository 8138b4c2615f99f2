#pragma once

#include "json.hpp"

#include "gmerf/forest.hpp"
#include "gmerf/glmm.hpp"
#include "gmerf/gmerf.hpp"

namespace gmerf {

// In-bag bookkeeping is not stored: a restored forest predicts but cannot
// produce out-of-bag values.
nlohmann::json to_json(const Forest& forest);
Forest forest_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GmerfConfig& cfg);
GmerfConfig gmerf_config_from_json(const nlohmann::json& j, GmerfConfig base = {});

nlohmann::json to_json(const GmerfModel& model);
GmerfModel gmerf_model_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GlmmModel& model);
GlmmModel glmm_model_from_json(const nlohmann::json& j);

}  // namespace gmerf
