#pragma once

#include <nlohmann/json.hpp>

#include "featdesc/activation_index.hpp"
#include "featdesc/featurizer.hpp"

namespace featdesc {

nlohmann::json feature_to_json(const FeatureRef& f);
FeatureRef feature_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const ActivationRecord& r);
ActivationRecord record_from_json(const nlohmann::json& j);

}  // namespace featdesc
