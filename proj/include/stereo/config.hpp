#pragma once

#include "json.hpp"
#include "stereo/model.hpp"

namespace stereo {

nlohmann::json to_json(const ModelConfig& cfg);
// Keys absent from `j` keep their value from `base`; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

} // namespace stereo
