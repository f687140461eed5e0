#include "stereo/config.hpp"

#include <set>

#include "stereo/errors.hpp"

namespace stereo {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

} // namespace

json to_json(const ModelConfig& c) {
    return json{
        {"variant", to_string(c.variant)},
        {"max_disparity", c.max_disparity},
        {"precision", c.precision == Precision::f64 ? "f64" : "f32"},
        {"feature_extractor",
         {{"channels", c.features.channels},
          {"stem_channels", c.features.stem_channels},
          {"projected_channels", c.features.projected_channels},
          {"blocks_per_stage", c.features.blocks_per_stage}}},
        {"cost_volume", {{"groups", c.groups}, {"projected_groups", c.projected_groups}}},
        {"aggregation",
         {{"channel_dims", c.aggregation.channel_dims},
          {"toy_scale_factor", c.aggregation.toy_scale_factor},
          {"hourglass_count", c.aggregation.hourglass_count},
          {"entry_tap", c.aggregation.entry_tap}}},
        {"refinement",
         {{"dilations", c.refinement.dilations},
          {"channels", c.refinement.channels},
          {"disparity_feature_channels", c.refinement.disparity_feature_channels},
          {"displacement", c.refinement.displacement}}},
    };
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
    ModelConfig c = base;
    reject_unknown(j, {"variant", "max_disparity", "precision", "feature_extractor", "cost_volume", "aggregation",
                       "refinement"},
                   "model config");
    if (j.contains("variant")) {
        c.variant = parse_variant(j.at("variant").get<std::string>());
    }
    read(j, "max_disparity", c.max_disparity);
    if (j.contains("precision")) {
        auto p = j.at("precision").get<std::string>();
        if (p != "f32" && p != "f64") {
            throw ConfigError("precision must be f32 or f64");
        }
        c.precision = p == "f64" ? Precision::f64 : Precision::f32;
    }
    if (j.contains("feature_extractor")) {
        const auto& f = j.at("feature_extractor");
        reject_unknown(f, {"channels", "stem_channels", "projected_channels", "blocks_per_stage"}, "feature_extractor");
        read(f, "channels", c.features.channels);
        read(f, "stem_channels", c.features.stem_channels);
        read(f, "projected_channels", c.features.projected_channels);
        read(f, "blocks_per_stage", c.features.blocks_per_stage);
    }
    if (j.contains("cost_volume")) {
        const auto& v = j.at("cost_volume");
        reject_unknown(v, {"groups", "projected_groups"}, "cost_volume");
        read(v, "groups", c.groups);
        read(v, "projected_groups", c.projected_groups);
    }
    if (j.contains("aggregation")) {
        const auto& a = j.at("aggregation");
        reject_unknown(a, {"channel_dims", "toy_scale_factor", "hourglass_count", "entry_tap"}, "aggregation");
        read(a, "channel_dims", c.aggregation.channel_dims);
        read(a, "toy_scale_factor", c.aggregation.toy_scale_factor);
        read(a, "hourglass_count", c.aggregation.hourglass_count);
        read(a, "entry_tap", c.aggregation.entry_tap);
    }
    if (j.contains("refinement")) {
        const auto& r = j.at("refinement");
        reject_unknown(r, {"dilations", "channels", "disparity_feature_channels", "displacement"}, "refinement");
        read(r, "dilations", c.refinement.dilations);
        read(r, "channels", c.refinement.channels);
        read(r, "disparity_feature_channels", c.refinement.disparity_feature_channels);
        read(r, "displacement", c.refinement.displacement);
    }
    c.validate();
    return c;
}

} // namespace stereo
