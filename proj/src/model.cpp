#include "stereo/model.hpp"

#include "stereo/errors.hpp"

namespace stereo {

const char* to_string(Variant v) {
    switch (v) {
    case Variant::base: return "base";
    case Variant::ms: return "ms";
    case Variant::msmd: return "msmd";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "base") return Variant::base;
    if (name == "ms") return Variant::ms;
    if (name == "msmd") return Variant::msmd;
    throw ConfigError("unknown model variant '" + name + "' (expected base, ms or msmd)");
}

void ModelConfig::validate() const {
    level_disparities(max_disparity);
    const int levels = variant == Variant::base ? 1 : 4;
    for (int i = 0; i < levels; ++i) {
        if (features.channels[static_cast<size_t>(i)] % groups != 0) {
            throw ConfigError("feature channels " + std::to_string(features.channels[static_cast<size_t>(i)]) +
                              " not divisible by " + std::to_string(groups) + " groups");
        }
    }
    if (projected_groups < 1 || features.projected_channels < 1) {
        throw ConfigError("projected channel counts must be positive");
    }
    aggregation.effective_dims();
    if (variant == Variant::msmd) {
        refinement.validate();
    }
}

std::vector<std::string> ModelConfig::tap_names() const {
    AggregationConfig agg = aggregation;
    agg.integration = variant != Variant::base;
    std::vector<std::string> names;
    if (agg.entry_tap && agg.integration) {
        names.emplace_back("entry");
    }
    names.emplace_back(agg.integration ? "integration" : "stem");
    for (int h = 0; h < agg.hourglass_count; ++h) {
        names.push_back("hourglass" + std::to_string(h + 1));
    }
    if (variant == Variant::msmd) {
        names.emplace_back("refined");
    }
    return names;
}

StereoNet::StereoNet(const ModelConfig& cfg, uint64_t seed) : config_(cfg), params_(cfg.precision, seed) {
    config_.validate();
    const bool multiscale = cfg.variant != Variant::base;
    FeatureConfig fc = cfg.features;
    fc.levels = multiscale ? 4 : 1;
    config_.features = fc;
    config_.aggregation.integration = multiscale;
    features_ = FeatureExtractor(params_, "features", fc);
    std::array<int64_t, 4> volume_channels{};
    for (int i = 0; i < fc.levels; ++i) {
        volumes_.emplace_back(params_, "cost_volume.level" + std::to_string(i + 1) + ".gwc_projection", cfg.groups,
                              cfg.projected_groups);
        volume_channels[static_cast<size_t>(i)] = 2 * fc.projected_channels + cfg.projected_groups;
    }
    aggregation_ = Aggregation(params_, "aggregation", config_.aggregation, volume_channels);
    if (cfg.variant == Variant::msmd) {
        refinement_ = Refinement(params_, "refinement", cfg.refinement, fc.channels[0]);
    }
}

ModelOutput StereoNet::forward(const Tensor& left_in, const Tensor& right_in, const ForwardContext& ctx) const {
    auto batch = [this](const Tensor& img) {
        Tensor x = img.ndim() == 3 ? reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)}) : img;
        if (x.precision() != config_.precision) {
            x = x.to(config_.precision);
        }
        // Fixed per-channel standardization with mean 0.5 and std 0.5.
        return add_scalar(scale(x, 2.0), -1.0);
    };
    Tensor left = batch(left_in), right = batch(right_in);
    if (left.shape() != right.shape()) {
        throw ShapeError("left/right shapes differ: " + shape_str(left.shape()) + " vs " + shape_str(right.shape()));
    }
    const int64_t H = left.dim(2), W = left.dim(3);
    FeaturePyramid fl = features_(left, ctx);
    FeaturePyramid fr = features_(right, ctx);
    const auto disp = level_disparities(config_.max_disparity);
    std::vector<Tensor> volumes;
    for (size_t i = 0; i < volumes_.size(); ++i) {
        volumes.push_back(volumes_[i](fl.projected[i], fr.projected[i], fl.levels[i], fr.levels[i], disp[i]));
    }
    ModelOutput out;
    out.taps = aggregation_(volumes, H, W, config_.max_disparity, ctx);
    out.initial = out.taps.back().disparity;
    if (config_.variant == Variant::msmd) {
        RefineInput rin = refinement_.make_input(fl.levels[0], fr.levels[0], out.initial, config_.max_disparity, ctx);
        out.refined = refinement_(rin, config_.max_disparity, ctx);
        out.taps.push_back({"refined", out.refined});
    }
    return out;
}

} // namespace stereo
