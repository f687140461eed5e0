#include "stereo/features.hpp"

#include "stereo/errors.hpp"

namespace stereo {

FeatureExtractor::FeatureExtractor(ParameterSet& params, const std::string& name, const FeatureConfig& cfg)
    : config(cfg) {
    if (cfg.blocks_per_stage < 1) {
        throw ConfigError("blocks_per_stage must be at least 1");
    }
    if (cfg.levels < 1 || cfg.levels > 4) {
        throw ConfigError("feature levels must be in [1, 4]");
    }
    stem_.emplace_back(params, name + ".stem0", 2, 3, cfg.stem_channels, 3,
                       ConvOptions{.stride = {2}, .padding = {1}});
    stem_.emplace_back(params, name + ".stem1", 2, cfg.stem_channels, cfg.stem_channels, 3,
                       ConvOptions{.padding = {1}});
    int64_t in = cfg.stem_channels;
    stages_.resize(static_cast<size_t>(cfg.levels));
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            std::string block = name + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            stages_[s].emplace_back(params, block, in, cfg.channels[s], b == 0 ? 2 : 1);
            in = cfg.channels[s];
        }
        heads_.emplace_back(params, name + ".head" + std::to_string(s + 1), 2, cfg.channels[s],
                         cfg.projected_channels, 1, ConvOptions{}, true);
    }
}

FeaturePyramid FeatureExtractor::operator()(const Tensor& image, const ForwardContext& ctx) const {
    if (image.ndim() != 4 || image.dim(1) != 3) {
        throw ShapeError("feature extractor expects [N, 3, H, W], got " + shape_str(image.shape()));
    }
    if (image.dim(2) % kPyramidDivisor != 0 || image.dim(3) % kPyramidDivisor != 0) {
        throw ShapeError("image extents " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                         " must be divisible by " + std::to_string(kPyramidDivisor));
    }
    Tensor x = image;
    for (const auto& layer : stem_) {
        x = layer(x, ctx);
    }
    FeaturePyramid out;
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (const auto& block : stages_[s]) {
            x = block(x, ctx);
        }
        out.levels.push_back(x);
        out.projected.push_back(heads_[s](x));
    }
    return out;
}

} // namespace stereo
