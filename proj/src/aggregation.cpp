#include "stereo/aggregation.hpp"

#include "stereo/errors.hpp"

namespace stereo {

namespace {

const ConvOptions kSame{.padding = {1}};
const ConvOptions kDown{.stride = {2}, .padding = {1}};
const ConvOptions kUp{.stride = {2}, .padding = {1}, .transposed = true};

} // namespace

std::array<int64_t, 4> AggregationConfig::effective_dims() const {
    if (toy_scale_factor < 1) {
        throw ConfigError("toy_scale_factor must be at least 1");
    }
    std::array<int64_t, 4> out{};
    for (size_t i = 0; i < 4; ++i) {
        if (channel_dims[i] % toy_scale_factor != 0 || channel_dims[i] / toy_scale_factor < 1) {
            throw ConfigError("channel dim " + std::to_string(channel_dims[i]) + " not divisible by scale factor " +
                              std::to_string(toy_scale_factor));
        }
        out[i] = channel_dims[i] / toy_scale_factor;
    }
    return out;
}

IntegrationModule::IntegrationModule(ParameterSet& params, const std::string& name,
                                     const std::array<int64_t, 4>& volume_channels,
                                     const std::array<int64_t, 4>& dims) {
    entry_[0] = ConvBn(params, name + ".entry0", 3, volume_channels[0], dims[0], 3, kSame);
    entry_[1] = ConvBn(params, name + ".entry1", 3, dims[0], dims[0], 3, kSame);
    for (size_t i = 1; i < 4; ++i) {
        std::string s = std::to_string(i + 1);
        down_[i - 1] = ConvBn(params, name + ".down" + s, 3, dims[i - 1], dims[i], 3, kDown);
        fuse_[i - 1] = ConvBn(params, name + ".fuse" + s, 3, dims[i] + volume_channels[i], dims[i], 3, kSame);
    }
    for (size_t i = 3; i >= 1; --i) {
        std::string s = std::to_string(i);
        up_[i - 1] = ConvBn(params, name + ".up" + s, 3, dims[i], dims[i - 1], 3, kUp);
        shortcut_[i - 1] = ConvBn(params, name + ".shortcut" + s, 3, dims[i - 1], dims[i - 1], 1, {});
    }
}

Tensor IntegrationModule::entry(const Tensor& finest, const ForwardContext& ctx) const {
    return entry_[1](entry_[0](finest, ctx), ctx);
}

Tensor IntegrationModule::operator()(const Tensor& entry_out, const std::vector<Tensor>& volumes,
                                     const ForwardContext& ctx) const {
    if (volumes.size() != 4) {
        throw ShapeError("integration needs 4 volumes, got " + std::to_string(volumes.size()));
    }
    std::array<Tensor, 4> enc;
    enc[0] = entry_out;
    for (size_t i = 1; i < 4; ++i) {
        Tensor x = down_[i - 1](enc[i - 1], ctx);
        if (spatial_extents(x, 3) != spatial_extents(volumes[i], 3) || x.dim(0) != volumes[i].dim(0)) {
            throw ShapeError("integration scale " + std::to_string(i + 1) + ": running volume " +
                             shape_str(x.shape()) + " does not match injected volume " +
                             shape_str(volumes[i].shape()));
        }
        enc[i] = fuse_[i - 1](concat({x, volumes[i]}, 1), ctx);
    }
    Tensor y = enc[3];
    for (size_t i = 3; i >= 1; --i) {
        Tensor up = up_[i - 1].upsample_to(y, spatial_extents(enc[i - 1], 3), ctx, false);
        y = activate(add(up, shortcut_[i - 1](enc[i - 1], ctx, false)), ctx.activation);
    }
    return y;
}

Hourglass::Hourglass(ParameterSet& params, const std::string& name, int64_t c)
    : conv1_(params, name + ".conv1", 3, c, 2 * c, 3, kDown),
      conv2_(params, name + ".conv2", 3, 2 * c, 2 * c, 3, kSame),
      conv3_(params, name + ".conv3", 3, 2 * c, 4 * c, 3, kDown),
      conv4_(params, name + ".conv4", 3, 4 * c, 4 * c, 3, kSame),
      conv5_(params, name + ".conv5", 3, 4 * c, 2 * c, 3, kUp),
      conv6_(params, name + ".conv6", 3, 2 * c, c, 3, kUp),
      redir1_(params, name + ".redir1", 3, c, c, 1, {}),
      redir2_(params, name + ".redir2", 3, 2 * c, 2 * c, 1, {}) {}

Tensor Hourglass::operator()(const Tensor& x, const ForwardContext& ctx) const {
    Tensor c2 = conv2_(conv1_(x, ctx), ctx);
    Tensor c4 = conv4_(conv3_(c2, ctx), ctx);
    Tensor c5 = activate(add(conv5_.upsample_to(c4, spatial_extents(c2, 3), ctx, false), redir2_(c2, ctx, false)),
                         ctx.activation);
    return activate(add(conv6_.upsample_to(c5, spatial_extents(x, 3), ctx, false), redir1_(x, ctx, false)),
                    ctx.activation);
}

OutputModule::OutputModule(ParameterSet& params, const std::string& name, int64_t c)
    : conv_(params, name + ".conv", 3, c, c, 3, kSame), classify_(params, name + ".classify", 3, c, 1, 3, kSame, false) {}

Tensor OutputModule::operator()(const Tensor& volume, int64_t height, int64_t width, int max_disparity,
                                const ForwardContext& ctx) const {
    Tensor cost = classify_(conv_(volume, ctx));
    cost = resize(cost, {max_disparity, height, width}, ResizeMode::trilinear);
    cost = reshape(cost, {cost.dim(0), max_disparity, height, width});
    return soft_argmin(cost, 1);
}

Aggregation::Aggregation(ParameterSet& params, const std::string& name, const AggregationConfig& cfg,
                         const std::array<int64_t, 4>& volume_channels)
    : config(cfg) {
    if (cfg.hourglass_count < 0) {
        throw ConfigError("hourglass_count must be non-negative");
    }
    const auto dims = cfg.effective_dims();
    if (cfg.integration) {
        integration_ = IntegrationModule(params, name + ".integration", volume_channels, dims);
    } else {
        stem_[0] = ConvBn(params, name + ".stem0", 3, volume_channels[0], dims[0], 3, kSame);
        stem_[1] = ConvBn(params, name + ".stem1", 3, dims[0], dims[0], 3, kSame);
    }
    for (int h = 0; h < cfg.hourglass_count; ++h) {
        hourglasses_.emplace_back(params, name + ".hourglass" + std::to_string(h + 1), dims[0]);
    }
    for (const auto& tap : tap_names()) {
        outputs_.emplace_back(params, name + ".output_" + tap, dims[0]);
    }
}

std::vector<std::string> Aggregation::tap_names() const {
    std::vector<std::string> names;
    if (config.entry_tap && config.integration) {
        names.emplace_back("entry");
    }
    names.emplace_back(config.integration ? "integration" : "stem");
    for (int h = 0; h < config.hourglass_count; ++h) {
        names.push_back("hourglass" + std::to_string(h + 1));
    }
    return names;
}

std::vector<SupervisionTap> Aggregation::operator()(const std::vector<Tensor>& volumes, int64_t height,
                                                    int64_t width, int max_disparity,
                                                    const ForwardContext& ctx) const {
    if (volumes.empty() || (config.integration && volumes.size() != 4)) {
        throw ShapeError("aggregation received " + std::to_string(volumes.size()) + " volumes");
    }
    const auto names = tap_names();
    std::vector<Tensor> stages;
    if (config.integration) {
        Tensor e = integration_.entry(volumes[0], ctx);
        if (config.entry_tap) {
            stages.push_back(e);
        }
        stages.push_back(integration_(e, volumes, ctx));
    } else {
        stages.push_back(stem_[1](stem_[0](volumes[0], ctx), ctx));
    }
    for (const auto& hg : hourglasses_) {
        stages.push_back(hg(stages.back(), ctx));
    }
    std::vector<SupervisionTap> taps;
    for (size_t i = ctx.training ? 0 : stages.size() - 1; i < stages.size(); ++i) {
        taps.push_back({names[i], outputs_[i](stages[i], height, width, max_disparity, ctx)});
    }
    return taps;
}

} // namespace stereo
