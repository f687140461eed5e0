#include "stereo/refinement.hpp"

#include "stereo/errors.hpp"

namespace stereo {

void RefineConfig::validate() const {
    if (dilations.size() != 8) {
        throw ConfigError("refinement needs 8 dilations, got " + std::to_string(dilations.size()));
    }
    for (int d : dilations) {
        if (d < 1) {
            throw ConfigError("refinement dilations must be >= 1");
        }
    }
    if (channels < 1 || disparity_feature_channels < 1 || displacement < 1) {
        throw ConfigError("refinement widths and displacement must be positive");
    }
}

int64_t receptive_field(const RefineConfig& cfg) {
    cfg.validate();
    int64_t rf = 1;
    for (size_t i = 0; i < cfg.dilations.size(); ++i) {
        // Residual blocks (entries 4..6) hold two 3x3 convolutions each.
        int convs = i >= 4 && i < 7 ? 2 : 1;
        rf += convs * 2 * cfg.dilations[i];
    }
    return rf;
}

Tensor upsample_features(const Tensor& features, int64_t height, int64_t width) {
    return resize(features, {height, width}, ResizeMode::bilinear);
}

Tensor upsample_disparity(const Tensor& disparity, int64_t height, int64_t width) {
    if (disparity.ndim() != 3) {
        throw ShapeError("upsample_disparity expects [N, H, W], got " + shape_str(disparity.shape()));
    }
    const double ratio = static_cast<double>(width) / static_cast<double>(disparity.dim(2));
    Tensor x = reshape(disparity, {disparity.dim(0), 1, disparity.dim(1), disparity.dim(2)});
    x = resize(x, {height, width}, ResizeMode::bilinear);
    return scale(reshape(x, {disparity.dim(0), height, width}), ratio);
}

Refinement::Refinement(ParameterSet& params, const std::string& name, const RefineConfig& cfg,
                       int64_t feature_channels)
    : config(cfg) {
    cfg.validate();
    offsets_ = residue_offsets(cfg.displacement);
    disparity_embed_ = Conv(params, name + ".disparity_embed", 2, 1, cfg.disparity_feature_channels, 3,
                            {.padding = {1}}, true);
    int64_t in = cfg.displacement + cfg.disparity_feature_channels + 2 * feature_channels;
    for (size_t i = 0; i < 4; ++i) {
        int d = cfg.dilations[i];
        convs_.emplace_back(params, name + ".conv" + std::to_string(i), 2, in, cfg.channels, 3,
                            ConvOptions{.padding = {same_padding(3, d)}, .dilation = {d}});
        in = cfg.channels;
    }
    for (size_t i = 4; i < 7; ++i) {
        blocks_.emplace_back(params, name + ".block" + std::to_string(i - 4), cfg.channels, cfg.channels, 1,
                             cfg.dilations[i]);
    }
    const int d = cfg.dilations[7];
    output_ = Conv(params, name + ".output", 2, cfg.channels, 1, 3, {.padding = {same_padding(3, d)}, .dilation = {d}},
                   true);
    dispatch(output_.weight.precision(), [&]<class T>() {
        auto w = output_.weight.mutable_data<T>();
        std::fill(w.begin(), w.end(), T(0));
    });
}

RefineInput Refinement::make_input(const Tensor& left, const Tensor& right, const Tensor& init_disparity,
                                   int max_disparity, const ForwardContext& ctx) const {
    const int64_t N = init_disparity.dim(0), H = init_disparity.dim(1), W = init_disparity.dim(2);
    RefineInput in;
    in.init_disparity = init_disparity;
    in.left_feature = upsample_features(left, H, W);
    Tensor right_full = upsample_features(right, H, W);
    WarpedCorrelation wc = build_warped_correlation(in.left_feature, right_full, init_disparity, offsets_);
    in.warped_corr = wc.volume;
    in.recon_error = reconstruction_error(in.left_feature, wc.warped_right);
    const double norm = 1.0 / static_cast<double>(std::max(max_disparity, 1));
    in.disparity_feature =
        activate(disparity_embed_(scale(reshape(init_disparity, {N, 1, H, W}), norm)), ctx.activation);
    return in;
}

Tensor Refinement::operator()(const RefineInput& in, int max_disparity, const ForwardContext& ctx) const {
    const int64_t N = in.init_disparity.dim(0), H = in.init_disparity.dim(1), W = in.init_disparity.dim(2);
    Tensor x = concat({in.warped_corr, in.disparity_feature, in.left_feature, in.recon_error}, 1);
    for (const auto& conv : convs_) {
        x = conv(x, ctx);
    }
    for (const auto& block : blocks_) {
        x = block(x, ctx);
    }
    Tensor residue = reshape(output_(x), {N, H, W});
    return clamp(add(in.init_disparity, residue), 0.0, static_cast<double>(max_disparity - 1));
}

} // namespace stereo
