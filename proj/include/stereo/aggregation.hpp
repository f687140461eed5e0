#pragma once

#include <array>
#include <string>
#include <vector>

#include "stereo/layers.hpp"

namespace stereo {

struct AggregationConfig {
    std::array<int64_t, 4> channel_dims{32, 64, 128, 128};
    int toy_scale_factor = 4; // divides channel_dims
    int hourglass_count = 3;
    // Fuse all four combination volumes through the encoder-decoder; otherwise
    // only the finest volume enters through a two-convolution stem.
    bool integration = true;
    // Adds a supervised tap on the finest volume before it is integrated.
    bool entry_tap = false;

    std::array<int64_t, 4> effective_dims() const;
};

struct SupervisionTap {
    std::string name;
    Tensor disparity; // [N, H, W]
};

// Encoder-decoder over the cost volumes of all four scales. The running
// volume is downsampled with stride-2 convolutions, the matching volume is
// concatenated and fused back to the scale's width; the decoder upsamples with
// transposed convolutions and adds 1x1x1-projected encoder shortcuts.
class IntegrationModule {
public:
    IntegrationModule() = default;
    IntegrationModule(ParameterSet& params, const std::string& name, const std::array<int64_t, 4>& volume_channels,
                      const std::array<int64_t, 4>& dims);

    // Entry stage only (two convolutions on the finest volume).
    Tensor entry(const Tensor& finest, const ForwardContext& ctx) const;
    // volumes[0] finest .. volumes[3] coarsest; `entry_out` from entry().
    Tensor operator()(const Tensor& entry_out, const std::vector<Tensor>& volumes, const ForwardContext& ctx) const;

private:
    std::array<ConvBn, 2> entry_;
    std::array<ConvBn, 3> down_, fuse_, up_, shortcut_;
};

class Hourglass {
public:
    Hourglass() = default;
    Hourglass(ParameterSet& params, const std::string& name, int64_t channels);

    // Shape-preserving for any extents; odd extents are restored through the
    // transposed convolutions' output padding.
    Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

private:
    ConvBn conv1_, conv2_, conv3_, conv4_, conv5_, conv6_, redir1_, redir2_;
};

// Two 3D convolutions to one channel, trilinear upsampling to [D, H, W], soft argmin.
// The last convolution has no bias: soft argmin ignores a constant cost offset.
class OutputModule {
public:
    OutputModule() = default;
    OutputModule(ParameterSet& params, const std::string& name, int64_t channels);

    // volume [N, C, D1, H1, W1] -> disparity [N, H, W] in [0, max_disparity - 1].
    Tensor operator()(const Tensor& volume, int64_t height, int64_t width, int max_disparity,
                      const ForwardContext& ctx) const;

private:
    ConvBn conv_;
    Conv classify_;
};

class Aggregation {
public:
    Aggregation() = default;
    // volume_channels: channel count of each level's combination volume.
    Aggregation(ParameterSet& params, const std::string& name, const AggregationConfig& cfg,
                const std::array<int64_t, 4>& volume_channels);

    // Training mode returns every tap ([entry,] integration|stem, hourglass1..N);
    // evaluation mode returns only the last one.
    std::vector<SupervisionTap> operator()(const std::vector<Tensor>& volumes, int64_t height, int64_t width,
                                           int max_disparity, const ForwardContext& ctx) const;

    // Tap names produced in training mode, in order.
    std::vector<std::string> tap_names() const;

    AggregationConfig config;

private:
    IntegrationModule integration_;
    std::array<ConvBn, 2> stem_;
    std::vector<Hourglass> hourglasses_;
    std::vector<OutputModule> outputs_;
};

} // namespace stereo
