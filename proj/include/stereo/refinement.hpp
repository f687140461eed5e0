#pragma once

#include <string>
#include <vector>

#include "stereo/cost_volume.hpp"
#include "stereo/layers.hpp"

namespace stereo {

struct RefineConfig {
    // Four plain convolutions, three residual blocks, one output convolution.
    std::vector<int> dilations{1, 1, 2, 4, 8, 16, 1, 1};
    int64_t channels = 32;
    int64_t disparity_feature_channels = 32;
    int displacement = 24;

    void validate() const;
};

// Receptive field (pixels along one axis) of the 3x3 stack described by `dilations`.
int64_t receptive_field(const RefineConfig& cfg);

struct RefineInput {
    Tensor init_disparity;      // [N, H, W]
    Tensor warped_corr;         // [N, D_r, H, W]
    Tensor disparity_feature;   // [N, 32, H, W]
    Tensor left_feature;        // [N, C, H, W]
    Tensor recon_error;         // [N, C, H, W]
};

// Resizes features, not values. Disparity maps also scale values by the width ratio.
Tensor upsample_features(const Tensor& features, int64_t height, int64_t width);
Tensor upsample_disparity(const Tensor& disparity, int64_t height, int64_t width);

class Refinement {
public:
    Refinement() = default;
    Refinement(ParameterSet& params, const std::string& name, const RefineConfig& cfg, int64_t feature_channels);

    // left/right: finest pyramid features [N, C, H/4, W/4]; init_disparity [N, H, W].
    // The disparity embedding sees init_disparity / max_disparity.
    RefineInput make_input(const Tensor& left, const Tensor& right, const Tensor& init_disparity, int max_disparity,
                           const ForwardContext& ctx) const;
    // init + residue, clamped to [0, max_disparity - 1].
    Tensor operator()(const RefineInput& input, int max_disparity, const ForwardContext& ctx) const;

    // Final 1-channel convolution; zero-initialized so refinement starts as the identity.
    Conv& output_layer() { return output_; }

    RefineConfig config;

private:
    Conv disparity_embed_; // no normalization: absolute disparity must survive
    std::vector<ConvBn> convs_;
    std::vector<ResidualBlock> blocks_;
    Conv output_;
    std::vector<int> offsets_;
};

} // namespace stereo
