#pragma once

#include <array>
#include <string>
#include <vector>

#include "stereo/layers.hpp"

namespace stereo {

struct FeatureConfig {
    std::array<int64_t, 4> channels{16, 24, 32, 32}; // backbone width at 1/4 .. 1/32
    int64_t stem_channels = 16;                      // 1/2 resolution
    int64_t projected_channels = 4;                  // per-level head feeding the concat volumes
    int blocks_per_stage = 1;
    int levels = 4; // fewer levels build only the finest stages
};

// Level 0 is the finest (1/4 resolution); each following level halves H and W.
struct FeaturePyramid {
    std::vector<Tensor> levels;    // [N, channels[i], H_i, W_i]
    std::vector<Tensor> projected; // [N, projected_channels, H_i, W_i]
};

inline constexpr int64_t kPyramidDivisor = 32;

class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(ParameterSet& params, const std::string& name, const FeatureConfig& cfg);

    // image [N, 3, H, W], H and W divisible by 32.
    FeaturePyramid operator()(const Tensor& image, const ForwardContext& ctx) const;

    FeatureConfig config;

private:
    std::vector<ConvBn> stem_;
    std::vector<std::vector<ResidualBlock>> stages_;
    std::vector<Conv> heads_;
};

} // namespace stereo
