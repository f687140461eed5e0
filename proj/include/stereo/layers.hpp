#pragma once

#include <string>
#include <vector>

#include "stereo/ops.hpp"
#include "stereo/parameters.hpp"

namespace stereo {

struct ForwardContext {
    Activation activation = Activation::relu;
    bool training = true;
};

// Convolution with its weight/bias registered under `<name>.weight` / `<name>.bias`.
class Conv {
public:
    Conv() = default;
    Conv(ParameterSet& params, const std::string& name, int dims, int64_t in_channels,
         int64_t out_channels, int kernel, ConvOptions options, bool with_bias);

    Tensor operator()(const Tensor& x) const;
    // Transposed only: picks output_padding so the result has `target_spatial` extents.
    Tensor upsample_to(const Tensor& x, const std::vector<int64_t>& target_spatial) const;

    Tensor weight;
    Tensor bias;
    ConvOptions options;
    int dims = 2;
};

class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(ParameterSet& params, const std::string& name, int64_t channels);

    Tensor operator()(const Tensor& x, bool training) const;

    Tensor gamma, beta;
    mutable Tensor running_mean, running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

// conv (no bias) -> batch norm -> optional activation.
class ConvBn {
public:
    ConvBn() = default;
    ConvBn(ParameterSet& params, const std::string& name, int dims, int64_t in_channels,
           int64_t out_channels, int kernel, ConvOptions options);

    Tensor operator()(const Tensor& x, const ForwardContext& ctx, bool activate_output = true) const;
    Tensor upsample_to(const Tensor& x, const std::vector<int64_t>& target_spatial,
                       const ForwardContext& ctx, bool activate_output = true) const;

    Conv conv;
    BatchNorm bn;
};

// Two 3x3 ConvBn layers (2D) with an identity or 1x1-projected shortcut:
// act(bn(conv(act(bn(conv(x))))) + shortcut(x)).
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(ParameterSet& params, const std::string& name, int64_t in_channels, int64_t out_channels,
                  int stride, int dilation = 1);
    Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

    ConvBn first, second;
    ConvBn projection; // only when stride != 1 or channels change
    bool projected = false;
};

// Padding that keeps spatial extents for an odd kernel at stride 1.
inline int same_padding(int kernel, int dilation = 1) { return dilation * (kernel - 1) / 2; }

std::vector<int64_t> spatial_extents(const Tensor& x, int dims);

} // namespace stereo
