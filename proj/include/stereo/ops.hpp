#pragma once

#include <array>
#include <vector>

#include "stereo/autograd.hpp"
#include "stereo/tensor.hpp"

namespace stereo {

enum class Activation { relu, mish };

const char* to_string(Activation kind);
Activation parse_activation(const std::string& name);

// ---- elementwise / structural -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Shares storage with `x`.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
Tensor smooth_l1(const Tensor& x);

// relu: max(x, 0). mish: x * tanh(softplus(x)), softplus linear above 20.
Tensor activate(const Tensor& x, Activation kind);

// Max-subtracted softmax along `axis`.
Tensor softmax_along(const Tensor& x, int axis);

// sum_k k * p[..., k, ...] along `axis`.
Tensor index_expectation(const Tensor& p, int axis);

// Expected index under softmax(-cost) along `axis`.
Tensor soft_argmin(const Tensor& cost, int axis);

// ---- convolution ---------------------------------------------------------------

struct ConvOptions {
    // One entry per spatial dim (2 or 3). Empty means stride 1 / pad 0 / dilation 1.
    std::vector<int> stride;
    std::vector<int> padding;
    std::vector<int> dilation;
    std::vector<int> output_padding; // transposed only
    bool transposed = false;
};

// Output extent of one spatial axis.
int64_t conv_output_extent(int64_t in, int kernel, int stride, int pad, int dilation,
                           bool transposed, int output_padding = 0);

// input  [N, C_in, (D,) H, W]
// weight [C_out, C_in, (kD,) kH, kW]   or, transposed, [C_in, C_out, (kD,) kH, kW]
// bias   [C_out] or undefined
Tensor convolution(const Tensor& input, const Tensor& weight, const Tensor& bias, int dims,
                   const ConvOptions& options);

// ---- normalization -------------------------------------------------------------

// Per-channel normalization over [N, C, ...]. In training mode the batch
// statistics are used and running_mean/running_var are updated in place
// (unbiased variance, running = (1 - momentum) * running + momentum * batch).
Tensor normalize_batch(const Tensor& input, Tensor& running_mean, Tensor& running_var,
                       const Tensor& gamma, const Tensor& beta, bool training, double momentum,
                       double epsilon);

// ---- sampling ------------------------------------------------------------------

// feature [N, C, H, W], x_offsets [N, H, W]; out(x) = feature(x - offset) with
// linear interpolation along x and zeros outside [0, W-1].
Tensor sample_bilinear_x(const Tensor& feature, const Tensor& x_offsets);

enum class ResizeMode { bilinear, trilinear };

// Half-pixel (align-corners false) interpolation of the trailing 2 or 3 axes
// of [N, C, H, W] / [N, C, D, H, W].
Tensor resize(const Tensor& input, const std::vector<int64_t>& target_spatial, ResizeMode mode);

} // namespace stereo
