#include "stereo/layers.hpp"

namespace stereo {

std::vector<int64_t> spatial_extents(const Tensor& x, int dims) {
    std::vector<int64_t> out;
    for (int i = x.ndim() - dims; i < x.ndim(); ++i) {
        out.push_back(x.dim(i));
    }
    return out;
}

Conv::Conv(ParameterSet& params, const std::string& name, int dims_, int64_t in_channels,
           int64_t out_channels, int kernel, ConvOptions opts, bool with_bias)
    : options(std::move(opts)), dims(dims_) {
    Shape shape = options.transposed ? Shape{in_channels, out_channels} : Shape{out_channels, in_channels};
    int64_t k_volume = 1;
    for (int i = 0; i < dims; ++i) {
        shape.push_back(kernel);
        k_volume *= kernel;
    }
    weight = params.add_parameter(name + ".weight", shape, Init::fan_in_uniform, in_channels * k_volume);
    if (with_bias) {
        bias = params.add_parameter(name + ".bias", {out_channels}, Init::zeros);
    }
}

Tensor Conv::operator()(const Tensor& x) const {
    return convolution(x, weight, bias, dims, options);
}

Tensor Conv::upsample_to(const Tensor& x, const std::vector<int64_t>& target) const {
    if (!options.transposed) {
        throw ConfigError("upsample_to needs a transposed convolution");
    }
    ConvOptions o = options;
    o.output_padding.assign(static_cast<size_t>(dims), 0);
    for (int i = 0; i < dims; ++i) {
        auto ui = static_cast<size_t>(i);
        int s = o.stride.empty() ? 1 : o.stride[o.stride.size() == 1 ? 0 : ui];
        int p = o.padding.empty() ? 0 : o.padding[o.padding.size() == 1 ? 0 : ui];
        int d = o.dilation.empty() ? 1 : o.dilation[o.dilation.size() == 1 ? 0 : ui];
        int64_t base = conv_output_extent(x.dim(2 + i), static_cast<int>(weight.dim(2 + i)), s, p, d, true, 0);
        o.output_padding[ui] = static_cast<int>(target[ui] - base);
    }
    return convolution(x, weight, bias, dims, o);
}

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name, int64_t channels) {
    gamma = params.add_parameter(name + ".gamma", {channels}, Init::ones);
    beta = params.add_parameter(name + ".beta", {channels}, Init::zeros);
    running_mean = params.add_buffer(name + ".running_mean", {channels}, 0.0);
    running_var = params.add_buffer(name + ".running_var", {channels}, 1.0);
}

Tensor BatchNorm::operator()(const Tensor& x, bool training) const {
    return normalize_batch(x, running_mean, running_var, gamma, beta, training, momentum, epsilon);
}

ConvBn::ConvBn(ParameterSet& params, const std::string& name, int dims, int64_t in_channels,
               int64_t out_channels, int kernel, ConvOptions options)
    : conv(params, name + ".conv", dims, in_channels, out_channels, kernel, std::move(options), false),
      bn(params, name + ".bn", out_channels) {}

Tensor ConvBn::operator()(const Tensor& x, const ForwardContext& ctx, bool activate_output) const {
    Tensor y = bn(conv(x), ctx.training);
    return activate_output ? activate(y, ctx.activation) : y;
}

Tensor ConvBn::upsample_to(const Tensor& x, const std::vector<int64_t>& target,
                           const ForwardContext& ctx, bool activate_output) const {
    Tensor y = bn(conv.upsample_to(x, target), ctx.training);
    return activate_output ? activate(y, ctx.activation) : y;
}

ResidualBlock::ResidualBlock(ParameterSet& params, const std::string& name, int64_t in_channels,
                             int64_t out_channels, int stride, int dilation)
    : first(params, name + ".conv1", 2, in_channels, out_channels, 3,
            {.stride = {stride}, .padding = {same_padding(3, dilation)}, .dilation = {dilation}}),
      second(params, name + ".conv2", 2, out_channels, out_channels, 3,
             {.padding = {same_padding(3, dilation)}, .dilation = {dilation}}),
      projected(stride != 1 || in_channels != out_channels) {
    if (projected) {
        projection = ConvBn(params, name + ".shortcut", 2, in_channels, out_channels, 1, {.stride = {stride}});
    }
}

Tensor ResidualBlock::operator()(const Tensor& x, const ForwardContext& ctx) const {
    Tensor y = second(first(x, ctx), ctx, false);
    Tensor shortcut = projected ? projection(x, ctx, false) : x;
    return activate(add(y, shortcut), ctx.activation);
}

} // namespace stereo
