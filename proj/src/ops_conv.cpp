#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstring>

#include "stereo/ops.hpp"

namespace stereo {

namespace {

// Sliding-window geometry over a [C, D, H, W] "image" whose window positions
// form the [oD, oH, oW] column grid. 2D convolution uses D = kD = 1.
struct Geometry {
    int64_t channels = 0;
    std::array<int64_t, 3> image{};
    std::array<int64_t, 3> grid{};
    std::array<int, 3> kernel{1, 1, 1};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> pad{0, 0, 0};
    std::array<int, 3> dilation{1, 1, 1};

    int64_t kernel_volume() const { return int64_t{kernel[0]} * kernel[1] * kernel[2]; }
    int64_t image_volume() const { return image[0] * image[1] * image[2]; }
    int64_t grid_volume() const { return grid[0] * grid[1] * grid[2]; }
    bool is_pointwise() const {
        return kernel_volume() == 1 && stride == std::array<int, 3>{1, 1, 1} &&
               pad == std::array<int, 3>{0, 0, 0};
    }
};

// cols[(c, kz, ky, kx), (oz, oy, ox)] = image[c, oz*s - p + kz*d, ...] or 0.
template <class T>
void im2col(const T* image, const Geometry& g, T* cols) {
    const int64_t L = g.grid_volume();
    const auto [D, H, W] = g.image;
    const auto [oD, oH, oW] = g.grid;
    int64_t row = 0;
    for (int64_t c = 0; c < g.channels; ++c) {
        const T* src_c = image + c * D * H * W;
        for (int kz = 0; kz < g.kernel[0]; ++kz) {
            for (int ky = 0; ky < g.kernel[1]; ++ky) {
                for (int kx = 0; kx < g.kernel[2]; ++kx, ++row) {
                    T* dst = cols + row * L;
                    for (int64_t oz = 0; oz < oD; ++oz) {
                        int64_t iz = oz * g.stride[0] - g.pad[0] + kz * g.dilation[0];
                        if (iz < 0 || iz >= D) {
                            std::fill_n(dst, oH * oW, T(0));
                            dst += oH * oW;
                            continue;
                        }
                        for (int64_t oy = 0; oy < oH; ++oy, dst += oW) {
                            int64_t iy = oy * g.stride[1] - g.pad[1] + ky * g.dilation[1];
                            if (iy < 0 || iy >= H) {
                                std::fill_n(dst, oW, T(0));
                                continue;
                            }
                            const T* src_row = src_c + (iz * H + iy) * W;
                            int64_t off = kx * g.dilation[2] - g.pad[2];
                            if (g.stride[2] == 1) {
                                // Valid ox range: 0 <= ox + off < W.
                                int64_t lo = std::clamp<int64_t>(-off, 0, oW);
                                int64_t hi = std::clamp<int64_t>(W - off, lo, oW);
                                std::fill_n(dst, lo, T(0));
                                std::copy(src_row + lo + off, src_row + hi + off, dst + lo);
                                std::fill(dst + hi, dst + oW, T(0));
                            } else {
                                for (int64_t ox = 0; ox < oW; ++ox) {
                                    int64_t ix = ox * g.stride[2] + off;
                                    dst[ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <class T>
void col2im(const T* cols, const Geometry& g, T* image) {
    const int64_t L = g.grid_volume();
    const auto [D, H, W] = g.image;
    const auto [oD, oH, oW] = g.grid;
    int64_t row = 0;
    for (int64_t c = 0; c < g.channels; ++c) {
        T* dst_c = image + c * D * H * W;
        for (int kz = 0; kz < g.kernel[0]; ++kz) {
            for (int ky = 0; ky < g.kernel[1]; ++ky) {
                for (int kx = 0; kx < g.kernel[2]; ++kx, ++row) {
                    const T* src = cols + row * L;
                    for (int64_t oz = 0; oz < oD; ++oz) {
                        int64_t iz = oz * g.stride[0] - g.pad[0] + kz * g.dilation[0];
                        if (iz < 0 || iz >= D) {
                            src += oH * oW;
                            continue;
                        }
                        for (int64_t oy = 0; oy < oH; ++oy, src += oW) {
                            int64_t iy = oy * g.stride[1] - g.pad[1] + ky * g.dilation[1];
                            if (iy < 0 || iy >= H) {
                                continue;
                            }
                            T* dst_row = dst_c + (iz * H + iy) * W;
                            int64_t off = kx * g.dilation[2] - g.pad[2];
                            for (int64_t ox = 0; ox < oW; ++ox) {
                                int64_t ix = ox * g.stride[2] + off;
                                if (ix >= 0 && ix < W) {
                                    dst_row[ix] += src[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::vector<int> expand(const std::vector<int>& v, int dims, int fallback, const char* what) {
    if (v.empty()) {
        return std::vector<int>(static_cast<size_t>(dims), fallback);
    }
    if (static_cast<int>(v.size()) == 1) {
        return std::vector<int>(static_cast<size_t>(dims), v[0]);
    }
    if (static_cast<int>(v.size()) != dims) {
        throw ShapeError(std::string("convolution: ") + what + " needs one entry per spatial dim");
    }
    return v;
}

} // namespace

int64_t conv_output_extent(int64_t in, int kernel, int stride, int pad, int dilation,
                           bool transposed, int output_padding) {
    if (transposed) {
        return (in - 1) * stride - 2 * pad + dilation * (kernel - 1) + 1 + output_padding;
    }
    int64_t span = in + 2 * pad - int64_t{dilation} * (kernel - 1) - 1;
    if (span < 0) {
        return 0;
    }
    return span / stride + 1;
}

Tensor convolution(const Tensor& input, const Tensor& weight, const Tensor& bias, int dims,
                   const ConvOptions& options) {
    if (dims != 2 && dims != 3) {
        throw ShapeError("convolution: dims must be 2 or 3");
    }
    if (input.ndim() != dims + 2 || weight.ndim() != dims + 2) {
        throw ShapeError("convolution: expected rank " + std::to_string(dims + 2) + " input " +
                         shape_str(input.shape()) + " and weight " + shape_str(weight.shape()));
    }
    if (input.precision() != weight.precision()) {
        throw ShapeError("convolution: precision mismatch");
    }
    const bool transposed = options.transposed;
    auto stride = expand(options.stride, dims, 1, "stride");
    auto pad = expand(options.padding, dims, 0, "padding");
    auto dil = expand(options.dilation, dims, 1, "dilation");
    auto opad = expand(options.output_padding, dims, 0, "output_padding");

    const int64_t N = input.dim(0);
    const int64_t c_in = input.dim(1);
    const int64_t c_out = transposed ? weight.dim(1) : weight.dim(0);
    const int64_t w_in = transposed ? weight.dim(0) : weight.dim(1);
    if (w_in != c_in) {
        throw ShapeError("convolution: input has " + std::to_string(c_in) +
                         " channels but weight expects " + std::to_string(w_in));
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != c_out)) {
        throw ShapeError("convolution: bias must have shape [" + std::to_string(c_out) + "]");
    }

    // Pad 2D problems to 3D with a unit depth axis.
    const int lead = 3 - dims;
    std::array<int64_t, 3> in_sp{1, 1, 1};
    std::array<int, 3> k{1, 1, 1}, s{1, 1, 1}, p{0, 0, 0}, d{1, 1, 1}, op{0, 0, 0};
    for (int i = 0; i < dims; ++i) {
        auto ui = static_cast<size_t>(i);
        in_sp[static_cast<size_t>(lead + i)] = input.dim(2 + i);
        k[static_cast<size_t>(lead + i)] = static_cast<int>(weight.dim(2 + i));
        s[static_cast<size_t>(lead + i)] = stride[ui];
        p[static_cast<size_t>(lead + i)] = pad[ui];
        d[static_cast<size_t>(lead + i)] = dil[ui];
        op[static_cast<size_t>(lead + i)] = opad[ui];
        if (stride[ui] < 1 || dil[ui] < 1 || pad[ui] < 0) {
            throw ShapeError("convolution: stride and dilation must be >= 1, padding >= 0");
        }
        if (opad[ui] < 0 || (opad[ui] > 0 && !transposed) ||
            (transposed && opad[ui] >= std::max(stride[ui], dil[ui]))) {
            throw ShapeError("convolution: invalid output_padding");
        }
    }
    std::array<int64_t, 3> out_sp{};
    Shape out_shape{N, c_out};
    for (int i = 0; i < 3; ++i) {
        auto ui = static_cast<size_t>(i);
        out_sp[ui] = conv_output_extent(in_sp[ui], k[ui], s[ui], p[ui], d[ui], transposed, op[ui]);
        if (out_sp[ui] <= 0) {
            throw ShapeError("convolution: non-positive output extent for input " +
                             shape_str(input.shape()) + " and weight " + shape_str(weight.shape()));
        }
        if (i >= lead) {
            out_shape.push_back(out_sp[ui]);
        }
    }

    // The geometry always describes the "large" side as the image.
    Geometry g;
    g.kernel = k;
    g.stride = s;
    g.pad = p;
    g.dilation = d;
    if (transposed) {
        g.channels = c_out;
        g.image = out_sp;
        g.grid = in_sp;
    } else {
        g.channels = c_in;
        g.image = in_sp;
        g.grid = out_sp;
    }

    Tensor out = Tensor::empty(out_shape, input.precision());
    dispatch(input.precision(), [&]<class T>() {
        const int64_t K = g.kernel_volume();
        const int64_t rows = g.channels * K;
        const int64_t L = g.grid_volume();
        const int64_t img = g.image_volume();
        auto x = input.data<T>();
        auto w = weight.data<T>();
        auto y = out.mutable_data<T>();
        std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<size_t>(rows * L));
        const int64_t x_stride = c_in * (transposed ? L : img);
        const int64_t y_stride = c_out * (transposed ? img : L);
        for (int64_t n = 0; n < N; ++n) {
            const T* xn = x.data() + n * x_stride;
            T* yn = y.data() + n * y_stride;
            if (!transposed) {
                ConstMatMap<T> W(w.data(), c_out, rows);
                const T* cp = xn;
                if (!g.is_pointwise()) {
                    im2col(xn, g, cols.data());
                    cp = cols.data();
                }
                MatMap<T>(yn, c_out, L).noalias() = W * ConstMatMap<T>(cp, rows, L);
            } else {
                ConstMatMap<T> W(w.data(), c_in, rows);
                if (g.is_pointwise()) {
                    MatMap<T>(yn, c_out, img).noalias() =
                        W.transpose() * ConstMatMap<T>(xn, c_in, L);
                } else {
                    MatMap<T>(cols.data(), rows, L).noalias() =
                        W.transpose() * ConstMatMap<T>(xn, c_in, L);
                    std::fill_n(yn, c_out * img, T(0));
                    col2im(cols.data(), g, yn);
                }
            }
            if (bias.defined()) {
                auto b = bias.data<T>();
                const int64_t plane = transposed ? img : L;
                for (int64_t c = 0; c < c_out; ++c) {
                    T* yc = yn + c * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        yc[i] += b[static_cast<size_t>(c)];
                    }
                }
            }
        }
    });

    return record(
        out, transposed ? "conv_transposed" : "convolution", {input, weight, bias},
        [xb = input.buffer(), wb = weight.buffer(), g, N, c_in, c_out,
         transposed](BackwardContext& ctx) {
            dispatch(xb->precision(), [&]<class T>() {
                const int64_t K = g.kernel_volume();
                const int64_t rows = g.channels * K;
                const int64_t L = g.grid_volume();
                const int64_t img = g.image_volume();
                auto x = std::as_const(*xb).span<T>();
                auto w = std::as_const(*wb).span<T>();
                auto gy = ctx.grad_output<T>();
                auto gx = ctx.grad_input<T>(0);
                auto gw = ctx.grad_input<T>(1);
                auto gb = ctx.grad_input<T>(2);
                const int64_t x_stride = c_in * (transposed ? L : img);
                const int64_t y_stride = c_out * (transposed ? img : L);
                const int64_t plane = transposed ? img : L;
                std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<size_t>(rows * L));
                for (int64_t n = 0; n < N; ++n) {
                    const T* xn = x.data() + n * x_stride;
                    const T* gyn = gy.data() + n * y_stride;
                    if (!gb.empty()) {
                        for (int64_t c = 0; c < c_out; ++c) {
                            T acc = 0;
                            const T* gc = gyn + c * plane;
                            for (int64_t i = 0; i < plane; ++i) {
                                acc += gc[i];
                            }
                            gb[static_cast<size_t>(c)] += acc;
                        }
                    }
                    if (!transposed) {
                        const T* cp = xn;
                        if (!gw.empty() && !g.is_pointwise()) {
                            im2col(xn, g, cols.data());
                            cp = cols.data();
                        }
                        ConstMatMap<T> GY(gyn, c_out, L);
                        if (!gw.empty()) {
                            MatMap<T>(gw.data(), c_out, rows).noalias() +=
                                GY * ConstMatMap<T>(cp, rows, L).transpose();
                        }
                        if (!gx.empty()) {
                            ConstMatMap<T> W(w.data(), c_out, rows);
                            T* gxn = gx.data() + n * x_stride;
                            if (g.is_pointwise()) {
                                MatMap<T>(gxn, c_in, L).noalias() += W.transpose() * GY;
                            } else {
                                MatMap<T>(cols.data(), rows, L).noalias() = W.transpose() * GY;
                                col2im(cols.data(), g, gxn);
                            }
                        }
                    } else {
                        const T* cp = gyn;
                        if (!g.is_pointwise()) {
                            im2col(gyn, g, cols.data());
                            cp = cols.data();
                        }
                        ConstMatMap<T> GC(cp, rows, L);
                        if (!gw.empty()) {
                            MatMap<T>(gw.data(), c_in, rows).noalias() +=
                                ConstMatMap<T>(xn, c_in, L) * GC.transpose();
                        }
                        if (!gx.empty()) {
                            ConstMatMap<T> W(w.data(), c_in, rows);
                            MatMap<T>(gx.data() + n * x_stride, c_in, L).noalias() += W * GC;
                        }
                    }
                }
            });
        });
}

} // namespace stereo
