#include <cmath>

#include "stereo/ops.hpp"

namespace stereo {

Tensor normalize_batch(const Tensor& input, Tensor& running_mean, Tensor& running_var,
                       const Tensor& gamma, const Tensor& beta, bool training, double momentum,
                       double epsilon) {
    if (epsilon <= 0.0) {
        throw ConfigError("normalize_batch: epsilon must be positive");
    }
    if (input.ndim() < 2) {
        throw ShapeError("normalize_batch: input needs [N, C, ...] layout");
    }
    const int64_t N = input.dim(0);
    const int64_t C = input.dim(1);
    for (const Tensor* t : std::initializer_list<const Tensor*>{&running_mean, &running_var, &gamma, &beta}) {
        if (t->ndim() != 1 || t->dim(0) != C) {
            throw ShapeError("normalize_batch: statistics need extent " + std::to_string(C) +
                             ", got " + shape_str(t->shape()));
        }
    }
    const int64_t S = input.numel() / (N * C);
    const int64_t M = N * S;

    Tensor out = Tensor::empty(input.shape(), input.precision());
    std::vector<double> mean_c(static_cast<size_t>(C)), invstd_c(static_cast<size_t>(C));
    dispatch(input.precision(), [&]<class T>() {
        auto x = input.data<T>();
        auto y = out.mutable_data<T>();
        auto gm = gamma.data<T>();
        auto bt = beta.data<T>();
        auto rm = running_mean.mutable_data<T>();
        auto rv = running_var.mutable_data<T>();
        for (int64_t c = 0; c < C; ++c) {
            auto uc = static_cast<size_t>(c);
            double mu = 0.0;
            double var = 0.0;
            if (training) {
                for (int64_t n = 0; n < N; ++n) {
                    const T* xc = x.data() + (n * C + c) * S;
                    for (int64_t i = 0; i < S; ++i) {
                        mu += xc[i];
                    }
                }
                mu /= static_cast<double>(M);
                for (int64_t n = 0; n < N; ++n) {
                    const T* xc = x.data() + (n * C + c) * S;
                    for (int64_t i = 0; i < S; ++i) {
                        double dv = xc[i] - mu;
                        var += dv * dv;
                    }
                }
                var /= static_cast<double>(M);
                double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
                rm[uc] = static_cast<T>((1.0 - momentum) * rm[uc] + momentum * mu);
                rv[uc] = static_cast<T>((1.0 - momentum) * rv[uc] + momentum * unbiased);
            } else {
                mu = rm[uc];
                var = rv[uc];
            }
            double inv = 1.0 / std::sqrt(var + epsilon);
            mean_c[uc] = mu;
            invstd_c[uc] = inv;
            for (int64_t n = 0; n < N; ++n) {
                const T* xc = x.data() + (n * C + c) * S;
                T* yc = y.data() + (n * C + c) * S;
                for (int64_t i = 0; i < S; ++i) {
                    yc[i] = static_cast<T>(gm[uc] * ((xc[i] - mu) * inv) + bt[uc]);
                }
            }
        }
    });

    return record(out, "normalize_batch", {input, gamma, beta},
                  [xb = input.buffer(), gb = gamma.buffer(), mean_c, invstd_c, N, C, S, M,
                   training](BackwardContext& ctx) {
                      dispatch(xb->precision(), [&]<class T>() {
                          auto x = std::as_const(*xb).span<T>();
                          auto gm = std::as_const(*gb).span<T>();
                          auto gy = ctx.grad_output<T>();
                          auto gx = ctx.grad_input<T>(0);
                          auto ggamma = ctx.grad_input<T>(1);
                          auto gbeta = ctx.grad_input<T>(2);
                          for (int64_t c = 0; c < C; ++c) {
                              auto uc = static_cast<size_t>(c);
                              const double mu = mean_c[uc];
                              const double inv = invstd_c[uc];
                              double sum_dy = 0.0;
                              double sum_dy_xhat = 0.0;
                              for (int64_t n = 0; n < N; ++n) {
                                  const T* xc = x.data() + (n * C + c) * S;
                                  const T* gc = gy.data() + (n * C + c) * S;
                                  for (int64_t i = 0; i < S; ++i) {
                                      sum_dy += gc[i];
                                      sum_dy_xhat += gc[i] * (xc[i] - mu) * inv;
                                  }
                              }
                              if (!ggamma.empty()) {
                                  ggamma[uc] += static_cast<T>(sum_dy_xhat);
                              }
                              if (!gbeta.empty()) {
                                  gbeta[uc] += static_cast<T>(sum_dy);
                              }
                              if (gx.empty()) {
                                  continue;
                              }
                              const double g = gm[uc];
                              for (int64_t n = 0; n < N; ++n) {
                                  const T* xc = x.data() + (n * C + c) * S;
                                  const T* gc = gy.data() + (n * C + c) * S;
                                  T* dc = gx.data() + (n * C + c) * S;
                                  for (int64_t i = 0; i < S; ++i) {
                                      if (training) {
                                          double xhat = (xc[i] - mu) * inv;
                                          dc[i] += static_cast<T>(
                                              g * inv *
                                              (gc[i] - (sum_dy + xhat * sum_dy_xhat) / static_cast<double>(M)));
                                      } else {
                                          dc[i] += static_cast<T>(g * inv * gc[i]);
                                      }
                                  }
                              }
                          }
                      });
                  });
}

Tensor sample_bilinear_x(const Tensor& feature, const Tensor& x_offsets) {
    if (feature.ndim() != 4 || x_offsets.ndim() != 3 || feature.dim(0) != x_offsets.dim(0) ||
        feature.dim(2) != x_offsets.dim(1) || feature.dim(3) != x_offsets.dim(2)) {
        throw ShapeError("sample_bilinear_x: need feature [N,C,H,W] and offsets [N,H,W], got " +
                         shape_str(feature.shape()) + " and " + shape_str(x_offsets.shape()));
    }
    if (feature.precision() != x_offsets.precision()) {
        throw ShapeError("sample_bilinear_x: precision mismatch");
    }
    const int64_t N = feature.dim(0), C = feature.dim(1), H = feature.dim(2), W = feature.dim(3);
    Tensor out = Tensor::empty(feature.shape(), feature.precision());
    dispatch(feature.precision(), [&]<class T>() {
        auto f = feature.data<T>();
        auto off = x_offsets.data<T>();
        auto y = out.mutable_data<T>();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t r = 0; r < H; ++r) {
                const T* orow = off.data() + (n * H + r) * W;
                for (int64_t x = 0; x < W; ++x) {
                    T pos = static_cast<T>(x) - orow[x];
                    T fl = std::floor(pos);
                    auto x0 = static_cast<int64_t>(fl);
                    T w1 = pos - fl;
                    T w0 = T(1) - w1;
                    bool v0 = x0 >= 0 && x0 < W;
                    bool v1 = x0 + 1 >= 0 && x0 + 1 < W;
                    for (int64_t c = 0; c < C; ++c) {
                        const T* frow = f.data() + ((n * C + c) * H + r) * W;
                        T acc = 0;
                        if (v0) acc += w0 * frow[x0];
                        if (v1) acc += w1 * frow[x0 + 1];
                        y[static_cast<size_t>(((n * C + c) * H + r) * W + x)] = acc;
                    }
                }
            }
        }
    });
    return record(out, "sample_bilinear_x", {feature, x_offsets},
                  [fb = feature.buffer(), ob = x_offsets.buffer(), N, C, H, W](BackwardContext& ctx) {
                      dispatch(fb->precision(), [&]<class T>() {
                          auto f = std::as_const(*fb).span<T>();
                          auto off = std::as_const(*ob).span<T>();
                          auto gy = ctx.grad_output<T>();
                          auto gf = ctx.grad_input<T>(0);
                          auto goff = ctx.grad_input<T>(1);
                          for (int64_t n = 0; n < N; ++n) {
                              for (int64_t r = 0; r < H; ++r) {
                                  for (int64_t x = 0; x < W; ++x) {
                                      T pos = static_cast<T>(x) - off[static_cast<size_t>((n * H + r) * W + x)];
                                      T fl = std::floor(pos);
                                      auto x0 = static_cast<int64_t>(fl);
                                      T w1 = pos - fl;
                                      T w0 = T(1) - w1;
                                      bool v0 = x0 >= 0 && x0 < W;
                                      bool v1 = x0 + 1 >= 0 && x0 + 1 < W;
                                      T dpos = 0;
                                      for (int64_t c = 0; c < C; ++c) {
                                          int64_t rowbase = ((n * C + c) * H + r) * W;
                                          T g = gy[static_cast<size_t>(rowbase + x)];
                                          T f0 = v0 ? f[static_cast<size_t>(rowbase + x0)] : T(0);
                                          T f1 = v1 ? f[static_cast<size_t>(rowbase + x0 + 1)] : T(0);
                                          dpos += g * (f1 - f0);
                                          if (!gf.empty()) {
                                              if (v0) gf[static_cast<size_t>(rowbase + x0)] += g * w0;
                                              if (v1) gf[static_cast<size_t>(rowbase + x0 + 1)] += g * w1;
                                          }
                                      }
                                      if (!goff.empty()) {
                                          // pos = x - offset
                                          goff[static_cast<size_t>((n * H + r) * W + x)] -= dpos;
                                      }
                                  }
                              }
                          }
                      });
                  });
}

namespace {

struct AxisTaps {
    std::vector<int64_t> i0, i1;
    std::vector<double> w1;
};

AxisTaps half_pixel_taps(int64_t in, int64_t out) {
    AxisTaps t;
    t.i0.resize(static_cast<size_t>(out));
    t.i1.resize(static_cast<size_t>(out));
    t.w1.resize(static_cast<size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0.0) {
            src = 0.0;
        }
        auto i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(src)), in - 1);
        auto uo = static_cast<size_t>(o);
        t.i0[uo] = i0;
        t.i1[uo] = std::min<int64_t>(i0 + 1, in - 1);
        t.w1[uo] = src - static_cast<double>(i0);
    }
    return t;
}

} // namespace

Tensor resize(const Tensor& input, const std::vector<int64_t>& target_spatial, ResizeMode mode) {
    const int sp = mode == ResizeMode::bilinear ? 2 : 3;
    if (input.ndim() != sp + 2 || static_cast<int>(target_spatial.size()) != sp) {
        throw ShapeError(std::string("resize: ") + (sp == 2 ? "bilinear needs [N,C,H,W]" : "trilinear needs [N,C,D,H,W]") +
                         " and matching target, got " + shape_str(input.shape()));
    }
    for (int64_t e : target_spatial) {
        if (e <= 0) {
            throw ShapeError("resize: target extents must be positive");
        }
    }
    const int64_t NC = input.dim(0) * input.dim(1);
    std::array<int64_t, 3> in{1, 1, 1}, out{1, 1, 1};
    for (int i = 0; i < sp; ++i) {
        in[static_cast<size_t>(3 - sp + i)] = input.dim(2 + i);
        out[static_cast<size_t>(3 - sp + i)] = target_spatial[static_cast<size_t>(i)];
    }
    Shape out_shape{input.dim(0), input.dim(1)};
    out_shape.insert(out_shape.end(), target_spatial.begin(), target_spatial.end());
    std::array<AxisTaps, 3> taps{half_pixel_taps(in[0], out[0]), half_pixel_taps(in[1], out[1]),
                                 half_pixel_taps(in[2], out[2])};

    // Visits every (output voxel, source voxel, weight) triple.
    auto for_each_tap = [taps, in, out](int64_t nc, auto&& fn) {
        const int64_t in_base = nc * in[0] * in[1] * in[2];
        const int64_t out_base = nc * out[0] * out[1] * out[2];
        for (int64_t z = 0; z < out[0]; ++z) {
            auto uz = static_cast<size_t>(z);
            const int64_t zs[2] = {taps[0].i0[uz], taps[0].i1[uz]};
            const double zw[2] = {1.0 - taps[0].w1[uz], taps[0].w1[uz]};
            for (int64_t y = 0; y < out[1]; ++y) {
                auto uy = static_cast<size_t>(y);
                const int64_t ys[2] = {taps[1].i0[uy], taps[1].i1[uy]};
                const double yw[2] = {1.0 - taps[1].w1[uy], taps[1].w1[uy]};
                for (int64_t x = 0; x < out[2]; ++x) {
                    auto ux = static_cast<size_t>(x);
                    const int64_t xs[2] = {taps[2].i0[ux], taps[2].i1[ux]};
                    const double xw[2] = {1.0 - taps[2].w1[ux], taps[2].w1[ux]};
                    const int64_t o = out_base + (z * out[1] + y) * out[2] + x;
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            const double wab = zw[a] * yw[b];
                            if (wab == 0.0) continue;
                            for (int c = 0; c < 2; ++c) {
                                const double wgt = wab * xw[c];
                                if (wgt == 0.0) continue;
                                fn(o, in_base + (zs[a] * in[1] + ys[b]) * in[2] + xs[c], wgt);
                            }
                        }
                    }
                }
            }
        }
    };

    Tensor result = Tensor::zeros(out_shape, input.precision());
    dispatch(input.precision(), [&]<class T>() {
        auto x = input.data<T>();
        auto y = result.mutable_data<T>();
        for (int64_t nc = 0; nc < NC; ++nc) {
            for_each_tap(nc, [&](int64_t o, int64_t i, double w) {
                y[static_cast<size_t>(o)] += static_cast<T>(w) * x[static_cast<size_t>(i)];
            });
        }
    });
    return record(result, sp == 2 ? "resize_bilinear" : "resize_trilinear", {input},
                  [for_each_tap, NC, p = input.precision()](BackwardContext& ctx) {
                      dispatch(p, [&]<class T>() {
                          auto gx = ctx.grad_input<T>(0);
                          if (gx.empty()) return;
                          auto gy = ctx.grad_output<T>();
                          for (int64_t nc = 0; nc < NC; ++nc) {
                              for_each_tap(nc, [&](int64_t o, int64_t i, double w) {
                                  gx[static_cast<size_t>(i)] += static_cast<T>(w) * gy[static_cast<size_t>(o)];
                              });
                          }
                      });
                  });
}

} // namespace stereo
