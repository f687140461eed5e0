#include <algorithm>
#include <cmath>
#include <numeric>

#include "stereo/ops.hpp"

namespace stereo {

const char* to_string(Activation kind) {
    return kind == Activation::relu ? "relu" : "mish";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") {
        return Activation::relu;
    }
    if (name == "mish") {
        return Activation::mish;
    }
    throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    if (a.precision() != b.precision()) {
        throw ShapeError(std::string(op) + ": precision mismatch");
    }
}

// y = f(x) elementwise; df(x, y) gives dy/dx.
template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* name, F f, DF df) {
    Tensor out = Tensor::empty(x.shape(), x.precision());
    dispatch(x.precision(), [&]<class T>() {
        auto xs = x.data<T>();
        auto ys = out.mutable_data<T>();
        for (size_t i = 0; i < xs.size(); ++i) {
            ys[i] = f(xs[i]);
        }
    });
    return record(out, name, {x},
                  [xb = x.buffer(), yb = out.buffer(), df](BackwardContext& ctx) {
                      dispatch(xb->precision(), [&]<class T>() {
                          auto gx = ctx.grad_input<T>(0);
                          if (gx.empty()) {
                              return;
                          }
                          auto gy = ctx.grad_output<T>();
                          auto xs = std::as_const(*xb).span<T>();
                          auto ys = std::as_const(*yb).span<T>();
                          for (size_t i = 0; i < gx.size(); ++i) {
                              gx[i] += gy[i] * df(xs[i], ys[i]);
                          }
                      });
                  });
}

// Strides for viewing a shape as [outer, extent(axis), inner].
struct AxisView {
    int64_t outer = 1;
    int64_t extent = 1;
    int64_t inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
    int n = static_cast<int>(shape.size());
    if (axis < 0) {
        axis += n;
    }
    if (axis < 0 || axis >= n) {
        throw ShapeError("axis out of range for shape " + shape_str(shape));
    }
    AxisView v;
    for (int i = 0; i < axis; ++i) {
        v.outer *= shape[static_cast<size_t>(i)];
    }
    v.extent = shape[static_cast<size_t>(axis)];
    for (int i = axis + 1; i < n; ++i) {
        v.inner *= shape[static_cast<size_t>(i)];
    }
    return v;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::empty(a.shape(), a.precision());
    dispatch(a.precision(), [&]<class T>() {
        auto as = a.data<T>();
        auto bs = b.data<T>();
        auto ys = out.mutable_data<T>();
        for (size_t i = 0; i < ys.size(); ++i) {
            ys[i] = as[i] + bs[i];
        }
    });
    return record(out, "add", {a, b}, [p = a.precision()](BackwardContext& ctx) {
        dispatch(p, [&]<class T>() {
            auto gy = ctx.grad_output<T>();
            for (size_t k = 0; k < 2; ++k) {
                auto g = ctx.grad_input<T>(k);
                for (size_t i = 0; i < g.size(); ++i) {
                    g[i] += gy[i];
                }
            }
        });
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::empty(a.shape(), a.precision());
    dispatch(a.precision(), [&]<class T>() {
        auto as = a.data<T>();
        auto bs = b.data<T>();
        auto ys = out.mutable_data<T>();
        for (size_t i = 0; i < ys.size(); ++i) {
            ys[i] = as[i] - bs[i];
        }
    });
    return record(out, "sub", {a, b}, [p = a.precision()](BackwardContext& ctx) {
        dispatch(p, [&]<class T>() {
            auto gy = ctx.grad_output<T>();
            auto ga = ctx.grad_input<T>(0);
            for (size_t i = 0; i < ga.size(); ++i) {
                ga[i] += gy[i];
            }
            auto gb = ctx.grad_input<T>(1);
            for (size_t i = 0; i < gb.size(); ++i) {
                gb[i] -= gy[i];
            }
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::empty(a.shape(), a.precision());
    dispatch(a.precision(), [&]<class T>() {
        auto as = a.data<T>();
        auto bs = b.data<T>();
        auto ys = out.mutable_data<T>();
        for (size_t i = 0; i < ys.size(); ++i) {
            ys[i] = as[i] * bs[i];
        }
    });
    return record(out, "mul", {a, b},
                  [ab = a.buffer(), bb = b.buffer()](BackwardContext& ctx) {
                      dispatch(ab->precision(), [&]<class T>() {
                          auto gy = ctx.grad_output<T>();
                          auto as = std::as_const(*ab).span<T>();
                          auto bs = std::as_const(*bb).span<T>();
                          auto ga = ctx.grad_input<T>(0);
                          for (size_t i = 0; i < ga.size(); ++i) {
                              ga[i] += gy[i] * bs[i];
                          }
                          auto gb = ctx.grad_input<T>(1);
                          for (size_t i = 0; i < gb.size(); ++i) {
                              gb[i] += gy[i] * as[i];
                          }
                      });
                  });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_op(
        x, "scale", [factor]<class T>(T v) { return static_cast<T>(v * factor); },
        [factor]<class T>(T, T) { return static_cast<T>(factor); });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary_op(
        x, "add_scalar", [value]<class T>(T v) { return static_cast<T>(v + value); },
        []<class T>(T, T) { return T(1); });
}

Tensor neg(const Tensor& x) {
    return unary_op(
        x, "neg", []<class T>(T v) { return -v; }, []<class T>(T, T) { return T(-1); });
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::empty({1}, x.precision());
    dispatch(x.precision(), [&]<class T>() {
        auto xs = x.data<T>();
        // Accumulate in double so float sums do not drift with size.
        double acc = 0.0;
        for (T v : xs) {
            acc += static_cast<double>(v);
        }
        out.mutable_data<T>()[0] = static_cast<T>(acc);
    });
    return record(out, "sum", {x}, [p = x.precision()](BackwardContext& ctx) {
        dispatch(p, [&]<class T>() {
            T g = ctx.grad_output<T>()[0];
            auto gx = ctx.grad_input<T>(0);
            for (auto& v : gx) {
                v += g;
            }
        });
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = x.buffer();
    Tensor out(std::move(impl));
    return record(out, "reshape", {x}, [p = x.precision()](BackwardContext& ctx) {
        dispatch(p, [&]<class T>() {
            auto gy = ctx.grad_output<T>();
            auto gx = ctx.grad_input<T>(0);
            for (size_t i = 0; i < gx.size(); ++i) {
                gx[i] += gy[i];
            }
        });
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& ref = parts.front().shape();
    int n = static_cast<int>(ref.size());
    int ax = axis < 0 ? axis + n : axis;
    if (ax < 0 || ax >= n) {
        throw ShapeError("concat: axis out of range");
    }
    Shape out_shape = ref;
    out_shape[static_cast<size_t>(ax)] = 0;
    for (const Tensor& t : parts) {
        if (t.ndim() != n || t.precision() != parts.front().precision()) {
            throw ShapeError("concat: rank or precision mismatch");
        }
        for (int i = 0; i < n; ++i) {
            if (i != ax && t.shape()[static_cast<size_t>(i)] != ref[static_cast<size_t>(i)]) {
                throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                                 shape_str(ref));
            }
        }
        out_shape[static_cast<size_t>(ax)] += t.dim(ax);
    }
    AxisView ov = axis_view(out_shape, ax);
    Tensor out = Tensor::empty(out_shape, parts.front().precision());
    std::vector<int64_t> extents;
    for (const Tensor& t : parts) {
        extents.push_back(t.dim(ax));
    }
    dispatch(out.precision(), [&]<class T>() {
        auto ys = out.mutable_data<T>();
        int64_t start = 0;
        for (size_t k = 0; k < parts.size(); ++k) {
            auto xs = parts[k].data<T>();
            int64_t block = extents[k] * ov.inner;
            for (int64_t o = 0; o < ov.outer; ++o) {
                std::copy_n(xs.begin() + o * block, block,
                            ys.begin() + (o * ov.extent + start) * ov.inner);
            }
            start += extents[k];
        }
    });
    return record(out, "concat", parts,
                  [extents, ov, p = out.precision()](BackwardContext& ctx) {
                      dispatch(p, [&]<class T>() {
                          auto gy = ctx.grad_output<T>();
                          int64_t start = 0;
                          for (size_t k = 0; k < extents.size(); ++k) {
                              auto gx = ctx.grad_input<T>(k);
                              int64_t block = extents[k] * ov.inner;
                              if (!gx.empty()) {
                                  for (int64_t o = 0; o < ov.outer; ++o) {
                                      const T* src = gy.data() + (o * ov.extent + start) * ov.inner;
                                      T* dst = gx.data() + o * block;
                                      for (int64_t i = 0; i < block; ++i) {
                                          dst[i] += src[i];
                                      }
                                  }
                              }
                              start += extents[k];
                          }
                      });
                  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) {
        throw ConfigError("clamp: lo > hi");
    }
    return unary_op(
        x, "clamp",
        [lo, hi]<class T>(T v) { return std::clamp(v, static_cast<T>(lo), static_cast<T>(hi)); },
        [lo, hi]<class T>(T v, T) {
            return (v >= static_cast<T>(lo) && v <= static_cast<T>(hi)) ? T(1) : T(0);
        });
}

Tensor smooth_l1(const Tensor& x) {
    return unary_op(
        x, "smooth_l1",
        []<class T>(T v) {
            T a = std::abs(v);
            return a < T(1) ? T(0.5) * v * v : a - T(0.5);
        },
        []<class T>(T v, T) { return std::clamp(v, T(-1), T(1)); });
}

namespace {

template <class T>
T softplus(T x) {
    return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

} // namespace

Tensor activate(const Tensor& x, Activation kind) {
    if (kind == Activation::relu) {
        return unary_op(
            x, "relu", []<class T>(T v) { return v > T(0) ? v : T(0); },
            []<class T>(T v, T) { return v > T(0) ? T(1) : T(0); });
    }
    return unary_op(
        x, "mish", []<class T>(T v) { return v * std::tanh(softplus(v)); },
        []<class T>(T v, T) {
            T t = std::tanh(softplus(v));
            return t + v * (T(1) - t * t) * sigmoid(v);
        });
}

Tensor softmax_along(const Tensor& x, int axis) {
    AxisView v = axis_view(x.shape(), axis);
    Tensor out = Tensor::empty(x.shape(), x.precision());
    dispatch(x.precision(), [&]<class T>() {
        auto xs = x.data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t i = 0; i < v.inner; ++i) {
                int64_t base = o * v.extent * v.inner + i;
                T mx = xs[static_cast<size_t>(base)];
                for (int64_t k = 1; k < v.extent; ++k) {
                    mx = std::max(mx, xs[static_cast<size_t>(base + k * v.inner)]);
                }
                T total = 0;
                for (int64_t k = 0; k < v.extent; ++k) {
                    auto idx = static_cast<size_t>(base + k * v.inner);
                    ys[idx] = std::exp(xs[idx] - mx);
                    total += ys[idx];
                }
                for (int64_t k = 0; k < v.extent; ++k) {
                    ys[static_cast<size_t>(base + k * v.inner)] /= total;
                }
            }
        }
    });
    return record(out, "softmax", {x}, [yb = out.buffer(), v](BackwardContext& ctx) {
        dispatch(yb->precision(), [&]<class T>() {
            auto gx = ctx.grad_input<T>(0);
            if (gx.empty()) {
                return;
            }
            auto gy = ctx.grad_output<T>();
            auto ys = std::as_const(*yb).span<T>();
            for (int64_t o = 0; o < v.outer; ++o) {
                for (int64_t i = 0; i < v.inner; ++i) {
                    int64_t base = o * v.extent * v.inner + i;
                    T dot = 0;
                    for (int64_t k = 0; k < v.extent; ++k) {
                        auto idx = static_cast<size_t>(base + k * v.inner);
                        dot += gy[idx] * ys[idx];
                    }
                    for (int64_t k = 0; k < v.extent; ++k) {
                        auto idx = static_cast<size_t>(base + k * v.inner);
                        gx[idx] += ys[idx] * (gy[idx] - dot);
                    }
                }
            }
        });
    });
}

Tensor index_expectation(const Tensor& p, int axis) {
    AxisView v = axis_view(p.shape(), axis);
    Shape out_shape = p.shape();
    int ax = axis < 0 ? axis + p.ndim() : axis;
    out_shape.erase(out_shape.begin() + ax);
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    Tensor out = Tensor::empty(out_shape, p.precision());
    dispatch(p.precision(), [&]<class T>() {
        auto ps = p.data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t i = 0; i < v.inner; ++i) {
                T acc = 0;
                for (int64_t k = 0; k < v.extent; ++k) {
                    acc += static_cast<T>(k) * ps[static_cast<size_t>((o * v.extent + k) * v.inner + i)];
                }
                ys[static_cast<size_t>(o * v.inner + i)] = acc;
            }
        }
    });
    return record(out, "index_expectation", {p}, [v, prec = p.precision()](BackwardContext& ctx) {
        dispatch(prec, [&]<class T>() {
            auto gp = ctx.grad_input<T>(0);
            if (gp.empty()) {
                return;
            }
            auto gy = ctx.grad_output<T>();
            for (int64_t o = 0; o < v.outer; ++o) {
                for (int64_t k = 0; k < v.extent; ++k) {
                    for (int64_t i = 0; i < v.inner; ++i) {
                        gp[static_cast<size_t>((o * v.extent + k) * v.inner + i)] +=
                            static_cast<T>(k) * gy[static_cast<size_t>(o * v.inner + i)];
                    }
                }
            }
        });
    });
}

Tensor soft_argmin(const Tensor& cost, int axis) {
    return index_expectation(softmax_along(neg(cost), axis), axis);
}

} // namespace stereo
