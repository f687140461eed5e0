#include "stereo/cost_volume.hpp"

#include "stereo/errors.hpp"

namespace stereo {

namespace {

void check_pair(const Tensor& left, const Tensor& right, const char* op) {
    if (left.ndim() != 4 || left.shape() != right.shape()) {
        throw ShapeError(std::string(op) + ": need matching [N, C, H, W] features, got " + shape_str(left.shape()) +
                         " and " + shape_str(right.shape()));
    }
    if (left.precision() != right.precision()) {
        throw ShapeError(std::string(op) + ": precision mismatch");
    }
}

} // namespace

Tensor correlation_volume(const Tensor& left, const Tensor& right, const std::vector<int>& offsets, int groups) {
    check_pair(left, right, "correlation_volume");
    if (offsets.empty()) {
        throw ConfigError("correlation_volume: empty offset list");
    }
    const int64_t N = left.dim(0), C = left.dim(1), H = left.dim(2), W = left.dim(3);
    if (groups <= 0 || C % groups != 0) {
        throw ConfigError("correlation_volume: " + std::to_string(C) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    }
    const int64_t G = groups, K = static_cast<int64_t>(offsets.size()), cg = C / G;
    const double norm = 1.0 / static_cast<double>(cg);
    Tensor out = Tensor::zeros({N, G, K, H, W}, left.precision());
    dispatch(left.precision(), [&]<class T>() {
        auto l = left.data<T>();
        auto r = right.data<T>();
        auto v = out.mutable_data<T>();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t g = 0; g < G; ++g) {
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t off = offsets[static_cast<size_t>(k)];
                    const int64_t x0 = std::max<int64_t>(0, off), x1 = std::min<int64_t>(W, W + off);
                    T* vk = v.data() + (((n * G + g) * K + k) * H) * W;
                    for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
                        const T* lc = l.data() + ((n * C + c) * H) * W;
                        const T* rc = r.data() + ((n * C + c) * H) * W;
                        for (int64_t y = 0; y < H; ++y) {
                            for (int64_t x = x0; x < x1; ++x) {
                                vk[y * W + x] += lc[y * W + x] * rc[y * W + x - off];
                            }
                        }
                    }
                    for (int64_t i = 0; i < H * W; ++i) {
                        vk[i] *= static_cast<T>(norm);
                    }
                }
            }
        }
    });
    return record(out, "correlation_volume", {left, right},
                  [lb = left.buffer(), rb = right.buffer(), offsets, N, C, H, W, G, K, cg, norm](BackwardContext& ctx) {
                      dispatch(lb->precision(), [&]<class T>() {
                          auto l = std::as_const(*lb).span<T>();
                          auto r = std::as_const(*rb).span<T>();
                          auto gv = ctx.grad_output<T>();
                          auto gl = ctx.grad_input<T>(0);
                          auto gr = ctx.grad_input<T>(1);
                          for (int64_t n = 0; n < N; ++n) {
                              for (int64_t g = 0; g < G; ++g) {
                                  for (int64_t k = 0; k < K; ++k) {
                                      const int64_t off = offsets[static_cast<size_t>(k)];
                                      const int64_t x0 = std::max<int64_t>(0, off);
                                      const int64_t x1 = std::min<int64_t>(W, W + off);
                                      const T* gk = gv.data() + (((n * G + g) * K + k) * H) * W;
                                      for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
                                          const int64_t base = ((n * C + c) * H) * W;
                                          for (int64_t y = 0; y < H; ++y) {
                                              for (int64_t x = x0; x < x1; ++x) {
                                                  T go = gk[y * W + x] * static_cast<T>(norm);
                                                  auto li = static_cast<size_t>(base + y * W + x);
                                                  auto ri = static_cast<size_t>(base + y * W + x - off);
                                                  if (!gl.empty()) gl[li] += go * r[ri];
                                                  if (!gr.empty()) gr[ri] += go * l[li];
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      });
                  });
}

Tensor build_concat_volume(const Tensor& left, const Tensor& right, int max_disparity) {
    check_pair(left, right, "build_concat_volume");
    if (max_disparity <= 0) {
        throw ConfigError("build_concat_volume: disparity count must be positive");
    }
    const int64_t N = left.dim(0), C = left.dim(1), H = left.dim(2), W = left.dim(3), D = max_disparity;
    Tensor out = Tensor::zeros({N, 2 * C, D, H, W}, left.precision());
    dispatch(left.precision(), [&]<class T>() {
        auto l = left.data<T>();
        auto r = right.data<T>();
        auto v = out.mutable_data<T>();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const T* lc = l.data() + ((n * C + c) * H) * W;
                const T* rc = r.data() + ((n * C + c) * H) * W;
                for (int64_t d = 0; d < D; ++d) {
                    T* vl = v.data() + (((n * 2 * C + c) * D + d) * H) * W;
                    T* vr = v.data() + (((n * 2 * C + C + c) * D + d) * H) * W;
                    std::copy(lc, lc + H * W, vl);
                    for (int64_t y = 0; y < H; ++y) {
                        for (int64_t x = d; x < W; ++x) {
                            vr[y * W + x] = rc[y * W + x - d];
                        }
                    }
                }
            }
        }
    });
    return record(out, "concat_volume", {left, right}, [N, C, H, W, D, prec = left.precision()](BackwardContext& ctx) {
        dispatch(prec, [&]<class T>() {
            auto gv = ctx.grad_output<T>();
            auto gl = ctx.grad_input<T>(0);
            auto gr = ctx.grad_input<T>(1);
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t c = 0; c < C; ++c) {
                    const int64_t base = ((n * C + c) * H) * W;
                    for (int64_t d = 0; d < D; ++d) {
                        const T* vl = gv.data() + (((n * 2 * C + c) * D + d) * H) * W;
                        const T* vr = gv.data() + (((n * 2 * C + C + c) * D + d) * H) * W;
                        for (int64_t y = 0; y < H; ++y) {
                            for (int64_t x = 0; x < W; ++x) {
                                if (!gl.empty()) gl[static_cast<size_t>(base + y * W + x)] += vl[y * W + x];
                                if (!gr.empty() && x >= d) gr[static_cast<size_t>(base + y * W + x - d)] += vr[y * W + x];
                            }
                        }
                    }
                }
            }
        });
    });
}

Tensor build_gwc_volume(const Tensor& left, const Tensor& right, int max_disparity, int groups) {
    if (max_disparity <= 0) {
        throw ConfigError("build_gwc_volume: disparity count must be positive");
    }
    std::vector<int> offsets(static_cast<size_t>(max_disparity));
    for (int d = 0; d < max_disparity; ++d) {
        offsets[static_cast<size_t>(d)] = d;
    }
    return correlation_volume(left, right, offsets, groups);
}

std::vector<int> level_disparities(int max_disparity) {
    if (max_disparity < 4 || max_disparity % 4 != 0) {
        throw ConfigError("max_disparity " + std::to_string(max_disparity) + " must be a positive multiple of 4");
    }
    std::vector<int> d{max_disparity / 4};
    for (int i = 1; i < 4; ++i) {
        d.push_back((d.back() + 1) / 2);
    }
    return d;
}

CombinationVolume::CombinationVolume(ParameterSet& params, const std::string& name, int groups_,
                                     int64_t projected_groups)
    : groups(groups_), projection(params, name, 3, groups_, projected_groups, 1, {}, true) {}

Tensor CombinationVolume::operator()(const Tensor& concat_left, const Tensor& concat_right, const Tensor& gwc_left,
                                     const Tensor& gwc_right, int max_disparity) const {
    Tensor concat = build_concat_volume(concat_left, concat_right, max_disparity);
    Tensor gwc = projection(build_gwc_volume(gwc_left, gwc_right, max_disparity, groups));
    return stereo::concat({concat, gwc}, 1);
}

std::vector<int> residue_offsets(int displacement) {
    if (displacement <= 0) {
        throw ConfigError("displacement must be positive");
    }
    std::vector<int> offsets(static_cast<size_t>(displacement));
    for (int k = 0; k < displacement; ++k) {
        offsets[static_cast<size_t>(k)] = k - displacement / 2;
    }
    return offsets;
}

WarpedCorrelation build_warped_correlation(const Tensor& left, const Tensor& right, const Tensor& init_disparity,
                                           const std::vector<int>& offsets) {
    check_pair(left, right, "build_warped_correlation");
    if (offsets.empty()) {
        throw ConfigError("build_warped_correlation: empty offset list");
    }
    WarpedCorrelation out;
    out.offsets = offsets;
    out.warped_right = sample_bilinear_x(right, init_disparity);
    Tensor v = correlation_volume(left, out.warped_right, offsets, 1);
    out.volume = reshape(v, {left.dim(0), static_cast<int64_t>(offsets.size()), left.dim(2), left.dim(3)});
    return out;
}

Tensor reconstruction_error(const Tensor& left, const Tensor& warped_right) {
    if (left.shape() != warped_right.shape()) {
        throw ShapeError("reconstruction_error: shape mismatch " + shape_str(left.shape()) + " vs " +
                         shape_str(warped_right.shape()));
    }
    return sub(left, warped_right);
}

} // namespace stereo
