#pragma once

#include <cmath>
#include <cstdint>

#include "stereo/tensor.hpp"

// Brute-force per-element definitions of the cost volumes, written directly
// against Tensor::at so they share no code with the library kernels.
namespace stereo::testing {

inline double concat_oracle(const Tensor& l, const Tensor& r, int64_t n, int64_t ch, int64_t d, int64_t y,
                            int64_t x) {
    const int64_t C = l.dim(1);
    if (ch < C) {
        return l.at({n, ch, y, x});
    }
    return x - d < 0 ? 0.0 : r.at({n, ch - C, y, x - d});
}

inline double gwc_oracle(const Tensor& l, const Tensor& r, int groups, int64_t n, int64_t g, int64_t d, int64_t y,
                         int64_t x) {
    const int64_t cg = l.dim(1) / groups;
    if (x - d < 0 || x - d >= l.dim(3)) {
        return 0.0;
    }
    double acc = 0.0;
    for (int64_t c = g * cg; c < (g + 1) * cg; ++c) {
        acc += l.at({n, c, y, x}) * r.at({n, c, y, x - d});
    }
    return acc / static_cast<double>(cg);
}

// Linear interpolation of row `y` of channel `c` at real position `p`, zero
// contribution from taps outside the row.
inline double sample_oracle(const Tensor& f, int64_t n, int64_t c, int64_t y, double p) {
    const int64_t W = f.dim(3);
    double fl = std::floor(p);
    auto x0 = static_cast<int64_t>(fl);
    double t = p - fl, acc = 0.0;
    if (x0 >= 0 && x0 < W) acc += (1 - t) * f.at({n, c, y, x0});
    if (x0 + 1 >= 0 && x0 + 1 < W) acc += t * f.at({n, c, y, x0 + 1});
    return acc;
}

// Correlation of left with right warped by `disp`, at residue `offset`.
inline double warped_oracle(const Tensor& l, const Tensor& r, const Tensor& disp, int offset, int64_t n, int64_t y,
                            int64_t x) {
    const int64_t C = l.dim(1), W = l.dim(3);
    const int64_t xs = x - offset;
    if (xs < 0 || xs >= W) {
        return 0.0;
    }
    double acc = 0.0;
    for (int64_t c = 0; c < C; ++c) {
        acc += l.at({n, c, y, x}) * sample_oracle(r, n, c, y, static_cast<double>(xs) - disp.at({n, y, xs}));
    }
    return acc / static_cast<double>(C);
}

} // namespace stereo::testing
