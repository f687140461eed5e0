#include <cmath>
#include <random>

#include "doctest.h"
#include "stereo/cost_volume.hpp"
#include "stereo/dataset.hpp"
#include "stereo/gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace stereo;
using namespace stereo::testing;

namespace {

// Per-pixel unit vector of (image - 0.5), as [1, 3, H, W].
Tensor unit_features(const Tensor& image) {
    const int64_t H = image.dim(1), W = image.dim(2);
    std::vector<double> v(static_cast<size_t>(3 * H * W));
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            double a[3], norm = 0.0;
            for (int64_t c = 0; c < 3; ++c) {
                a[c] = image.at({c, y, x}) - 0.5;
                norm += a[c] * a[c];
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (int64_t c = 0; c < 3; ++c) {
                v[static_cast<size_t>((c * H + y) * W + x)] = a[c] / norm;
            }
        }
    }
    return Tensor::from_data({1, 3, H, W}, v);
}

Tensor batch_disparity(const Tensor& gt) {
    return reshape(gt.to(Precision::f64), {1, gt.dim(0), gt.dim(1)});
}

} // namespace

TEST_CASE("concat and group-wise volumes equal loop oracles on random shapes") {
    struct Case {
        int64_t N, C, H, W;
        int D, G;
    };
    const Case cases[] = {{1, 8, 4, 6, 4, 2}, {2, 4, 3, 5, 3, 4}, {1, 6, 2, 9, 6, 3},
                          {1, 2, 5, 3, 2, 1}, {3, 8, 2, 4, 5, 8}, {1, 16, 3, 7, 7, 4}};
    std::mt19937_64 rng(11);
    for (const auto& k : cases) {
        CAPTURE(k.C);
        CAPTURE(k.W);
        Tensor l = random_tensor({k.N, k.C, k.H, k.W}, rng);
        Tensor r = random_tensor({k.N, k.C, k.H, k.W}, rng);
        Tensor cv = build_concat_volume(l, r, k.D);
        Tensor gv = build_gwc_volume(l, r, k.D, k.G);
        REQUIRE(cv.shape() == Shape{k.N, 2 * k.C, k.D, k.H, k.W});
        REQUIRE(gv.shape() == Shape{k.N, k.G, k.D, k.H, k.W});
        double ce = 0.0, ge = 0.0;
        for (int64_t n = 0; n < k.N; ++n)
            for (int64_t d = 0; d < k.D; ++d)
                for (int64_t y = 0; y < k.H; ++y)
                    for (int64_t x = 0; x < k.W; ++x) {
                        for (int64_t ch = 0; ch < 2 * k.C; ++ch)
                            ce = std::max(ce, std::abs(cv.at({n, ch, d, y, x}) - concat_oracle(l, r, n, ch, d, y, x)));
                        for (int64_t g = 0; g < k.G; ++g)
                            ge = std::max(ge, std::abs(gv.at({n, g, d, y, x}) - gwc_oracle(l, r, k.G, n, g, d, y, x)));
                    }
        CHECK(ce == 0.0);
        CHECK(ge < 1e-12);
    }
}

TEST_CASE("single-precision volumes agree with the oracle within 1e-6") {
    std::mt19937_64 rng(12);
    Tensor l = random_tensor({1, 8, 3, 6}, rng, -1, 1, Precision::f32);
    Tensor r = random_tensor({1, 8, 3, 6}, rng, -1, 1, Precision::f32);
    Tensor gv = build_gwc_volume(l, r, 4, 2);
    double e = 0.0;
    for (int64_t g = 0; g < 2; ++g)
        for (int64_t d = 0; d < 4; ++d)
            for (int64_t y = 0; y < 3; ++y)
                for (int64_t x = 0; x < 6; ++x)
                    e = std::max(e, std::abs(gv.at({0, g, d, y, x}) - gwc_oracle(l, r, 2, 0, g, d, y, x)));
    CHECK(e < 1e-6);
}

TEST_CASE("concat volume: zero-disparity plane and boundary convention") {
    std::mt19937_64 rng(13);
    Tensor l = random_tensor({1, 2, 2, 3}, rng);
    Tensor r = random_tensor({1, 2, 2, 3}, rng);
    Tensor cv = build_concat_volume(l, r, 3);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 0; x < 3; ++x) {
                CHECK(cv.at({0, c, 0, y, x}) == l.at({0, c, y, x}));
                CHECK(cv.at({0, 2 + c, 0, y, x}) == r.at({0, c, y, x}));
                // d = 2 on W = 3: only x = 2 sees a right feature
                CHECK(cv.at({0, c, 2, y, x}) == l.at({0, c, y, x}));
                CHECK(cv.at({0, 2 + c, 2, y, x}) == (x == 2 ? r.at({0, c, y, 0}) : 0.0));
            }
    CHECK_THROWS_AS(build_concat_volume(l, r, 0), ConfigError);
}

TEST_CASE("group-wise volume: unit features, self-correlation and full correlation") {
    Tensor ones = Tensor::full({1, 8, 2, 5}, 1.0, Precision::f64);
    Tensor gv = build_gwc_volume(ones, ones, 3, 4);
    for (int64_t g = 0; g < 4; ++g)
        for (int64_t d = 0; d < 3; ++d)
            for (int64_t x = 0; x < 5; ++x)
                CHECK(gv.at({0, g, d, 1, x}) == (x >= d ? 1.0 : 0.0));

    std::mt19937_64 rng(14);
    Tensor f = random_tensor({1, 6, 2, 4}, rng);
    Tensor self = build_gwc_volume(f, f, 1, 3);
    for (int64_t g = 0; g < 3; ++g)
        for (int64_t x = 0; x < 4; ++x) {
            double ms = 0.0;
            for (int64_t c = 2 * g; c < 2 * g + 2; ++c) ms += f.at({0, c, 0, x}) * f.at({0, c, 0, x});
            CHECK(self.at({0, g, 0, 0, x}) == doctest::Approx(ms / 2).epsilon(1e-12));
        }

    Tensor r = random_tensor({1, 6, 2, 4}, rng);
    Tensor full = build_gwc_volume(f, r, 2, 1);
    double dot = 0.0;
    for (int64_t c = 0; c < 6; ++c) dot += f.at({0, c, 1, 3}) * r.at({0, c, 1, 2});
    CHECK(full.at({0, 0, 1, 1, 3}) == doctest::Approx(dot / 6).epsilon(1e-12));

    CHECK_THROWS_AS(build_gwc_volume(f, r, 2, 4), ConfigError);
}

TEST_CASE("scaling features: concat scales by s, group-wise by s^2") {
    std::mt19937_64 rng(15);
    Tensor l = random_tensor({1, 4, 3, 5}, rng);
    Tensor r = random_tensor({1, 4, 3, 5}, rng);
    const double s = 1.7;
    Tensor c1 = build_concat_volume(l, r, 3), c2 = build_concat_volume(scale(l, s), scale(r, s), 3);
    Tensor g1 = build_gwc_volume(l, r, 3, 2), g2 = build_gwc_volume(scale(l, s), scale(r, s), 3, 2);
    CHECK(max_abs_diff(scale(c1, s), c2) < 1e-12);
    CHECK(max_abs_diff(scale(g1, s * s), g2) < 1e-12);
}

TEST_CASE("invalid region x < d is zero in both volumes") {
    std::mt19937_64 rng(16);
    Tensor l = random_tensor({2, 4, 3, 6}, rng);
    Tensor r = random_tensor({2, 4, 3, 6}, rng);
    Tensor cv = build_concat_volume(l, r, 5), gv = build_gwc_volume(l, r, 5, 2);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t d = 0; d < 5; ++d)
            for (int64_t y = 0; y < 3; ++y)
                for (int64_t x = 0; x < d; ++x) {
                    for (int64_t c = 4; c < 8; ++c) CHECK(cv.at({n, c, d, y, x}) == 0.0);
                    for (int64_t g = 0; g < 2; ++g) CHECK(gv.at({n, g, d, y, x}) == 0.0);
                }
}

TEST_CASE("level disparities follow stride-2 halving") {
    CHECK(level_disparities(24) == std::vector<int>{6, 3, 2, 1});
    CHECK(level_disparities(192) == std::vector<int>{48, 24, 12, 6});
    CHECK_THROWS_AS(level_disparities(10), ConfigError);
}

TEST_CASE("combination volume: channel count and identity projection") {
    ParameterSet params(Precision::f64, 1);
    CombinationVolume comb(params, "cv", 4, 4);
    std::mt19937_64 rng(17);
    Tensor cl = random_tensor({1, 3, 2, 5}, rng), cr = random_tensor({1, 3, 2, 5}, rng);
    Tensor gl = random_tensor({1, 8, 2, 5}, rng), gr = random_tensor({1, 8, 2, 5}, rng);
    auto w = comb.projection.weight.mutable_data<double>();
    std::fill(w.begin(), w.end(), 0.0);
    for (int64_t i = 0; i < 4; ++i) w[static_cast<size_t>(i * 4 + i)] = 1.0;
    Tensor v = comb(cl, cr, gl, gr, 3);
    CHECK(v.shape() == Shape{1, 2 * 3 + 4, 3, 2, 5});
    Tensor plain = concat({build_concat_volume(cl, cr, 3), build_gwc_volume(gl, gr, 3, 4)}, 1);
    CHECK(max_abs_diff(v, plain) == 0.0);

    ParameterSet p2(Precision::f64, 2);
    CombinationVolume wide(p2, "cv", 4, 6);
    CHECK(wide(cl, cr, gl, gr, 3).dim(1) == 12);
}

TEST_CASE("combination volume gradients match finite differences") {
    ParameterSet params(Precision::f64, 3);
    CombinationVolume comb(params, "cv", 2, 3);
    std::mt19937_64 rng(18);
    auto report = check_gradients(
        [&](const std::vector<Tensor>& in) { return comb(in[0], in[1], in[2], in[3], 3); },
        {random_tensor({1, 2, 2, 4}, rng), random_tensor({1, 2, 2, 4}, rng), random_tensor({1, 4, 2, 4}, rng),
         random_tensor({1, 4, 2, 4}, rng)},
        1e-4);
    CHECK(report.passed);
}

TEST_CASE("residue offsets are signed, increasing and contain zero") {
    auto o = residue_offsets(24);
    REQUIRE(o.size() == 24);
    CHECK(o.front() == -12);
    CHECK(o.back() == 11);
    for (size_t i = 1; i < o.size(); ++i) CHECK(o[i] == o[i - 1] + 1);
    CHECK(residue_offsets(1) == std::vector<int>{0});
    CHECK_THROWS_AS(residue_offsets(0), ConfigError);
}

TEST_CASE("warped correlation equals its loop oracle") {
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 5; ++rep) {
        const int64_t N = 1 + rep % 2, C = 2 + rep, H = 2 + rep % 3, W = 5 + rep;
        Tensor l = random_tensor({N, C, H, W}, rng);
        Tensor r = random_tensor({N, C, H, W}, rng);
        Tensor disp = random_tensor({N, H, W}, rng, 0.0, 3.5);
        auto offsets = residue_offsets(4 + rep % 2);
        auto wc = build_warped_correlation(l, r, disp, offsets);
        REQUIRE(wc.volume.shape() == Shape{N, static_cast<int64_t>(offsets.size()), H, W});
        double err = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (size_t k = 0; k < offsets.size(); ++k)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x) {
                        const double expect = warped_oracle(l, r, disp, offsets[k], n, y, x);
                        err = std::max(err, std::abs(wc.volume.at({n, static_cast<int64_t>(k), y, x}) - expect));
                    }
        CHECK(err < 1e-12);
    }
    Tensor f = Tensor::zeros({1, 2, 2, 4}, Precision::f64);
    CHECK_THROWS_AS(build_warped_correlation(f, f, Tensor::zeros({1, 2, 4}, Precision::f64), {}), ConfigError);
}

TEST_CASE("warped self-correlation at zero disparity is the mean squared feature") {
    std::mt19937_64 rng(20);
    Tensor f = random_tensor({1, 5, 3, 6}, rng);
    auto wc = build_warped_correlation(f, f, Tensor::zeros({1, 3, 6}, Precision::f64), residue_offsets(4));
    CHECK(max_abs_diff(wc.warped_right, f) == 0.0);
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 6; ++x) {
            double ms = 0.0;
            for (int64_t c = 0; c < 5; ++c) ms += f.at({0, c, y, x}) * f.at({0, c, y, x});
            CHECK(wc.volume.at({0, 2, y, x}) == doctest::Approx(ms / 5).epsilon(1e-12));
        }
}

TEST_CASE("ground-truth warp on random-dot pairs peaks at offset zero") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        StereoSample s = generate_rds(32, 64, 16, seed);
        Tensor fl = unit_features(s.left), fr = unit_features(s.right);
        auto offsets = residue_offsets(24);
        auto wc = build_warped_correlation(fl, fr, batch_disparity(s.gt_disparity), offsets);
        const int64_t zero = 12;
        int64_t hits = 0, total = 0;
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 64; ++x) {
                if (!(*s.noc_mask)(y, x)) continue;
                double best = -1e30;
                for (int64_t k = 0; k < 24; ++k) best = std::max(best, wc.volume.at({0, k, y, x}));
                ++total;
                hits += wc.volume.at({0, zero, y, x}) >= best;
            }
        REQUIRE(total > 0);
        CHECK(static_cast<double>(hits) / static_cast<double>(total) >= 0.9);
    }
}

TEST_CASE("reconstruction error: zero, antisymmetric, small on matched pixels") {
    std::mt19937_64 rng(21);
    Tensor a = random_tensor({1, 3, 2, 4}, rng), b = random_tensor({1, 3, 2, 4}, rng);
    CHECK(max_abs_diff(reconstruction_error(a, a), Tensor::zeros({1, 3, 2, 4}, Precision::f64)) == 0.0);
    CHECK(max_abs_diff(reconstruction_error(a, b), neg(reconstruction_error(b, a))) == 0.0);
    CHECK_THROWS_AS(reconstruction_error(a, Tensor::zeros({1, 3, 2, 5}, Precision::f64)), ShapeError);

    StereoSample s = generate_rds(32, 64, 16, 7);
    Tensor l = reshape(s.left.to(Precision::f64), {1, 3, 32, 64});
    Tensor r = reshape(s.right.to(Precision::f64), {1, 3, 32, 64});
    Tensor wr = sample_bilinear_x(r, batch_disparity(s.gt_disparity));
    Tensor e = reconstruction_error(l, wr);
    double noc = 0.0, occ = 0.0;
    int64_t n_noc = 0, n_occ = 0;
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 64; ++x) {
            double m = 0.0;
            for (int64_t c = 0; c < 3; ++c) m += std::abs(e.at({0, c, y, x}));
            if ((*s.noc_mask)(y, x)) {
                noc = std::max(noc, m);
                ++n_noc;
            } else {
                occ += m;
                ++n_occ;
            }
        }
    CHECK(noc < 1e-6);
    REQUIRE(n_occ > 0);
    CHECK(occ / static_cast<double>(n_occ) > 0.1);
}
