#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "stereo/autograd.hpp"
#include "stereo/checkpoint.hpp"
#include "stereo/gradcheck.hpp"
#include "stereo/ops.hpp"
#include "test_util.hpp"

using namespace stereo;
using stereo::testing::max_abs_diff;
using stereo::testing::random_tensor;

namespace {

// Direct loop convolution, the independent reference for the im2col path.
Tensor naive_conv3d(const Tensor& x, const Tensor& w, int s, int p, int d) {
    const int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int64_t O = w.dim(0), k = w.dim(2);
    auto ext = [&](int64_t in) { return (in + 2 * p - d * (k - 1) - 1) / s + 1; };
    const int64_t oD = ext(D), oH = ext(H), oW = ext(W);
    std::vector<double> out(static_cast<size_t>(N * O * oD * oH * oW), 0.0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t z = 0; z < oD; ++z)
                for (int64_t y = 0; y < oH; ++y)
                    for (int64_t xx = 0; xx < oW; ++xx) {
                        double acc = 0.0;
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t a = 0; a < k; ++a)
                                for (int64_t b = 0; b < k; ++b)
                                    for (int64_t e = 0; e < k; ++e) {
                                        int64_t iz = z * s - p + a * d, iy = y * s - p + b * d,
                                                ix = xx * s - p + e * d;
                                        if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W)
                                            continue;
                                        acc += x.at({n, c, iz, iy, ix}) * w.at({o, c, a, b, e});
                                    }
                        out[static_cast<size_t>((((n * O + o) * oD + z) * oH + y) * oW + xx)] = acc;
                    }
    return Tensor::from_data({N, O, oD, oH, oW}, out);
}

double mish_oracle(double x) {
    long double lx = x;
    return static_cast<double>(lx * std::tanh(std::log1p(std::exp(lx))));
}

} // namespace

TEST_CASE("convolution: identity and averaging kernels on a row") {
    Tensor x = Tensor::from_values({1, 1, 1, 5}, {1, 2, 3, 4, 5});
    Tensor id = Tensor::from_values({1, 1, 1, 1}, {1});
    CHECK(convolution(x, id, {}, 2, {}).to_vector() == std::vector<double>{1, 2, 3, 4, 5});

    Tensor avg = Tensor::from_values({1, 1, 1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, Precision::f64);
    Tensor xd = x.to(Precision::f64);
    ConvOptions o;
    o.padding = {0, 1};
    auto y = convolution(xd, avg, {}, 2, o).to_vector();
    std::vector<double> expect{1, 2, 3, 4, 3};
    for (size_t i = 0; i < 5; ++i) {
        CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("convolution: output extent arithmetic") {
    CHECK(conv_output_extent(8, 3, 2, 1, 1, false) == 4);
    CHECK(conv_output_extent(4, 3, 2, 1, 1, true, 1) == 8);
    CHECK(conv_output_extent(6, 3, 1, 2, 2, false) == 6);

    Tensor x = Tensor::zeros({1, 2, 8, 8});
    Tensor w = Tensor::zeros({4, 2, 3, 3});
    ConvOptions o;
    o.stride = {2, 2};
    o.padding = {1, 1};
    CHECK(convolution(x, w, {}, 2, o).shape() == Shape{1, 4, 4, 4});
}

TEST_CASE("convolution: errors") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    CHECK_THROWS_AS(convolution(x, Tensor::zeros({2, 2, 3, 3}), {}, 2, {}), ShapeError);
    CHECK_THROWS_AS(convolution(Tensor::zeros({1, 3, 2, 2}), Tensor::zeros({2, 3, 3, 3}), {}, 2, {}),
                    ShapeError);
    ConvOptions bad;
    bad.dilation = {0, 1};
    CHECK_THROWS_AS(convolution(x, Tensor::zeros({2, 3, 1, 1}), {}, 2, bad), ShapeError);
}

TEST_CASE("convolution: matches a direct loop for strided dilated 3D kernels") {
    std::mt19937_64 rng(3);
    for (auto [s, p, d] : {std::tuple{1, 1, 1}, std::tuple{2, 1, 1}, std::tuple{1, 2, 2}, std::tuple{2, 0, 1}}) {
        Tensor x = random_tensor({2, 3, 5, 6, 7}, rng);
        Tensor w = random_tensor({4, 3, 3, 3, 3}, rng);
        ConvOptions o;
        o.stride = {s};
        o.padding = {p};
        o.dilation = {d};
        Tensor y = convolution(x, w, {}, 3, o);
        Tensor ref = naive_conv3d(x, w, s, p, d);
        REQUIRE(y.shape() == ref.shape());
        CHECK(max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("convolution: identity kernel is the identity for any shape") {
    std::mt19937_64 rng(5);
    for (Shape shape : {Shape{1, 2, 3, 4, 5}, Shape{2, 3, 1, 7, 2}, Shape{1, 1, 6, 1, 9}}) {
        const int64_t C = shape[1];
        std::vector<double> w(static_cast<size_t>(C * C * 27), 0.0);
        for (int64_t c = 0; c < C; ++c) {
            w[static_cast<size_t>((c * C + c) * 27 + 13)] = 1.0;
        }
        Tensor kernel = Tensor::from_data({C, C, 3, 3, 3}, w);
        Tensor x = random_tensor(shape, rng);
        ConvOptions o;
        o.padding = {1};
        CHECK(max_abs_diff(convolution(x, kernel, {}, 3, o), x) == 0.0);
    }
}

TEST_CASE("normalize_batch examples") {
    Tensor x = Tensor::full({2, 3, 4}, 7.0);
    Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
    Tensor g1 = Tensor::full({3}, 1.0), b0 = Tensor::zeros({3});
    Tensor y = normalize_batch(x, rm, rv, g1, b0, true, 0.1, 1e-5);
    for (double v : y.to_vector()) {
        CHECK(v == 0.0);
    }
    // Running stats moved towards the batch statistics.
    CHECK(rm.flat(0) == doctest::Approx(0.7));
    CHECK(rv.flat(0) == doctest::Approx(0.9));

    Tensor g2 = Tensor::full({3}, 2.0), b3 = Tensor::full({3}, 3.0);
    for (double v : normalize_batch(x, rm, rv, g2, b3, true, 0.1, 1e-5).to_vector()) {
        CHECK(v == 3.0);
    }

    std::mt19937_64 rng(1);
    Tensor z = random_tensor({1, 3, 5}, rng);
    Tensor m0 = Tensor::zeros({3}, Precision::f64), v1 = Tensor::full({3}, 1.0, Precision::f64);
    Tensor one = Tensor::full({3}, 1.0, Precision::f64), zero = Tensor::zeros({3}, Precision::f64);
    Tensor e = normalize_batch(z, m0, v1, one, zero, false, 0.1, 1e-3);
    auto zv = z.to_vector();
    auto ev = e.to_vector();
    for (size_t i = 0; i < zv.size(); ++i) {
        CHECK(ev[i] == doctest::Approx(zv[i] / std::sqrt(1.001)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(normalize_batch(z, m0, v1, one, zero, false, 0.1, 0.0), ConfigError);
    Tensor four = Tensor::zeros({4}, Precision::f64);
    CHECK_THROWS_AS(normalize_batch(z, four, v1, one, zero, false, 0.1, 1e-5), ShapeError);
}

TEST_CASE("activate examples") {
    Tensor x = Tensor::from_values({3}, {-1, 0, 2}, Precision::f64);
    CHECK(activate(x, Activation::relu).to_vector() == std::vector<double>{0, 0, 2});
    Tensor m = activate(Tensor::from_values({4}, {0, 1, -1, 25}, Precision::f64), Activation::mish);
    CHECK(m.flat(0) == 0.0);
    // Frozen from a 30-digit evaluation of x * tanh(ln(1 + e^x)).
    CHECK(m.flat(1) == doctest::Approx(0.865098388267310346).epsilon(1e-14));
    CHECK(m.flat(1) == doctest::Approx(mish_oracle(1.0)).epsilon(1e-14));
    CHECK(m.flat(2) == doctest::Approx(-0.303401461374108918).epsilon(1e-14));
    CHECK(m.flat(3) == doctest::Approx(25.0).epsilon(1e-14));
}

TEST_CASE("softmax_along examples") {
    auto u = softmax_along(Tensor::full({4}, 0.3, Precision::f64), 0).to_vector();
    for (double v : u) {
        CHECK(v == doctest::Approx(0.25));
    }
    auto big = softmax_along(Tensor::from_values({3}, {1000, 0, 0}), 0).to_vector();
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));

    std::mt19937_64 rng(9);
    for (double mag : {1.0, 1e2, 1e4}) {
        for (int axis : {0, 1, 2}) {
            Tensor x = random_tensor({3, 5, 4}, rng, -mag, mag, Precision::f32);
            Tensor y = softmax_along(x, axis);
            int64_t ext = x.dim(axis);
            int64_t inner = 1;
            for (int a = axis + 1; a < 3; ++a) inner *= x.dim(a);
            int64_t outer = x.numel() / (ext * inner);
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                    double s = 0.0;
                    for (int64_t k = 0; k < ext; ++k) {
                        double v = y.flat((o * ext + k) * inner + i);
                        CHECK(v >= 0.0);
                        s += v;
                    }
                    CHECK(std::abs(s - 1.0) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("sample_bilinear_x examples") {
    Tensor ramp = Tensor::from_values({1, 1, 1, 4}, {0, 1, 2, 3}, Precision::f64);
    CHECK(sample_bilinear_x(ramp, Tensor::zeros({1, 1, 4}, Precision::f64)).to_vector() ==
          std::vector<double>{0, 1, 2, 3});
    CHECK(sample_bilinear_x(ramp, Tensor::full({1, 1, 4}, 1.0, Precision::f64)).to_vector() ==
          std::vector<double>{0, 0, 1, 2});
    auto half = sample_bilinear_x(ramp, Tensor::full({1, 1, 4}, 0.5, Precision::f64)).to_vector();
    CHECK(half == std::vector<double>{0, 0.5, 1.5, 2.5});

    // Integer offsets are exact shifted copies with zero fill.
    std::mt19937_64 rng(2);
    Tensor f = random_tensor({2, 3, 4, 9}, rng);
    std::uniform_int_distribution<int> pick(-4, 4);
    std::vector<double> offs(2 * 4 * 9);
    for (double& o : offs) o = pick(rng);
    Tensor off = Tensor::from_data({2, 4, 9}, offs);
    Tensor y = sample_bilinear_x(f, off);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t r = 0; r < 4; ++r)
                for (int64_t x = 0; x < 9; ++x) {
                    int64_t src = x - static_cast<int64_t>(off.at({n, r, x}));
                    double expect = (src >= 0 && src < 9) ? f.at({n, c, r, src}) : 0.0;
                    CHECK(y.at({n, c, r, x}) == expect);
                }
}

TEST_CASE("resize examples") {
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({1, 2, 3, 5}, rng);
    CHECK(max_abs_diff(resize(x, {3, 5}, ResizeMode::bilinear), x) == 0.0);
    Tensor v = random_tensor({1, 1, 2, 3, 4}, rng);
    CHECK(max_abs_diff(resize(v, {2, 3, 4}, ResizeMode::trilinear), v) == 0.0);

    Tensor c = Tensor::full({1, 1, 3, 4}, 2.5, Precision::f64);
    for (double e : resize(c, {7, 11}, ResizeMode::bilinear).to_vector()) {
        CHECK(e == doctest::Approx(2.5).epsilon(1e-14));
    }
    Tensor cv = Tensor::full({1, 1, 2, 3, 4}, -1.5, Precision::f64);
    for (double e : resize(cv, {5, 2, 9}, ResizeMode::trilinear).to_vector()) {
        CHECK(e == doctest::Approx(-1.5).epsilon(1e-14));
    }

    Tensor ramp = Tensor::from_values({1, 1, 1, 5}, {0, 1, 2, 3, 4}, Precision::f64);
    auto up = resize(ramp, {2, 10}, ResizeMode::bilinear).to_vector();
    for (size_t i = 1; i < 10; ++i) {
        CHECK(up[i] >= up[i - 1]);
    }
    CHECK_THROWS_AS(resize(ramp, {0, 3}, ResizeMode::bilinear), ShapeError);
    CHECK_THROWS_AS(resize(ramp, {1, 2, 3}, ResizeMode::trilinear), ShapeError);
}

TEST_CASE("backward examples") {
    Tensor x = Tensor::from_values({1}, {3}, Precision::f64);
    x.set_requires_grad(true);
    backward(sum(mul(x, x)));
    CHECK(x.grad().flat(0) == 6.0);

    Tensor a = Tensor::from_values({3}, {1, 2, 3}, Precision::f64);
    Tensor b = Tensor::from_values({3}, {-4, 5, 0.5}, Precision::f64);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    backward(sum(mul(a, b)));
    CHECK(a.grad().to_vector() == b.to_vector());
    CHECK(b.grad().to_vector() == a.to_vector());
}

TEST_CASE("backward: conv -> activate -> sum matches central differences (h = 1e-3)") {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({1, 2, 5, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    auto f = [&](const Tensor& xi) {
        ConvOptions o;
        o.padding = {1, 1};
        return sum(activate(convolution(xi, w, {}, 2, o), Activation::mish));
    };
    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    backward(f(leaf));
    Tensor g = leaf.grad();
    const double h = 1e-3;
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x.clone(), xm = x.clone();
        xp.set_flat(i, x.flat(i) + h);
        xm.set_flat(i, x.flat(i) - h);
        double numeric = (f(xp).item() - f(xm).item()) / (2 * h);
        CHECK(g.flat(i) == doctest::Approx(numeric).epsilon(1e-4));
    }
}

TEST_CASE("backward: errors and accumulation across branches") {
    Tensor x = Tensor::from_values({2}, {1, 2}, Precision::f64);
    x.set_requires_grad(true);
    Tensor loss = sum(mul(x, x));
    OpGraph graph = OpGraph::trace(loss);
    CHECK(graph.size() == 2);
    graph.backward();
    CHECK_THROWS_AS(backward(loss), GraphError);
    CHECK_THROWS_AS(backward(mul(x, x)), GraphError);

    // y = 3x + x^2 through two branches of the same tensor.
    Tensor z = Tensor::from_values({2}, {1.5, -2}, Precision::f64);
    z.set_requires_grad(true);
    backward(add(sum(scale(z, 3.0)), sum(mul(z, z))));
    CHECK(z.grad().flat(0) == doctest::Approx(3 + 2 * 1.5));
    CHECK(z.grad().flat(1) == doctest::Approx(3 - 4));

    Tensor s = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(s), GraphError);
}

TEST_CASE("forward ops reject non-finite results") {
    Tensor x = Tensor::from_values({2}, {1e30, 1e30});
    CHECK_THROWS_AS(mul(x, x), NumericError);
}

TEST_CASE("check_gradients examples") {
    std::mt19937_64 rng(21);
    // relu away from the kink
    std::uniform_real_distribution<double> mag(0.2, 1.0);
    std::vector<double> v(20);
    for (size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1 : -1) * mag(rng);
    auto r = check_gradients([](const std::vector<Tensor>& in) { return activate(in[0], Activation::relu); },
                             {Tensor::from_data({4, 5}, v)}, 1e-4);
    CHECK(r.passed);
    CHECK(r.max_rel_error[0] < 1e-4);

    auto c = check_gradients(
        [](const std::vector<Tensor>& in) { return convolution(in[0], in[1], in[2], 3, {}); },
        {random_tensor({1, 2, 3, 4, 3}, rng), random_tensor({2, 2, 2, 2, 2}, rng), random_tensor({2}, rng)},
        1e-4);
    CHECK(c.passed);

    std::uniform_real_distribution<double> frac(0.1, 0.9);
    std::vector<double> offs(2 * 3 * 6);
    for (size_t i = 0; i < offs.size(); ++i) offs[i] = static_cast<double>(static_cast<int>(i % 5) - 2) + frac(rng);
    auto s = check_gradients(
        [](const std::vector<Tensor>& in) { return sample_bilinear_x(in[0], in[1]); },
        {random_tensor({2, 2, 3, 6}, rng), Tensor::from_data({2, 3, 6}, offs)}, 1e-4);
    CHECK(s.passed);
    CHECK(s.max_rel_error.size() == 2);

    CHECK_THROWS_AS(check_gradients([](const std::vector<Tensor>& in) { return in[0]; },
                                    {Tensor::zeros({2})}, 1e-4),
                    ConfigError);
}

TEST_CASE("check_gradients flags a wrong backward") {
    // d/dx of this op is reported as 2x instead of 3x^2.
    auto wrong_cube = [](const std::vector<Tensor>& in) {
        const Tensor& x = in[0];
        Tensor out = Tensor::empty(x.shape(), x.precision());
        for (int64_t i = 0; i < x.numel(); ++i) out.set_flat(i, std::pow(x.flat(i), 3));
        return record(out, "wrong_cube", {x}, [xb = x.buffer()](BackwardContext& ctx) {
            auto g = ctx.grad_input<double>(0);
            auto gy = ctx.grad_output<double>();
            auto xs = std::as_const(*xb).span<double>();
            for (size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * 2 * xs[i];
        });
    };
    auto r = check_gradients(wrong_cube, {Tensor::from_values({3}, {0.5, 1.5, -2}, Precision::f64)}, 1e-4);
    CHECK_FALSE(r.passed);
}

TEST_CASE("checkpoint: bit-exact round trip and shape drift detection") {
    std::mt19937_64 rng(8);
    ParameterSet params(Precision::f32, 3);
    params.add_parameter("a.weight", {3, 2, 3, 3}, Init::fan_in_uniform, 18);
    params.add_parameter("a.bias", {3}, Init::zeros);
    params.add_buffer("a.bn.running_var", {3}, 1.0);
    Tensor special = params.get("a.bias");
    special.set_flat(0, -0.0);
    special.set_flat(1, 1e-40); // denormal
    special.set_flat(2, 3.4e38);

    auto snap = snapshot(params);
    auto bytes = encode_checkpoint(snap);
    auto back = decode_checkpoint(bytes);
    REQUIRE(back.size() == snap.size());
    for (size_t i = 0; i < snap.size(); ++i) {
        CHECK(back[i].name == snap[i].name);
        CHECK(back[i].shape == snap[i].shape);
        CHECK(std::memcmp(back[i].values.data(), snap[i].values.data(), snap[i].values.size() * 4) == 0);
    }
    CHECK(encode_checkpoint(back) == bytes);

    ParameterSet fresh(Precision::f32, 99);
    fresh.add_parameter("a.weight", {3, 2, 3, 3}, Init::fan_in_uniform, 18);
    fresh.add_parameter("a.bias", {3}, Init::zeros);
    fresh.add_buffer("a.bn.running_var", {3}, 1.0);
    restore(fresh, back);
    CHECK(encode_checkpoint(snapshot(fresh)) == bytes);

    ParameterSet drift(Precision::f32, 0);
    drift.add_parameter("a.weight", {3, 2, 1, 1}, Init::zeros);
    drift.add_parameter("a.bias", {3}, Init::zeros);
    drift.add_buffer("a.bn.running_var", {3}, 1.0);
    CHECK_THROWS_AS(restore(drift, back), FormatError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
    auto bad_version = bytes;
    bad_version[0] = 7;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
}

TEST_CASE("parameter names are unique") {
    ParameterSet p;
    p.add_parameter("x", {2}, Init::zeros);
    CHECK_THROWS_AS(p.add_parameter("x", {2}, Init::zeros), ConfigError);
}
