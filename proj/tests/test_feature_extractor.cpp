#include <random>

#include "doctest.h"
#include "stereo/features.hpp"
#include "stereo/gradcheck.hpp"
#include "test_util.hpp"

using namespace stereo;
using stereo::testing::max_abs_diff;
using stereo::testing::random_tensor;

namespace {

std::vector<std::string> names(const ParameterSet& p) {
    std::vector<std::string> out;
    for (const auto& e : p.entries()) {
        out.push_back(e.name);
    }
    return out;
}

} // namespace

TEST_CASE("feature pyramid shapes for a 64x64 image") {
    ParameterSet params(Precision::f32, 3);
    FeatureExtractor fx(params, "features", FeatureConfig{});
    std::mt19937_64 rng(1);
    Tensor img = random_tensor({1, 3, 64, 64}, rng, 0, 1, Precision::f32);
    auto pyr = fx(img, {});
    REQUIRE(pyr.levels.size() == 4);
    CHECK(pyr.levels[0].shape() == Shape{1, 16, 16, 16});
    CHECK(pyr.levels[1].shape() == Shape{1, 24, 8, 8});
    CHECK(pyr.levels[2].shape() == Shape{1, 32, 4, 4});
    CHECK(pyr.levels[3].shape() == Shape{1, 32, 2, 2});
    for (size_t i = 0; i < 4; ++i) {
        CHECK(pyr.projected[i].dim(1) == 4);
        CHECK(pyr.projected[i].dim(2) == pyr.levels[i].dim(2));
    }
}

TEST_CASE("each level halves the previous one for non-square inputs") {
    ParameterSet params(Precision::f32, 4);
    FeatureExtractor fx(params, "features", FeatureConfig{});
    std::mt19937_64 rng(2);
    auto pyr = fx(random_tensor({2, 3, 64, 128}, rng, 0, 1, Precision::f32), {});
    CHECK(pyr.levels[0].dim(2) == 16);
    CHECK(pyr.levels[0].dim(3) == 32);
    for (size_t i = 1; i < 4; ++i) {
        CHECK(pyr.levels[i].dim(0) == 2);
        CHECK(pyr.levels[i].dim(2) * 2 == pyr.levels[i - 1].dim(2));
        CHECK(pyr.levels[i].dim(3) * 2 == pyr.levels[i - 1].dim(3));
    }
}

TEST_CASE("shared weights: identical images give identical pyramids") {
    ParameterSet params(Precision::f32, 5);
    FeatureExtractor fx(params, "features", FeatureConfig{});
    std::mt19937_64 rng(3);
    Tensor img = random_tensor({1, 3, 32, 64}, rng, 0, 1, Precision::f32);
    ForwardContext eval{.training = false};
    auto a = fx(img, eval);
    auto b = fx(img.clone(), eval);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(max_abs_diff(a.levels[i], b.levels[i]) == 0.0);
        CHECK(max_abs_diff(a.projected[i], b.projected[i]) == 0.0);
    }
}

TEST_CASE("extents not divisible by 32 are rejected") {
    ParameterSet params(Precision::f32, 6);
    FeatureExtractor fx(params, "features", FeatureConfig{});
    CHECK_THROWS_AS(fx(Tensor::zeros({1, 3, 48, 64}), {}), ShapeError);
    CHECK_THROWS_AS(fx(Tensor::zeros({1, 3, 64, 70}), {}), ShapeError);
    CHECK_THROWS_AS(fx(Tensor::zeros({1, 1, 64, 64}), {}), ShapeError);
}

TEST_CASE("activation swap keeps the parameter inventory and changes outputs") {
    ParameterSet params(Precision::f32, 7);
    FeatureExtractor fx(params, "features", FeatureConfig{});
    auto before = names(params);
    std::mt19937_64 rng(4);
    Tensor img = random_tensor({1, 3, 32, 32}, rng, 0, 1, Precision::f32);
    ForwardContext relu{.activation = Activation::relu, .training = false};
    ForwardContext mish{.activation = Activation::mish, .training = false};
    auto a = fx(img, relu);
    auto b = fx(img, mish);
    CHECK(names(params) == before);
    CHECK(max_abs_diff(a.levels[0], b.levels[0]) > 0.0);
}

TEST_CASE("gradient of a coarse-level scalar matches finite differences") {
    ParameterSet params(Precision::f64, 8);
    FeatureConfig cfg;
    cfg.channels = {4, 4, 4, 4};
    cfg.stem_channels = 4;
    cfg.projected_channels = 2;
    FeatureExtractor fx(params, "features", cfg);
    std::mt19937_64 rng(5);
    Tensor img = random_tensor({1, 3, 64, 64}, rng, 0, 1);
    ForwardContext ctx{.activation = Activation::mish, .training = false};
    GradCheckOptions opts;
    opts.max_elements_per_input = 24;
    auto report = check_gradients(
        [&](const std::vector<Tensor>& in) {
            auto p = fx(in[0], ctx);
            return add(sum(p.levels[3]), sum(p.projected[3]));
        },
        {img}, 1e-4, opts);
    CHECK(report.passed);
    CHECK(report.max_rel_error[0] < 1e-4);
}
