#include "stereo/gradcheck_suite.hpp"

#include <cmath>
#include <random>

#include "stereo/cost_volume.hpp"
#include "stereo/gradcheck.hpp"
#include "stereo/model.hpp"
#include "stereo/training.hpp"

namespace stereo {

namespace {

using Rng = std::mt19937_64;

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) {
        x = dist(rng);
    }
    return Tensor::from_values(std::move(shape), v, Precision::f64);
}

// Values at least `gap` away from every point in `kinks`.
Tensor away_from(Shape shape, Rng& rng, const std::vector<double>& kinks, double gap, double lo = -2.0,
                 double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) {
        bool ok = false;
        while (!ok) {
            x = dist(rng);
            ok = true;
            for (double k : kinks) {
                ok = ok && std::abs(x - k) > gap;
            }
        }
    }
    return Tensor::from_values(std::move(shape), v, Precision::f64);
}

// Offsets whose sampling positions x - offset stay clear of integers.
Tensor fractional_offsets(Shape shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) {
        do {
            x = dist(rng);
        } while (std::abs(x - std::round(x)) < 0.05);
    }
    return Tensor::from_values(std::move(shape), v, Precision::f64);
}

struct Instance {
    OpClosure op;
    std::vector<Tensor> inputs;
};

using InstanceMaker = std::function<Instance(Rng&, int)>;

GradCase make_case(std::string name, InstanceMaker maker, int instances = 3, GradCheckOptions opts = {}) {
    return {name, [name, maker, instances, opts](double tol) {
                GradCaseResult res;
                Rng rng(std::hash<std::string>{}(name));
                for (int i = 0; i < instances; ++i) {
                    Instance inst = maker(rng, i);
                    GradCheckOptions o = opts;
                    o.seed = opts.seed + static_cast<uint64_t>(i);
                    GradCheckReport rep = check_gradients(inst.op, inst.inputs, tol, o);
                    for (size_t k = 0; k < rep.max_rel_error.size(); ++k) {
                        res.max_rel_error = std::max(res.max_rel_error, rep.max_rel_error[k]);
                        res.probes += rep.probes[k];
                    }
                    ++res.instances;
                }
                res.passed = res.max_rel_error < tol;
                return res;
            }};
}

int pick(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Shape random_shape(Rng& rng, int rank) {
    Shape s;
    for (int i = 0; i < rank; ++i) {
        s.push_back(pick(rng, 1, 4));
    }
    return s;
}

// Toy network small enough for double-precision finite differences.
ModelConfig micro_config(Variant variant) {
    ModelConfig c;
    c.variant = variant;
    c.max_disparity = 16;
    c.precision = Precision::f64;
    c.features.channels = {4, 4, 4, 4};
    c.features.stem_channels = 4;
    c.features.projected_channels = 2;
    c.groups = 2;
    c.projected_groups = 2;
    c.aggregation.channel_dims = {4, 4, 4, 4};
    c.aggregation.toy_scale_factor = 2;
    c.refinement.channels = 4;
    c.refinement.disparity_feature_channels = 4;
    c.refinement.displacement = 4;
    return c;
}

GradCase model_case(Variant variant) {
    std::string name = std::string("model_forward_") + to_string(variant);
    return {name, [variant](double tol) {
                GradCaseResult res;
                for (int i = 0; i < 3; ++i) {
                    Rng rng(1000 + static_cast<uint64_t>(i));
                    // Coarsest level must hold several pixels or batch statistics become ill-conditioned.
                    const int64_t H = variant == Variant::base ? 32 * (1 + i % 2) : 64, W = 96 + 32 * (i % 2);
                    auto net = std::make_shared<StereoNet>(micro_config(variant), 7 + static_cast<uint64_t>(i));
                    if (variant == Variant::msmd) {
                        // Non-zero residue head so gradients cross the refinement trunk.
                        Tensor w = net->refinement().output_layer().weight;
                        for (int64_t k = 0; k < w.numel(); ++k) {
                            w.set_flat(k, std::uniform_real_distribution<double>(-0.2, 0.2)(rng));
                        }
                    }
                    const ForwardContext ctx{Activation::mish, true};
                    Tensor left = uniform({1, 3, H, W}, rng, 0.0, 1.0);
                    Tensor right = uniform({1, 3, H, W}, rng, 0.0, 1.0);
                    auto forward_all = [net, ctx](const Tensor& l, const Tensor& r) {
                        ModelOutput out = net->forward(l, r, ctx);
                        std::vector<Tensor> parts;
                        for (const auto& t : out.taps) {
                            parts.push_back(t.disparity);
                        }
                        return concat(parts, 0);
                    };
                    GradCheckOptions opts;
                    opts.step = 1e-5;
                    opts.max_elements_per_input = 6;
                    opts.seed = 40 + static_cast<uint64_t>(i);
                    GradCheckReport images = check_gradients(
                        [forward_all](const std::vector<Tensor>& in) { return forward_all(in[0], in[1]); },
                        {left, right}, tol, opts);
                    std::vector<Tensor> params;
                    for (const auto& p : net->parameters().parameters()) {
                        params.push_back(p.value);
                    }
                    opts.max_elements_per_input = 1;
                    GradCheckReport weights = check_parameter_gradients(
                        [forward_all, left, right]() { return forward_all(left, right); }, params, tol, opts);
                    for (const auto* rep : {&images, &weights}) {
                        for (size_t k = 0; k < rep->max_rel_error.size(); ++k) {
                            res.max_rel_error = std::max(res.max_rel_error, rep->max_rel_error[k]);
                            res.probes += rep->probes[k];
                        }
                    }
                    ++res.instances;
                }
                res.passed = res.max_rel_error < tol;
                return res;
            }};
}

} // namespace

std::vector<GradCase> gradient_suite() {
    std::vector<GradCase> cases;
    auto binary = [](auto fn) {
        return [fn](Rng& rng, int) {
            Shape s = random_shape(rng, 3);
            return Instance{[fn](const std::vector<Tensor>& in) { return fn(in[0], in[1]); },
                            {uniform(s, rng), uniform(s, rng)}};
        };
    };
    auto unary = [](auto fn, std::vector<double> kinks = {}) {
        return [fn, kinks](Rng& rng, int) {
            Shape s = random_shape(rng, 3);
            Tensor x = kinks.empty() ? uniform(s, rng, -3.0, 3.0) : away_from(s, rng, kinks, 0.01, -3.0, 3.0);
            return Instance{[fn](const std::vector<Tensor>& in) { return fn(in[0]); }, {x}};
        };
    };
    cases.push_back(make_case("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); })));
    cases.push_back(make_case("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); })));
    cases.push_back(make_case("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); })));
    cases.push_back(make_case("scale", unary([](const Tensor& x) { return scale(x, -1.7); })));
    cases.push_back(make_case("add_scalar", unary([](const Tensor& x) { return add_scalar(x, 0.3); })));
    cases.push_back(make_case("neg", unary([](const Tensor& x) { return neg(x); })));
    cases.push_back(make_case("sum", unary([](const Tensor& x) { return sum(x); })));
    cases.push_back(make_case("mean", unary([](const Tensor& x) { return mean(x); })));
    cases.push_back(make_case("reshape", unary([](const Tensor& x) { return reshape(x, {x.numel()}); })));
    cases.push_back(make_case("concat", [](Rng& rng, int i) {
        Shape a = random_shape(rng, 3), b = a;
        const int axis = i % 3;
        b[static_cast<size_t>(axis)] = pick(rng, 1, 3);
        return Instance{[axis](const std::vector<Tensor>& in) { return concat({in[0], in[1]}, axis); },
                        {uniform(a, rng), uniform(b, rng)}};
    }));
    cases.push_back(make_case("clamp", unary([](const Tensor& x) { return clamp(x, -1.0, 1.5); }, {-1.0, 1.5})));
    cases.push_back(make_case("smooth_l1", unary([](const Tensor& x) { return smooth_l1(x); }, {-1.0, 1.0})));
    cases.push_back(make_case("relu", unary([](const Tensor& x) { return activate(x, Activation::relu); }, {0.0})));
    cases.push_back(make_case("mish", unary([](const Tensor& x) { return activate(x, Activation::mish); })));
    cases.push_back(make_case("softmax", [](Rng& rng, int i) {
        Shape s = random_shape(rng, 3);
        s[static_cast<size_t>(i % 3)] += 1;
        return Instance{[i](const std::vector<Tensor>& in) { return softmax_along(in[0], i % 3); },
                        {uniform(s, rng, -2.0, 2.0)}};
    }));
    cases.push_back(make_case("index_expectation", [](Rng& rng, int i) {
        Shape s = random_shape(rng, 3);
        return Instance{[i](const std::vector<Tensor>& in) { return index_expectation(in[0], i % 3); },
                        {uniform(s, rng, 0.0, 1.0)}};
    }));
    cases.push_back(make_case("soft_argmin", [](Rng& rng, int) {
        Shape s{pick(rng, 1, 2), pick(rng, 2, 6), pick(rng, 1, 4), pick(rng, 1, 4)};
        return Instance{[](const std::vector<Tensor>& in) { return soft_argmin(in[0], 1); },
                        {uniform(s, rng, -2.0, 2.0)}};
    }));
    auto conv_case = [](int dims, bool transposed, int dilation) {
        return [dims, transposed, dilation](Rng& rng, int) {
            const int64_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
            const int k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
            Shape in{pick(rng, 1, 2), cin};
            Shape w = transposed ? Shape{cin, cout} : Shape{cout, cin};
            for (int d = 0; d < dims; ++d) {
                in.push_back(pick(rng, 3, 6) + (k - 1) * dilation);
                w.push_back(k);
            }
            ConvOptions o{.stride = {stride}, .padding = {pad}, .dilation = {dilation}, .transposed = transposed};
            if (transposed && stride > 1) {
                o.output_padding = {pick(rng, 0, 1)};
            }
            return Instance{[dims, o](const std::vector<Tensor>& x) { return convolution(x[0], x[1], x[2], dims, o); },
                            {uniform(in, rng), uniform(w, rng), uniform({cout}, rng)}};
        };
    };
    cases.push_back(make_case("conv2d", conv_case(2, false, 1)));
    cases.push_back(make_case("conv2d_dilated", conv_case(2, false, 2)));
    cases.push_back(make_case("conv3d", conv_case(3, false, 1)));
    cases.push_back(make_case("conv_transposed2d", conv_case(2, true, 1)));
    cases.push_back(make_case("conv_transposed3d", conv_case(3, true, 1)));
    auto norm_case = [](bool training) {
        return [training](Rng& rng, int i) {
            const int64_t C = pick(rng, 1, 3);
            Shape s{pick(rng, 1, 2), C, pick(rng, 2, 4), pick(rng, 2, 4)};
            if (i == 2) {
                s.push_back(pick(rng, 2, 3));
            }
            Tensor rm = uniform({C}, rng, -0.5, 0.5), rv = uniform({C}, rng, 0.5, 1.5);
            return Instance{[training, rm, rv](const std::vector<Tensor>& in) {
                                Tensor m = rm.clone(), v = rv.clone();
                                return normalize_batch(in[0], m, v, in[1], in[2], training, 0.1, 1e-5);
                            },
                            {uniform(s, rng), uniform({C}, rng, 0.5, 1.5), uniform({C}, rng)}};
        };
    };
    cases.push_back(make_case("batch_norm_train", norm_case(true)));
    cases.push_back(make_case("batch_norm_eval", norm_case(false)));
    cases.push_back(make_case("sample_bilinear_x", [](Rng& rng, int) {
        Shape f{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 3, 7)};
        return Instance{[](const std::vector<Tensor>& in) { return sample_bilinear_x(in[0], in[1]); },
                        {uniform(f, rng), fractional_offsets({f[0], f[2], f[3]}, rng, -2.0, 4.0)}};
    }));
    cases.push_back(make_case("resize_bilinear", [](Rng& rng, int) {
        Shape s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 2, 5), pick(rng, 2, 5)};
        std::vector<int64_t> target{pick(rng, 2, 9), pick(rng, 2, 9)};
        return Instance{[target](const std::vector<Tensor>& in) { return resize(in[0], target, ResizeMode::bilinear); },
                        {uniform(s, rng)}};
    }));
    cases.push_back(make_case("resize_trilinear", [](Rng& rng, int) {
        Shape s{1, pick(rng, 1, 2), pick(rng, 2, 4), pick(rng, 2, 4), pick(rng, 2, 4)};
        std::vector<int64_t> target{pick(rng, 2, 7), pick(rng, 2, 7), pick(rng, 2, 7)};
        return Instance{[target](const std::vector<Tensor>& in) { return resize(in[0], target, ResizeMode::trilinear); },
                        {uniform(s, rng)}};
    }));
    auto feature_pair = [](Rng& rng, int64_t channels) {
        Shape s{pick(rng, 1, 2), channels, pick(rng, 1, 4), pick(rng, 3, 8)};
        return std::vector<Tensor>{uniform(s, rng), uniform(s, rng)};
    };
    cases.push_back(make_case("gwc_volume", [feature_pair](Rng& rng, int) {
        const int groups = pick(rng, 1, 3);
        const int D = pick(rng, 1, 5);
        return Instance{[D, groups](const std::vector<Tensor>& in) { return build_gwc_volume(in[0], in[1], D, groups); },
                        feature_pair(rng, groups * pick(rng, 1, 3))};
    }));
    cases.push_back(make_case("concat_volume", [feature_pair](Rng& rng, int) {
        const int D = pick(rng, 1, 5);
        return Instance{[D](const std::vector<Tensor>& in) { return build_concat_volume(in[0], in[1], D); },
                        feature_pair(rng, pick(rng, 1, 3))};
    }));
    cases.push_back(make_case("warped_correlation", [feature_pair](Rng& rng, int) {
        auto f = feature_pair(rng, pick(rng, 1, 4));
        f.push_back(fractional_offsets({f[0].dim(0), f[0].dim(2), f[0].dim(3)}, rng, -1.0, 3.0));
        const auto offsets = residue_offsets(pick(rng, 1, 5));
        return Instance{[offsets](const std::vector<Tensor>& in) {
                            WarpedCorrelation w = build_warped_correlation(in[0], in[1], in[2], offsets);
                            Tensor recon = reconstruction_error(in[0], w.warped_right);
                            return concat({w.volume, recon}, 1);
                        },
                        f};
    }));
    cases.push_back(make_case("combination_volume", [feature_pair](Rng& rng, int i) {
        auto params = std::make_shared<ParameterSet>(Precision::f64, 11 + static_cast<uint64_t>(i));
        const int groups = pick(rng, 1, 2);
        auto gwc = feature_pair(rng, 2 * groups);
        Shape cs = gwc[0].shape();
        cs[1] = pick(rng, 1, 2);
        CombinationVolume cv(*params, "cv", groups, pick(rng, 1, 3));
        const int D = pick(rng, 1, 4);
        return Instance{[params, cv, D](const std::vector<Tensor>& in) { return cv(in[0], in[1], in[2], in[3], D); },
                        {uniform(cs, rng), uniform(cs, rng), gwc[0], gwc[1]}};
    }));
    cases.push_back(make_case("total_loss", [](Rng& rng, int i) {
        const int64_t N = pick(rng, 1, 2), H = pick(rng, 2, 4), W = pick(rng, 2, 4);
        const int taps = 2 + i;
        LossConfig cfg;
        std::vector<Tensor> inputs;
        for (int t = 0; t < taps; ++t) {
            cfg.taps.push_back("t" + std::to_string(t));
            cfg.weights.push_back(0.5 + 0.25 * t);
            inputs.push_back(uniform({N, H, W}, rng, 0.0, 6.0));
        }
        Tensor gt = uniform({N, H, W}, rng, 0.0, 6.0);
        // Keep every residual clear of the smooth-L1 branch points.
        for (const Tensor& tap : inputs) {
            for (int64_t k = 0; k < gt.numel(); ++k) {
                double r = std::abs(tap.flat(k) - gt.flat(k));
                if (std::abs(r - 1.0) < 0.01) {
                    gt.set_flat(k, gt.flat(k) + 0.05);
                }
            }
        }
        std::vector<Mask> valid(static_cast<size_t>(N), Mask(H, W, true));
        valid[0].set(0, 0, false);
        Tensor mask = loss_mask(gt, valid, 6, Precision::f64);
        return Instance{[cfg, gt, mask](const std::vector<Tensor>& in) {
                            std::vector<SupervisionTap> t;
                            for (size_t k = 0; k < in.size(); ++k) {
                                t.push_back({cfg.taps[k], in[k]});
                            }
                            return total_loss(t, gt, mask, cfg);
                        },
                        inputs};
    }));
    cases.push_back(model_case(Variant::base));
    cases.push_back(model_case(Variant::ms));
    cases.push_back(model_case(Variant::msmd));
    return cases;
}

GradCase corrupted_gradient_case() {
    return make_case("corrupted_square", [](Rng& rng, int) {
        Shape s = random_shape(rng, 2);
        return Instance{[](const std::vector<Tensor>& in) {
                            const Tensor& x = in[0];
                            Tensor out = Tensor::empty(x.shape(), x.precision());
                            for (int64_t i = 0; i < x.numel(); ++i) {
                                out.set_flat(i, x.flat(i) * x.flat(i));
                            }
                            // d(x^2)/dx is 2x; this backward reports 3x.
                            return record(out, "corrupted_square", {x}, [xb = x.buffer()](BackwardContext& ctx) {
                                auto g = ctx.grad_output<double>();
                                auto gx = ctx.grad_input<double>(0);
                                auto xv = std::as_const(*xb).span<double>();
                                for (size_t i = 0; i < gx.size(); ++i) {
                                    gx[i] += 3.0 * xv[i] * g[i];
                                }
                            });
                        },
                        {uniform(s, rng, 0.5, 2.0)}};
    });
}

} // namespace stereo
