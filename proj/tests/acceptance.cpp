// Acceptance checks. `acceptance <n>...` runs the listed criteria (all when
// none are given) and prints one PASS/FAIL line each; exit status is the
// number of failures.
#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "stereo/checkpoint.hpp"
#include "stereo/cost_volume.hpp"
#include "stereo/evaluation.hpp"
#include "stereo/gradcheck_suite.hpp"
#include "stereo/image_io.hpp"
#include "stereo/ops.hpp"
#include "stereo/refinement.hpp"
#include "stereo/training.hpp"
#include "test_util.hpp"

using namespace stereo;
using namespace stereo::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    // Records a failed requirement.
    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail << "failed: ";
            else detail << "; ";
            detail << what;
            pass = false;
        }
    }
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ---------------------------------------------------------------------------

void gradients(Outcome& o) {
    auto t0 = std::chrono::steady_clock::now();
    auto suite = gradient_suite();
    std::set<std::string> names;
    double worst = 0.0;
    for (const auto& c : suite) {
        GradCaseResult r = c.run(kGradTolerance);
        names.insert(c.name);
        worst = std::max(worst, r.max_rel_error);
        o.require(r.passed, c.name + " rel err " + fmt(r.max_rel_error));
        o.require(r.instances >= 3, c.name + " checked on " + std::to_string(r.instances) + " shapes");
    }
    for (const char* op : {"conv2d", "conv3d", "conv_transposed3d", "batch_norm_train", "batch_norm_eval", "relu",
                           "mish", "softmax", "sample_bilinear_x", "resize_trilinear", "smooth_l1", "soft_argmin",
                           "gwc_volume", "concat_volume", "warped_correlation", "model_forward_msmd"}) {
        o.require(names.count(op) == 1, std::string("no case for ") + op);
    }
    o.require(!corrupted_gradient_case().run(kGradTolerance).passed, "negative control passed");
    const double t = seconds_since(t0);
    o.require(t < 300.0, "runtime " + fmt(t) + " s");
    o.detail << (o.pass ? "" : " | ") << suite.size() << " ops, worst rel err " << fmt(worst) << ", " << fmt(t)
             << " s";
}

// 2 ---------------------------------------------------------------------------

void oracles(Outcome& o) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pick(0, 1 << 20);
    double worst = 0.0;
    int instances = 0;
    for (Precision prec : {Precision::f64, Precision::f32}) {
        for (int rep = 0; rep < 6; ++rep, ++instances) {
            const int64_t N = 1 + pick(rng) % 2;
            const int G = 1 << (pick(rng) % 3);              // 1, 2, 4
            const int64_t C = G * (1 + pick(rng) % (8 / G)); // <= 8
            const int D = 1 + pick(rng) % 8;
            const int64_t H = 1 + pick(rng) % 12, W = 1 + pick(rng) % 12;
            Tensor l = random_tensor({N, C, H, W}, rng, -1, 1, prec);
            Tensor r = random_tensor({N, C, H, W}, rng, -1, 1, prec);
            Tensor disp = random_tensor({N, H, W}, rng, 0.0, static_cast<double>(D), prec);
            auto offsets = residue_offsets(D);
            Tensor cv = build_concat_volume(l, r, D);
            Tensor gv = build_gwc_volume(l, r, D, G);
            auto wc = build_warped_correlation(l, r, disp, offsets);
            o.require(cv.shape() == Shape{N, 2 * C, D, H, W} && gv.shape() == Shape{N, G, D, H, W} &&
                          wc.volume.shape() == Shape{N, static_cast<int64_t>(offsets.size()), H, W},
                      "shape mismatch");
            if (!o.pass) return;
            double err = 0.0;
            for (int64_t n = 0; n < N; ++n)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x) {
                        for (int d = 0; d < D; ++d) {
                            for (int64_t ch = 0; ch < 2 * C; ++ch)
                                err = std::max(err, std::abs(cv.at({n, ch, d, y, x}) - concat_oracle(l, r, n, ch, d, y, x)));
                            for (int64_t g = 0; g < G; ++g)
                                err = std::max(err, std::abs(gv.at({n, g, d, y, x}) - gwc_oracle(l, r, G, n, g, d, y, x)));
                        }
                        for (size_t k = 0; k < offsets.size(); ++k)
                            err = std::max(err, std::abs(wc.volume.at({n, static_cast<int64_t>(k), y, x}) -
                                                         warped_oracle(l, r, disp, offsets[k], n, y, x)));
                    }
            worst = std::max(worst, err);
        }
    }
    o.require(worst < 1e-6, "max deviation " + fmt(worst));
    o.detail << (o.pass ? "" : " | ") << instances << " instances (f64 and f32), max deviation " << fmt(worst);
}

// 3 ---------------------------------------------------------------------------

void soft_argmin_checks(Outcome& o) {
    // Shift invariance is asserted in double precision: in float32 the shifted
    // input itself is rounded by more than 1e-6.
    double one_hot = 0.0, uniform = 0.0, shift = 0.0, shift32 = 0.0;
    for (Precision prec : {Precision::f64, Precision::f32}) {
        for (int D : {2, 6, 24, 48}) {
            for (int k = 0; k < D; ++k) {
                std::vector<double> cost(static_cast<size_t>(D), 0.0);
                cost[static_cast<size_t>(k)] = -30.0;
                double got = soft_argmin(Tensor::from_values({1, D, 1, 1}, cost, prec), 1).item();
                one_hot = std::max(one_hot, std::abs(got - k));
            }
            std::mt19937_64 rng(static_cast<uint64_t>(D));
            const double level = std::uniform_real_distribution<double>(-5, 5)(rng);
            for (double v : soft_argmin(Tensor::full({2, D, 3, 4}, level, prec), 1).to_vector()) {
                uniform = std::max(uniform, std::abs(v - (D - 1) / 2.0));
            }
            Tensor cost = random_tensor({2, D, 3, 4}, rng, -5, 5, prec);
            Tensor offset = random_tensor({2, 1, 3, 4}, rng, -10, 10, prec);
            Tensor shifted = add(cost, concat(std::vector<Tensor>(static_cast<size_t>(D), offset), 1));
            double& s = prec == Precision::f64 ? shift : shift32;
            s = std::max(s, max_abs_diff(soft_argmin(cost, 1), soft_argmin(shifted, 1)));
        }
    }
    o.require(one_hot <= 1e-3, "one-hot error " + fmt(one_hot));
    o.require(uniform <= 1e-6, "uniform error " + fmt(uniform));
    o.require(shift <= 1e-6, "shift error " + fmt(shift));
    o.detail << (o.pass ? "" : " | ") << "one-hot " << fmt(one_hot) << ", uniform " << fmt(uniform) << ", shift "
             << fmt(shift) << " (float32 " << fmt(shift32) << ")";
}

// 4 ---------------------------------------------------------------------------

void residual_identity(Outcome& o) {
    double worst = 0.0;
    {
        ParameterSet params(Precision::f32, 4);
        Refinement ref(params, "refinement", RefineConfig{}, 16);
        std::mt19937_64 rng(4);
        Tensor l = random_tensor({2, 16, 16, 24}, rng, -1, 1, Precision::f32);
        Tensor r = random_tensor({2, 16, 16, 24}, rng, -1, 1, Precision::f32);
        Tensor init = random_tensor({2, 64, 96}, rng, 0, 23, Precision::f32);
        for (bool training : {true, false}) {
            ForwardContext ctx{.training = training};
            worst = std::max(worst, max_abs_diff(ref(ref.make_input(l, r, init, 24, ctx), 24, ctx), init));
        }
    }
    StereoNet net(ModelConfig{}, 4);
    StereoSample s = generate_rds(64, 96, 24, 4);
    for (Activation act : {Activation::relu, Activation::mish}) {
        for (bool training : {true, false}) {
            auto out = net.forward(s.left, s.right, {act, training});
            worst = std::max(worst, max_abs_diff(out.refined, out.initial));
        }
    }
    o.require(worst <= 1e-7, "max |refined - init| " + fmt(worst));
    o.detail << (o.pass ? "" : " | ") << "max |refined - init| " << fmt(worst);
}

// 5 ---------------------------------------------------------------------------

std::vector<StereoSample> overfit_suite() {
    std::vector<StereoSample> data;
    for (int i = 0; i < 16; ++i) data.push_back(generate_rds(64, 96, 24, 100 + static_cast<uint64_t>(i)));
    return data;
}

constexpr int kBatch = 4;
constexpr int kIterations = 500;
constexpr int kEpochs = kIterations * kBatch / 16;

SwitchSchedule relu_schedule(int epochs) {
    return SwitchSchedule{{{Activation::relu, LrSchedule{1e-3, {}, 0.5, epochs}}}};
}

struct Overfit {
    double seconds = 0.0;
    double final_loss = 0.0; // mean over the last four epochs, per unit of tap weight
    double initial_epe = 0.0, final_epe = 0.0;
};

Overfit overfit(Variant variant, const std::vector<StereoSample>& data) {
    ModelConfig cfg;
    cfg.variant = variant;
    StereoNet net(cfg, 1);
    LossConfig loss = default_loss_config(cfg);
    TrainOptions opt;
    opt.seed = 1;
    opt.batch_size = kBatch;
    opt.max_iterations = kIterations;
    Trainer trainer(net, loss, opt);
    auto t0 = std::chrono::steady_clock::now();
    auto records = trainer.run(data, relu_schedule(kEpochs));
    Overfit r;
    r.seconds = seconds_since(t0);
    const size_t tail = 4 * data.size() / kBatch;
    for (size_t i = records.size() - tail; i < records.size(); ++i) r.final_loss += records[i].loss;
    r.final_loss /= static_cast<double>(tail) * std::accumulate(loss.weights.begin(), loss.weights.end(), 0.0);

    MetricAccumulator initial, final;
    NoGradGuard no_grad;
    for (const auto& s : data) {
        auto out = net.forward(s.left, s.right, {Activation::relu, false});
        Shape hw{s.height(), s.width()};
        initial.add(reshape(out.initial, hw), s.gt_disparity, s.valid_mask);
        final.add(reshape(out.final_disparity(), hw), s.gt_disparity, s.valid_mask);
    }
    r.initial_epe = initial.report(Region::all).epe;
    r.final_epe = final.report(Region::all).epe;
    std::cerr << "  " << to_string(variant) << ": " << fmt(r.seconds) << " s, final loss/weight " << fmt(r.final_loss)
              << ", EPE initial " << fmt(r.initial_epe) << " final " << fmt(r.final_epe) << '\n';
    return r;
}

void overfit_and_ablation(Outcome& o) {
    const auto data = overfit_suite();
    Overfit msmd = overfit(Variant::msmd, data);
    o.require(msmd.final_epe < 1.5, "EPE " + fmt(msmd.final_epe));
    o.require(msmd.final_epe <= msmd.initial_epe,
              "refined EPE " + fmt(msmd.final_epe) + " > initial " + fmt(msmd.initial_epe));
    o.require(msmd.seconds < 1800.0, "runtime " + fmt(msmd.seconds) + " s");
    Overfit ms = overfit(Variant::ms, data);
    Overfit base = overfit(Variant::base, data);
    o.require(msmd.final_loss <= ms.final_loss && ms.final_loss <= base.final_loss,
              "loss ordering msmd " + fmt(msmd.final_loss) + " ms " + fmt(ms.final_loss) + " base " +
                  fmt(base.final_loss));
    o.detail << (o.pass ? "" : " | ") << "EPE " << fmt(msmd.initial_epe) << " -> " << fmt(msmd.final_epe)
             << " in " << fmt(msmd.seconds) << " s; loss msmd " << fmt(msmd.final_loss) << " <= ms "
             << fmt(ms.final_loss) << " <= base " << fmt(base.final_loss);
}

// 6 ---------------------------------------------------------------------------

void switch_mechanics(Outcome& o) {
    const auto data = overfit_suite();
    const fs::path dir = fs::temp_directory_path() / "stereo_acceptance_switch";
    fs::remove_all(dir);
    constexpr int relu_epochs = 25; // 100 iterations
    ModelConfig cfg;
    TrainOptions opt;
    opt.seed = 1;
    opt.batch_size = kBatch;
    opt.checkpoint_dir = dir;
    {
        StereoNet net(cfg, 1);
        Trainer(net, default_loss_config(cfg), opt).run(data, relu_schedule(relu_epochs));
    }
    const fs::path ckpt = dir / "phase1_relu.ckpt";
    auto saved = load_checkpoint(ckpt);
    StereoNet net(cfg, 2);
    auto fresh = snapshot(net.parameters());
    bool same = saved.size() == fresh.size();
    for (size_t i = 0; same && i < saved.size(); ++i) {
        same = saved[i].name == fresh[i].name && saved[i].shape == fresh[i].shape;
    }
    o.require(same, "parameter inventory differs");

    SwitchSchedule schedule = relu_schedule(relu_epochs);
    schedule.phases.push_back({Activation::mish, LrSchedule{1e-3, {}, 0.5, 13}});
    opt.checkpoint_dir.clear();
    opt.max_iterations = relu_epochs * 16 / kBatch + 50;
    Trainer trainer(net, default_loss_config(cfg), opt);
    trainer.resume(ckpt);
    auto records = trainer.run(data, schedule);
    o.require(records.size() == 50, std::to_string(records.size()) + " post-switch iterations");
    if (records.size() != 50) return;
    bool all_mish = true;
    for (const auto& r : records) all_mish = all_mish && r.activation == Activation::mish;
    o.require(all_mish, "post-switch step not under mish");
    double first = 0.0, last = 0.0;
    for (size_t i = 0; i < 10; ++i) {
        first += records[i].loss / 10;
        last += records[40 + i].loss / 10;
    }
    o.require(last < first, "loss " + fmt(first) + " -> " + fmt(last));
    o.detail << (o.pass ? "" : " | ") << saved.size() << " tensors reloaded; loss over iterations 1-10 "
             << fmt(first) << " -> 41-50 " << fmt(last);
    fs::remove_all(dir);
}

// 7 ---------------------------------------------------------------------------

void metrics(Outcome& o) {
    auto row = [](std::initializer_list<double> v) {
        return Tensor::from_values({1, static_cast<int64_t>(v.size())}, v, Precision::f64);
    };
    auto a = compute_metrics(row({1, 2, 7}), row({1, 2, 3}), Mask(1, 3, true));
    o.require(a.pixel_count == 3 && a.epe == 4.0 / 3.0, "EPE of [1,2,7] vs [1,2,3]");
    o.require(a.threshold_err[0] == 1.0 / 3.0 && a.threshold_err[2] == 1.0 / 3.0 && a.threshold_err[3] == 0.0,
              "threshold errors of [1,2,7] vs [1,2,3]");
    o.require(a.d1 == 1.0 / 3.0, "D1 of [1,2,7] vs [1,2,3]");
    auto b = compute_metrics(row({104}), row({100}), Mask(1, 1, true));
    o.require(b.threshold_err[2] == 1.0 && b.d1 == 0.0, "error 4 on gt 100 counted as D1 outlier");
    auto c = compute_metrics(row({106, 13.5}), row({100, 10}), Mask(1, 2, true));
    o.require(c.d1 == 1.0, "errors 6 on 100 and 3.5 on 10 not both outliers");
    auto perfect = compute_metrics(row({3, 9}), row({3, 9}), Mask(1, 2, true));
    o.require(perfect.epe == 0.0 && perfect.d1 == 0.0, "perfect prediction");
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        auto m = compute_metrics(random_tensor({6, 7}, rng, 0, 40), random_tensor({6, 7}, rng, 0, 40),
                                 Mask(6, 7, true));
        for (size_t k = 1; k < 5; ++k) {
            o.require(m.threshold_err[k] <= m.threshold_err[k - 1], "threshold error not monotone");
        }
    }
    if (o.pass) o.detail << "hand cases exact, monotone on 200 random inputs";
}

// 8 ---------------------------------------------------------------------------

void formats(Outcome& o) {
    std::mt19937_64 rng(8);
    std::vector<double> v(5 * 7);
    std::normal_distribution<double> normal(0, 1e3);
    for (double& x : v) x = normal(rng);
    v[0] = std::numeric_limits<double>::infinity();
    v[1] = std::numeric_limits<float>::denorm_min();
    v[2] = -0.0;
    v[3] = std::numeric_limits<float>::max();
    Tensor img = Tensor::from_values({5, 7}, v, Precision::f32);
    for (Endian e : {Endian::little, Endian::big}) {
        auto bytes = encode_pfm(img, e);
        PfmImage back = decode_pfm(bytes);
        bool exact = back.data.shape() == img.shape();
        auto src = img.data<float>();
        auto dst = back.data.to(Precision::f32);
        auto got = dst.data<float>();
        exact = exact && std::memcmp(src.data(), got.data(), src.size() * sizeof(float)) == 0;
        o.require(exact, std::string("PFM round trip, ") + (e == Endian::little ? "little" : "big") + " endian");
        o.require(encode_pfm(back.data, e) == bytes, "PFM re-encoding differs");
    }

    PngImage one{.width = 9, .height = 4, .channels = 1, .bit_depth = 16, .samples = {}};
    PngImage two = one;
    std::uniform_int_distribution<int> value(1, 32767);
    for (int i = 0; i < 36; ++i) {
        const int x = value(rng);
        one.samples.push_back(static_cast<uint16_t>(x));
        two.samples.push_back(static_cast<uint16_t>(2 * x));
    }
    auto k1 = read_kitti_disparity(encode_png(one));
    auto k2 = read_kitti_disparity(encode_png(two));
    bool linear = true;
    for (int64_t i = 0; i < 36; ++i) linear = linear && k2.disparity.flat(i) == 2 * k1.disparity.flat(i);
    o.require(linear, "KITTI decode not linear");

    int64_t checked = 0, violations = 0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        StereoSample s = generate_rds(48, 80, 24, seed);
        const Mask& noc = *s.noc_mask;
        for (int64_t y = 0; y < s.height(); ++y)
            for (int64_t x = 0; x < s.width(); ++x) {
                if (!noc(y, x)) continue;
                ++checked;
                const double d = s.gt_disparity.at({y, x});
                const auto xr = static_cast<int64_t>(x - d);
                bool ok = xr >= 0 && static_cast<double>(xr) == x - d;
                for (int64_t c = 0; ok && c < 3; ++c) ok = s.left.at({c, y, x}) == s.right.at({c, y, xr});
                violations += ok ? 0 : 1;
            }
    }
    o.require(checked > 0 && violations == 0, std::to_string(violations) + " warp violations");
    o.detail << (o.pass ? "" : " | ") << "PFM bit-exact both endians, KITTI linear, warp identity on " << checked
             << " non-occluded pixels";
}

// 9 ---------------------------------------------------------------------------

void lr_schedule(Outcome& o) {
    LrSchedule s;
    const std::map<int, double> expect{{5, 0.001}, {13, 0.0005}, {17, 0.00025}, {19, 0.000125}};
    for (auto [epoch, lr] : expect) {
        o.require(s.lr_at(epoch) == lr, "epoch " + std::to_string(epoch) + ": " + fmt(s.lr_at(epoch)));
    }
    if (o.pass) o.detail << "0.001 / 0.0005 / 0.00025 / 0.000125 at epochs 5 / 13 / 17 / 19";
}

struct Criterion {
    const char* title;
    std::function<void(Outcome&)> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {"gradient suite", gradients},
        {"volume oracles", oracles},
        {"soft argmin", soft_argmin_checks},
        {"residual identity", residual_identity},
        {"overfit and ablation", overfit_and_ablation},
        {"activation switch", switch_mechanics},
        {"metrics", metrics},
        {"formats", formats},
        {"learning-rate schedule", lr_schedule},
    };
    std::vector<size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const int n = std::atoi(argv[i]);
        if (n < 1 || n > static_cast<int>(criteria.size())) {
            std::cerr << "usage: acceptance [criterion 1-" << criteria.size() << "]...\n";
            return 2;
        }
        selected.push_back(static_cast<size_t>(n - 1));
    }
    if (selected.empty()) {
        selected.resize(criteria.size());
        std::iota(selected.begin(), selected.end(), size_t{0});
    }
    int failures = 0;
    for (size_t i : selected) {
        Outcome o;
        try {
            criteria[i].run(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].title
                  << "): " << o.detail.str() << std::endl;
    }
    return failures;
}
