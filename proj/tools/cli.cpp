#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stereo/checkpoint.hpp"
#include "stereo/config.hpp"
#include "stereo/evaluation.hpp"
#include "stereo/gradcheck_suite.hpp"
#include "stereo/image_io.hpp"
#include "stereo/training.hpp"

namespace stereo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Copies everything written to it into two streams.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == EOF) {
            return !EOF;
        }
        bool ok = a_->sputc(static_cast<char>(c)) != EOF;
        if (b_) ok = b_->sputc(static_cast<char>(c)) != EOF && ok;
        return ok ? c : EOF;
    }
    std::streamsize xsputn(const char* s, std::streamsize n) override {
        a_->sputn(s, n);
        if (b_) b_->sputn(s, n);
        return n;
    }
    int sync() override {
        a_->pubsync();
        if (b_) b_->pubsync();
        return 0;
    }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

std::string sample_name(size_t index) {
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

std::pair<int64_t, int64_t> parse_size(const std::string& s) {
    auto x = s.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        int64_t h = std::stoll(s.substr(0, x)), w = std::stoll(s.substr(x + 1));
        if (h <= 0 || w <= 0) throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::exception&) {
        throw ConfigError("size must look like HxW, got '" + s + "'");
    }
}

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct LoadedModel {
    std::unique_ptr<StereoNet> net;
    Activation activation = Activation::relu;
};

LoadedModel load_model(const fs::path& checkpoint) {
    json side = read_json_file(checkpoint.string() + ".json");
    LoadedModel m;
    m.net = std::make_unique<StereoNet>(model_config_from_json(side.at("model")));
    restore(m.net->parameters(), load_checkpoint(checkpoint), true);
    m.activation = parse_activation(side.value("activation", std::string("relu")));
    return m;
}

// Zero-pads [3, H, W] at the bottom and right to a multiple of the pyramid divisor.
Tensor pad_image(const Tensor& image, Precision precision) {
    const int64_t H = image.dim(1), W = image.dim(2);
    const int64_t Hp = (H + kPyramidDivisor - 1) / kPyramidDivisor * kPyramidDivisor;
    const int64_t Wp = (W + kPyramidDivisor - 1) / kPyramidDivisor * kPyramidDivisor;
    std::vector<double> v(static_cast<size_t>(3 * Hp * Wp), 0.0);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) v[static_cast<size_t>((c * Hp + y) * Wp + x)] = image.at({c, y, x});
    return Tensor::from_values({1, 3, Hp, Wp}, v, precision);
}

// Eval-mode disparity [H, W] for one pair of [3, H, W] images.
Tensor predict(const LoadedModel& m, const Tensor& left, const Tensor& right) {
    if (left.shape() != right.shape()) {
        throw ShapeError("left " + shape_str(left.shape()) + " and right " + shape_str(right.shape()) + " differ");
    }
    NoGradGuard guard;
    const Precision p = m.net->config().precision;
    ModelOutput out = m.net->forward(pad_image(left, p), pad_image(right, p), {m.activation, false});
    const Tensor& d = out.final_disparity();
    const int64_t H = left.dim(1), W = left.dim(2), Wp = d.dim(2);
    std::vector<float> v(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) v[static_cast<size_t>(y * W + x)] = static_cast<float>(d.flat(y * Wp + x));
    return Tensor::from_data({H, W}, v);
}

void write_prediction(const fs::path& dir, const std::string& name, const Tensor& disparity, int max_disparity) {
    fs::create_directories(dir);
    write_pfm(dir / (name + ".pfm"), disparity);
    write_disparity_png(dir / (name + ".png"), disparity, max_disparity);
}

// ---- gen ----------------------------------------------------------------------

struct GenArgs {
    int count = 16;
    std::string size = "64x96";
    int maxdisp = 24;
    uint64_t seed = 0;
    std::string out;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    if (a.count < 0) {
        throw ConfigError("--count must be non-negative");
    }
    auto [h, w] = parse_size(a.size);
    fs::path dir(a.out);
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < a.count; ++i) {
        StereoSample s = generate_rds(h, w, a.maxdisp, a.seed * 1000003ULL + static_cast<uint64_t>(i));
        entries.push_back(save_sample(dir, "rds_" + sample_name(static_cast<size_t>(i)), s));
    }
    write_manifest(dir / "manifest.txt", entries);
    out << "wrote " << a.count << " samples to " << (dir / "manifest.txt").string() << '\n';
    return kOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
    std::string config, manifest, out, resume;
    std::string variant, phases = "relu:20,mish:15";
    int maxdisp = 0, displacement = 0, channel_scale = 0, batch_size = 1;
    double lr = 1e-3;
    std::vector<int> milestones{12, 16, 18};
    uint64_t seed = 0;
    int64_t iterations = 0;
    bool augment = false, quiet = false;
};

struct TrainFlags {
    CLI::Option *variant, *maxdisp, *displacement, *channel_scale, *phases, *lr, *milestones, *batch_size, *seed,
        *iterations, *augment;
};

// Config file: model keys at the top level plus an optional "training" object.
void apply_config_file(TrainArgs& a, ModelConfig& model, const TrainFlags& given) {
    json j = read_json_file(a.config);
    json training = json::object();
    if (j.contains("training")) {
        training = j.at("training");
        j.erase("training");
    }
    model = model_config_from_json(j, model);
    for (auto it = training.begin(); it != training.end(); ++it) {
        const std::string& k = it.key();
        if (k == "phases") {
            if (!given.phases->count()) a.phases = it->get<std::string>();
        } else if (k == "lr") {
            if (!given.lr->count()) a.lr = it->get<double>();
        } else if (k == "milestones") {
            if (!given.milestones->count()) a.milestones = it->get<std::vector<int>>();
        } else if (k == "batch_size") {
            if (!given.batch_size->count()) a.batch_size = it->get<int>();
        } else if (k == "seed") {
            if (!given.seed->count()) a.seed = it->get<uint64_t>();
        } else if (k == "iterations") {
            if (!given.iterations->count()) a.iterations = it->get<int64_t>();
        } else if (k == "augment") {
            if (!given.augment->count()) a.augment = it->get<bool>();
        } else {
            throw ConfigError("unknown key 'training." + k + "' in " + a.config);
        }
    }
}

std::vector<StereoSample> load_manifest_samples(const fs::path& manifest, int max_disparity) {
    std::vector<StereoSample> data;
    for (const auto& e : read_manifest(manifest)) {
        data.push_back(load_sample(e, max_disparity));
    }
    return data;
}

int cmd_train(TrainArgs a, const TrainFlags& given, std::ostream& out) {
    ModelConfig model;
    if (!a.config.empty()) {
        try {
            apply_config_file(a, model, given);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config file: ") + e.what());
        }
    }
    if (given.variant->count()) model.variant = parse_variant(a.variant);
    if (given.maxdisp->count()) model.max_disparity = a.maxdisp;
    if (given.displacement->count()) model.refinement.displacement = a.displacement;
    if (given.channel_scale->count()) model.aggregation.toy_scale_factor = a.channel_scale;
    model.validate();

    LrSchedule first{a.lr, a.milestones, 0.5, 1};
    SwitchSchedule schedule = SwitchSchedule::parse(a.phases, first);
    std::vector<StereoSample> data = load_manifest_samples(a.manifest, model.max_disparity);
    if (data.empty()) {
        throw ConfigError("manifest " + a.manifest + " lists no samples");
    }

    fs::path dir(a.out);
    fs::create_directories(dir);
    std::ofstream log_file(dir / "train.log");
    if (!log_file) {
        throw IoError("cannot write " + (dir / "train.log").string());
    }
    TeeBuf tee(log_file.rdbuf(), a.quiet ? nullptr : out.rdbuf());
    std::ostream log(&tee);

    TrainOptions opt;
    opt.batch_size = a.batch_size;
    opt.seed = a.seed;
    opt.max_iterations = a.iterations;
    opt.checkpoint_dir = dir;
    opt.log = &log;
    if (a.augment) {
        opt.augment = AugmentConfig{};
        opt.augment->seed = a.seed;
    }
    StereoNet net(model, a.seed);
    Trainer trainer(net, default_loss_config(model), opt);
    if (!a.resume.empty()) {
        trainer.resume(a.resume);
        log << "# resumed from " << a.resume << " at epoch " << trainer.progress().completed_epochs << '\n';
    }
    auto records = trainer.run(data, schedule);
    trainer.save(dir / "final.ckpt");
    log.flush();
    for (const auto& r : records) {
        if (!std::isfinite(r.loss)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(r.iteration));
        }
    }
    out << "trained " << records.size() << " iterations; checkpoint " << (dir / "final.ckpt").string() << '\n';
    return kOk;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, predictions, manifest, region = "all", csv, pred_dir, activation;
    int maxdisp = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    if (a.checkpoint.empty() == a.predictions.empty()) {
        throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
    }
    const Region region = parse_region(a.region);
    LoadedModel model;
    int max_disparity = a.maxdisp;
    if (!a.checkpoint.empty()) {
        model = load_model(a.checkpoint);
        if (!a.activation.empty()) model.activation = parse_activation(a.activation);
        if (max_disparity == 0) max_disparity = model.net->config().max_disparity;
    }
    if (max_disparity <= 0) {
        throw ConfigError("--maxdisp is required with --predictions");
    }
    const auto entries = read_manifest(a.manifest);

    std::ofstream csv_file;
    if (!a.csv.empty()) {
        csv_file.open(a.csv);
        if (!csv_file) throw IoError("cannot write " + a.csv);
    }
    std::ostream& csv_stream = a.csv.empty() ? out : csv_file;
    MetricsCsv csv(csv_stream);
    MetricAccumulator total;
    int failures = 0;
    for (size_t i = 0; i < entries.size(); ++i) {
        const std::string name = sample_name(i);
        try {
            StereoSample s = load_sample(entries[i], max_disparity);
            Tensor pred = model.net ? predict(model, s.left, s.right)
                                    : read_pfm(fs::path(a.predictions) / (name + ".pfm")).data;
            if (pred.shape() != s.gt_disparity.shape()) {
                throw ShapeError("prediction " + shape_str(pred.shape()) + " vs ground truth " +
                                 shape_str(s.gt_disparity.shape()));
            }
            if (!a.pred_dir.empty()) write_prediction(a.pred_dir, name, pred, max_disparity);
            Mask mask = s.valid_mask;
            if (region == Region::noc) {
                mask = s.noc_mask ? (*s.noc_mask & s.valid_mask) : Mask(s.height(), s.width(), false);
            }
            MetricReport r = compute_metrics(pred, s.gt_disparity, mask, region);
            csv.row(name, r);
            total.add(pred, s.gt_disparity, mask);
        } catch (const std::exception& e) {
            ++failures;
            err << "sample " << name << " (" << entries[i].left.string() << "): " << e.what() << '\n';
        }
    }
    MetricReport agg = total.report(region);
    csv.row("aggregate", agg);
    if (!a.csv.empty()) {
        out << "aggregate " << to_string(region) << " pixels=" << agg.pixel_count;
        if (agg.defined()) out << " epe=" << agg.epe << " err3=" << agg.threshold_err[2] << " d1=" << agg.d1;
        out << '\n';
    }
    return failures == 0 ? kOk : kIo;
}

// ---- infer --------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint, left, right, out, png, activation;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
    LoadedModel model = load_model(a.checkpoint);
    if (!a.activation.empty()) model.activation = parse_activation(a.activation);
    auto t0 = std::chrono::steady_clock::now();
    Tensor d = predict(model, read_image(a.left), read_image(a.right));
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_pfm(a.out, d);
    fs::path png = a.png.empty() ? fs::path(a.out).replace_extension(".png") : fs::path(a.png);
    write_disparity_png(png, d, model.net->config().max_disparity);
    out << "disparity " << d.dim(0) << "x" << d.dim(1) << " in " << std::fixed << std::setprecision(1) << ms
        << " ms -> " << a.out << ", " << png.string() << '\n';
    return kOk;
}

// ---- gradcheck ----------------------------------------------------------------

struct GradArgs {
    bool negative_control = false;
    bool list = false;
    std::string filter;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
    auto cases = gradient_suite();
    if (a.negative_control) {
        cases.push_back(corrupted_gradient_case());
    }
    if (a.list) {
        for (const auto& c : cases) out << c.name << '\n';
        return kOk;
    }
    bool all = true;
    int run_count = 0;
    out << std::left << std::setw(24) << "op" << std::setw(8) << "result" << std::setw(13) << "max_rel_err"
        << std::setw(7) << "shapes"
        << "probes\n";
    for (const auto& c : cases) {
        if (!a.filter.empty() && c.name.find(a.filter) == std::string::npos) {
            continue;
        }
        GradCaseResult r = c.run(kGradTolerance);
        ++run_count;
        all = all && r.passed;
        std::ostringstream err;
        err << std::scientific << std::setprecision(2) << r.max_rel_error;
        out << std::setw(24) << c.name << std::setw(8) << (r.passed ? "PASS" : "FAIL") << std::setw(13) << err.str()
            << std::setw(7) << r.instances << r.probes << '\n';
        out.flush();
    }
    if (run_count == 0) {
        throw ConfigError("no gradient case matches '" + a.filter + "'");
    }
    out << (all ? "all gradients match" : "gradient mismatch") << " (tolerance " << kGradTolerance << ")\n";
    return all ? kOk : kCheckFailed;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Differentiable stereo matching toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate random-dot stereo pairs and a manifest");
    g->add_option("--count", gen.count, "Number of pairs")->capture_default_str();
    g->add_option("--size", gen.size, "Image size HxW")->capture_default_str();
    g->add_option("--maxdisp", gen.maxdisp, "Disparities are drawn from [0, maxdisp)")->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    TrainFlags tf{};
    auto* t = app.add_subcommand("train", "Train a model on a manifest");
    t->add_option("--config", tr.config, "JSON config (model keys + \"training\")");
    t->add_option("--manifest", tr.manifest)->required();
    t->add_option("--out", tr.out, "Directory for checkpoints and train.log")->required();
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    tf.variant = t->add_option("--variant", tr.variant, "base | ms | msmd");
    tf.maxdisp = t->add_option("--maxdisp", tr.maxdisp);
    tf.displacement = t->add_option("--displacement", tr.displacement, "Refinement residue levels (e.g. 16, 24, 48)");
    tf.channel_scale = t->add_option("--channel-scale", tr.channel_scale, "Divisor of the 3D channel widths");
    tf.phases = t->add_option("--phases", tr.phases, "e.g. relu:20,mish:15")->capture_default_str();
    tf.lr = t->add_option("--lr", tr.lr)->capture_default_str();
    tf.milestones = t->add_option("--milestones", tr.milestones, "First-phase epochs after which lr halves")
                        ->delimiter(',');
    tf.batch_size = t->add_option("--batch-size", tr.batch_size)->capture_default_str();
    tf.seed = t->add_option("--seed", tr.seed)->capture_default_str();
    tf.iterations = t->add_option("--iterations", tr.iterations, "Stop after this many steps (0: full schedule)");
    tf.augment = t->add_flag("--augment", tr.augment, "Photometric jitter and right-image occluder");
    t->add_flag("--quiet", tr.quiet, "Only write the log file");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (or stored predictions) on a manifest");
    e->add_option("--checkpoint", ev.checkpoint);
    e->add_option("--predictions", ev.predictions, "Directory of <index>.pfm predictions");
    e->add_option("--manifest", ev.manifest)->required();
    e->add_option("--region", ev.region, "all | noc")->capture_default_str();
    e->add_option("--csv", ev.csv, "CSV path (default: stdout)");
    e->add_option("--pred-dir", ev.pred_dir, "Write PFM + PNG predictions here");
    e->add_option("--activation", ev.activation, "Override the checkpoint's activation");
    e->add_option("--maxdisp", ev.maxdisp);

    InferArgs in;
    auto* i = app.add_subcommand("infer", "Predict disparity for one image pair");
    i->add_option("--checkpoint", in.checkpoint)->required();
    i->add_option("--left", in.left)->required();
    i->add_option("--right", in.right)->required();
    i->add_option("--out", in.out, "PFM output")->required();
    i->add_option("--png", in.png, "Colorized PNG (default: next to --out)");
    i->add_option("--activation", in.activation);

    GradArgs ga;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
    c->add_flag("--negative-control", ga.negative_control, "Also run an op with a broken backward (must fail)");
    c->add_option("--filter", ga.filter, "Only cases whose name contains this");
    c->add_flag("--list", ga.list, "Print the registered cases without running them");

    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& ex) {
        err << ex.what() << "\n" << "run with --help for usage\n";
        return kUsage;
    }

    try {
        if (*g) return cmd_gen(gen, out);
        if (*t) return cmd_train(tr, tf, out);
        if (*e) return cmd_eval(ev, out, err);
        if (*i) return cmd_infer(in, out);
        if (*c) return cmd_gradcheck(ga, out);
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const ShapeError& ex) {
        err << "error: " << ex.what() << '\n';
        return kUsage;
    } catch (const IoError& ex) {
        err << "error: " << ex.what() << '\n';
        return kIo;
    } catch (const FormatError& ex) {
        err << "error: " << ex.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return kIo;
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << '\n';
        return kCheckFailed;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kCheckFailed;
    }
    return kUsage;
}

} // namespace stereo::cli
