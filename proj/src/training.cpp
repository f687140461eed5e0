#include "stereo/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "stereo/config.hpp"
#include "stereo/errors.hpp"

namespace stereo {

void LossConfig::validate() const {
    if (taps.empty() || taps.size() != weights.size()) {
        throw ConfigError("loss config needs one weight per tap (" + std::to_string(taps.size()) + " taps, " +
                          std::to_string(weights.size()) + " weights)");
    }
    for (double w : weights) {
        if (!(w > 0.0)) {
            throw ConfigError("tap weights must be positive");
        }
    }
}

LossConfig default_loss_config(const ModelConfig& model) {
    LossConfig cfg;
    cfg.taps = model.tap_names();
    std::vector<double> tail{0.5, 0.5, 0.7, 1.0};
    if (model.aggregation.hourglass_count != 3) {
        throw ConfigError("default tap weights assume 3 hourglasses; provide weights explicitly");
    }
    if (model.variant == Variant::msmd) {
        tail.push_back(1.3);
    }
    if (cfg.taps.size() == tail.size() + 1) {
        tail.insert(tail.begin(), 0.5);
    }
    cfg.weights = tail;
    cfg.validate();
    return cfg;
}

Tensor loss_mask(const Tensor& gt, const std::vector<Mask>& valid, int max_disparity, Precision precision) {
    if (gt.ndim() != 3 || static_cast<int64_t>(valid.size()) != gt.dim(0)) {
        throw ShapeError("loss_mask: gt " + shape_str(gt.shape()) + " with " + std::to_string(valid.size()) +
                         " masks");
    }
    const int64_t plane = gt.dim(1) * gt.dim(2);
    std::vector<double> m(static_cast<size_t>(gt.numel()));
    for (int64_t n = 0; n < gt.dim(0); ++n) {
        const Mask& v = valid[static_cast<size_t>(n)];
        if (v.height != gt.dim(1) || v.width != gt.dim(2)) {
            throw ShapeError("loss_mask: mask extents differ from ground truth");
        }
        for (int64_t i = 0; i < plane; ++i) {
            double d = gt.flat(n * plane + i);
            bool use = v.bits[static_cast<size_t>(i)] && std::isfinite(d) && d >= 0.0 && d < max_disparity;
            m[static_cast<size_t>(n * plane + i)] = use ? 1.0 : 0.0;
        }
    }
    return Tensor::from_values(gt.shape(), m, precision);
}

Tensor total_loss(const std::vector<SupervisionTap>& taps, const Tensor& gt, const Tensor& mask,
                  const LossConfig& cfg) {
    cfg.validate();
    if (taps.size() != cfg.taps.size()) {
        throw ConfigError("loss expects " + std::to_string(cfg.taps.size()) + " taps, got " +
                          std::to_string(taps.size()));
    }
    const double count = sum(mask).item();
    if (count <= 0.0) {
        throw EmptyMaskError("no valid ground-truth pixels in batch");
    }
    // Invalid pixels may hold anything (inf, nan); zero them before they meet the mask.
    std::vector<double> target = gt.to_vector();
    for (size_t i = 0; i < target.size(); ++i) {
        if (mask.flat(static_cast<int64_t>(i)) == 0.0) {
            target[i] = 0.0;
        }
    }
    Tensor total;
    for (size_t i = 0; i < taps.size(); ++i) {
        if (taps[i].name != cfg.taps[i]) {
            throw ConfigError("tap " + std::to_string(i) + " is '" + taps[i].name + "', loss config expects '" +
                              cfg.taps[i] + "'");
        }
        const Tensor& d = taps[i].disparity;
        if (d.shape() != gt.shape()) {
            throw ShapeError("tap '" + taps[i].name + "' " + shape_str(d.shape()) + " vs gt " + shape_str(gt.shape()));
        }
        Tensor t = Tensor::from_values(gt.shape(), target, d.precision());
        Tensor m = mask.precision() == d.precision() ? mask : mask.to(d.precision());
        Tensor term = scale(sum(mul(smooth_l1(sub(d, t)), m)), cfg.weights[i] / count);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Adam::Adam(const ParameterSet& params, double b1, double b2, double eps)
    : beta1(b1), beta2(b2), epsilon(eps), params_(params.parameters()) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.value.shape(), p.value.precision()));
        v_.push_back(Tensor::zeros(p.value.shape(), p.value.precision()));
    }
}

void Adam::step(double lr) {
    for (const auto& p : params_) {
        if (!p.value.has_grad()) {
            throw GraphError("parameter '" + p.name + "' has no gradient");
        }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor value = params_[i].value;
        Tensor grad = value.grad();
        dispatch(value.precision(), [&]<class T>() {
            auto w = value.mutable_data<T>();
            auto g = grad.data<T>();
            auto m = m_[i].mutable_data<T>();
            auto v = v_[i].mutable_data<T>();
            for (size_t k = 0; k < w.size(); ++k) {
                m[k] = static_cast<T>(beta1 * m[k] + (1.0 - beta1) * g[k]);
                v[k] = static_cast<T>(beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]);
                const double mhat = m[k] / c1;
                const double vhat = v[k] / c2;
                w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + epsilon));
            }
        });
    }
}

std::vector<CheckpointEntry> Adam::state() const {
    std::vector<CheckpointEntry> out;
    auto add_entry = [&out](const std::string& name, const Tensor& t) {
        auto v = t.to_vector();
        out.push_back({name, t.shape(), std::vector<float>(v.begin(), v.end())});
    };
    for (size_t i = 0; i < params_.size(); ++i) {
        add_entry("m/" + params_[i].name, m_[i]);
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        add_entry("v/" + params_[i].name, v_[i]);
    }
    return out;
}

void Adam::load_state(const std::vector<CheckpointEntry>& entries, int64_t step) {
    if (entries.size() != 2 * params_.size()) {
        throw FormatError("optimizer state has " + std::to_string(entries.size()) + " entries, expected " +
                          std::to_string(2 * params_.size()));
    }
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& p = params_[i % params_.size()];
        const std::string expected = (i < params_.size() ? "m/" : "v/") + p.name;
        Tensor& target = i < params_.size() ? m_[i] : v_[i - params_.size()];
        if (entries[i].name != expected || entries[i].shape != target.shape()) {
            throw FormatError("optimizer state entry '" + entries[i].name + "' does not match '" + expected + "'");
        }
        for (size_t k = 0; k < entries[i].values.size(); ++k) {
            target.set_flat(static_cast<int64_t>(k), entries[i].values[k]);
        }
    }
    step_ = step;
}

double LrSchedule::lr_at(int epoch) const {
    if (epoch < 1 || epoch > epochs) {
        throw ConfigError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(epochs) + "]");
    }
    auto halvings = std::count_if(milestones.begin(), milestones.end(), [epoch](int m) { return m < epoch; });
    return base * std::pow(factor, static_cast<double>(halvings));
}

SwitchSchedule SwitchSchedule::standard() {
    LrSchedule relu{1e-3, {12, 16, 18}, 0.5, 20};
    LrSchedule mish{relu.lr_at(20), {}, 0.5, 15};
    return {{{Activation::relu, relu}, {Activation::mish, mish}}};
}

SwitchSchedule SwitchSchedule::parse(const std::string& spec, const LrSchedule& first) {
    SwitchSchedule s;
    std::stringstream in(spec);
    for (std::string item; std::getline(in, item, ',');) {
        auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("phase '" + item + "' must look like activation:epochs");
        }
        Phase p;
        p.activation = parse_activation(item.substr(0, colon));
        int epochs = 0;
        try {
            epochs = std::stoi(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad epoch count in phase '" + item + "'");
        }
        if (s.phases.empty()) {
            p.schedule = first;
        } else {
            const auto& prev = s.phases.back().schedule;
            p.schedule = LrSchedule{prev.lr_at(prev.epochs), {}, prev.factor, 0};
        }
        p.schedule.epochs = epochs;
        s.phases.push_back(p);
    }
    s.validate();
    return s;
}

int SwitchSchedule::total_epochs() const {
    int total = 0;
    for (const auto& p : phases) {
        total += p.schedule.epochs;
    }
    return total;
}

void SwitchSchedule::validate() const {
    if (phases.empty()) {
        throw ConfigError("schedule has no phases");
    }
    for (const auto& p : phases) {
        if (p.schedule.epochs < 1) {
            throw ConfigError("every phase needs at least one epoch");
        }
        if (!(p.schedule.base >= 0.0)) {
            throw ConfigError("learning rate must be non-negative");
        }
    }
}

Batch make_batch(const std::vector<const StereoSample*>& samples) {
    if (samples.empty()) {
        throw ConfigError("empty batch");
    }
    std::vector<Tensor> l, r, g;
    Batch b;
    const Shape shape = samples.front()->left.shape();
    for (const StereoSample* s : samples) {
        if (s->left.shape() != shape) {
            throw ShapeError("batch samples differ in size: " + shape_str(s->left.shape()) + " vs " +
                             shape_str(shape));
        }
        l.push_back(reshape(s->left, {1, shape[0], shape[1], shape[2]}));
        r.push_back(reshape(s->right, {1, shape[0], shape[1], shape[2]}));
        g.push_back(reshape(s->gt_disparity, {1, shape[1], shape[2]}));
        b.valid.push_back(s->valid_mask);
    }
    NoGradGuard guard;
    b.left = concat(l, 0);
    b.right = concat(r, 0);
    b.gt = g.size() == 1 ? g.front() : concat(g, 0);
    return b;
}

std::string format_log_line(const IterationRecord& r) {
    std::ostringstream os;
    os.precision(6);
    os << r.epoch << ' ' << r.iteration << ' ' << r.loss << ' ' << r.epe << ' ' << r.lr << ' '
       << to_string(r.activation);
    return os.str();
}

Trainer::Trainer(StereoNet& net, LossConfig loss, TrainOptions options)
    : net_(net), loss_(std::move(loss)), options_(std::move(options)), adam_(net.parameters()) {
    loss_.validate();
    if (options_.batch_size < 1) {
        throw ConfigError("batch size must be at least 1");
    }
}

IterationRecord Trainer::step(const Batch& batch, double lr, Activation activation) {
    const ForwardContext ctx{activation, true};
    ModelOutput out = net_.forward(batch.left, batch.right, ctx);
    Tensor mask = loss_mask(batch.gt, batch.valid, net_.config().max_disparity, net_.config().precision);
    Tensor loss = total_loss(out.taps, batch.gt, mask, loss_);

    IterationRecord rec;
    rec.loss = loss.item();
    rec.lr = lr;
    rec.activation = activation;
    progress_.activation = activation;
    {
        const Tensor& final = out.final_disparity();
        double err = 0.0, count = 0.0;
        for (int64_t i = 0; i < final.numel(); ++i) {
            if (mask.flat(i) != 0.0) {
                err += std::abs(final.flat(i) - batch.gt.flat(i));
                count += 1.0;
            }
        }
        rec.epe = err / count;
    }
    backward(loss);
    adam_.step(lr);
    net_.parameters().zero_grad();
    rec.iteration = ++progress_.iterations;
    return rec;
}

std::vector<IterationRecord> Trainer::run(const std::vector<StereoSample>& data, const SwitchSchedule& schedule) {
    schedule.validate();
    if (data.empty()) {
        throw ConfigError("training set is empty");
    }
    if (options_.checkpoint_dir.empty() == false) {
        std::filesystem::create_directories(options_.checkpoint_dir);
    }
    if (options_.log) {
        *options_.log << "# model " << to_json(net_.config()).dump() << '\n';
        *options_.log << "# train batch_size=" << options_.batch_size << " seed=" << options_.seed
                      << " samples=" << data.size() << " augment=" << (options_.augment ? "on" : "off")
                      << " max_iterations=" << options_.max_iterations << '\n';
        *options_.log << "# schedule";
        for (const auto& p : schedule.phases) {
            *options_.log << ' ' << to_string(p.activation) << ':' << p.schedule.epochs << "@" << p.schedule.base;
        }
        *options_.log << "\n# epoch iter loss epe lr activation\n";
    }
    std::vector<IterationRecord> records;
    int phase_start = 0;
    for (size_t ph = 0; ph < schedule.phases.size(); ++ph) {
        const Phase& phase = schedule.phases[ph];
        for (int local = 1; local <= phase.schedule.epochs; ++local) {
            const int epoch = phase_start + local;
            if (epoch <= progress_.completed_epochs) {
                continue;
            }
            const double lr = phase.schedule.lr_at(local);
            std::vector<size_t> order(data.size());
            std::iota(order.begin(), order.end(), size_t{0});
            if (options_.shuffle) {
                std::mt19937_64 rng(options_.seed * 1000003ULL + static_cast<uint64_t>(epoch));
                std::shuffle(order.begin(), order.end(), rng);
            }
            for (size_t first = 0; first < order.size(); first += static_cast<size_t>(options_.batch_size)) {
                std::vector<StereoSample> augmented;
                std::vector<const StereoSample*> members;
                const size_t last = std::min(order.size(), first + static_cast<size_t>(options_.batch_size));
                for (size_t k = first; k < last; ++k) {
                    if (options_.augment) {
                        AugmentConfig a = *options_.augment;
                        a.seed = a.seed ^ (options_.seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch) * 65537ULL +
                                           order[k]);
                        augmented.push_back(augment(data[order[k]], a));
                    }
                }
                for (size_t k = first; k < last; ++k) {
                    members.push_back(options_.augment ? &augmented[k - first] : &data[order[k]]);
                }
                try {
                    IterationRecord rec = step(make_batch(members), lr, phase.activation);
                    rec.epoch = epoch;
                    if (options_.log) {
                        *options_.log << format_log_line(rec) << '\n';
                    }
                    records.push_back(rec);
                } catch (const EmptyMaskError& e) {
                    if (options_.log) {
                        *options_.log << "# skipped batch at epoch " << epoch << ": " << e.what() << '\n';
                    }
                }
                if (options_.max_iterations > 0 && progress_.iterations >= options_.max_iterations) {
                    return records;
                }
            }
            progress_.completed_epochs = epoch;
            if (!options_.checkpoint_dir.empty()) {
                save(options_.checkpoint_dir / "latest.ckpt");
                if (local == phase.schedule.epochs) {
                    save(options_.checkpoint_dir /
                         ("phase" + std::to_string(ph + 1) + "_" + to_string(phase.activation) + ".ckpt"));
                }
            }
        }
        phase_start += phase.schedule.epochs;
    }
    return records;
}

void Trainer::save(const std::filesystem::path& path) const {
    save_checkpoint(path, snapshot(net_.parameters()));
    save_checkpoint(path.string() + ".adam", adam_.state());
    nlohmann::json side{{"version", 1},
                        {"model", to_json(net_.config())},
                        {"completed_epochs", progress_.completed_epochs},
                        {"iterations", progress_.iterations},
                        {"optimizer_step", adam_.step_count()},
                        {"activation", to_string(progress_.activation)}};
    std::ofstream f(path.string() + ".json");
    if (!f) {
        throw IoError("cannot write " + path.string() + ".json");
    }
    f << side.dump(2) << '\n';
}

void Trainer::resume(const std::filesystem::path& path) {
    std::ifstream f(path.string() + ".json");
    if (!f) {
        throw IoError("cannot open " + path.string() + ".json");
    }
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint sidecar: ") + e.what());
    }
    restore(net_.parameters(), load_checkpoint(path), true);
    adam_.load_state(load_checkpoint(path.string() + ".adam"), side.at("optimizer_step").get<int64_t>());
    progress_.completed_epochs = side.at("completed_epochs").get<int>();
    progress_.iterations = side.at("iterations").get<int64_t>();
    progress_.activation = parse_activation(side.value("activation", std::string("relu")));
}

} // namespace stereo
