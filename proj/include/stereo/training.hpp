#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stereo/checkpoint.hpp"
#include "stereo/dataset.hpp"
#include "stereo/model.hpp"

namespace stereo {

// A sample (or batch) whose loss mask selects no pixels.
class EmptyMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossConfig {
    std::vector<std::string> taps;
    std::vector<double> weights;

    void validate() const;
};

// Tap weights for a model: four taps 0.5, 0.5, 0.7, 1.0; refinement adds 1.3;
// an entry tap adds one more 0.5 in front.
LossConfig default_loss_config(const ModelConfig& model);

// Pixels that take part in the loss: valid, finite and 0 <= gt < max_disparity.
Tensor loss_mask(const Tensor& gt, const std::vector<Mask>& valid, int max_disparity, Precision precision);

// sum_i w_i * mean_{mask} smooth_l1(tap_i - gt). gt [N, H, W]. Throws EmptyMaskError
// when the mask is empty.
Tensor total_loss(const std::vector<SupervisionTap>& taps, const Tensor& gt, const Tensor& mask,
                  const LossConfig& cfg);

class Adam {
public:
    Adam() = default;
    explicit Adam(const ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    // Bias-corrected update of every trainable parameter. Throws GraphError when a
    // parameter has no gradient.
    void step(double lr);

    int64_t step_count() const { return step_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

    std::vector<CheckpointEntry> state() const;
    void load_state(const std::vector<CheckpointEntry>& entries, int64_t step);

    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

private:
    std::vector<NamedTensor> params_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

// Piecewise-constant rate: base * factor^(number of milestones < epoch).
struct LrSchedule {
    double base = 1e-3;
    std::vector<int> milestones{12, 16, 18};
    double factor = 0.5;
    int epochs = 20;

    // epoch is 1-based; throws ConfigError outside [1, epochs].
    double lr_at(int epoch) const;
};

struct Phase {
    Activation activation = Activation::relu;
    LrSchedule schedule;
};

struct SwitchSchedule {
    std::vector<Phase> phases;

    // relu for 20 epochs (1e-3 halved after 12, 16, 18) then mish for 15 epochs
    // continuing at the last relu rate.
    static SwitchSchedule standard();
    // "relu:20,mish:15"; later phases continue at the previous phase's final rate.
    static SwitchSchedule parse(const std::string& spec, const LrSchedule& first);
    int total_epochs() const;
    void validate() const;
};

struct Batch {
    Tensor left, right; // [N, 3, H, W]
    Tensor gt;          // [N, H, W]
    std::vector<Mask> valid;
};

Batch make_batch(const std::vector<const StereoSample*>& samples);

struct IterationRecord {
    int epoch = 0; // global, 1-based
    int64_t iteration = 0;
    double loss = 0.0;
    double epe = 0.0; // of the final tap over the loss mask
    double lr = 0.0;
    Activation activation = Activation::relu;
};

std::string format_log_line(const IterationRecord& r);

struct TrainOptions {
    int batch_size = 1;
    uint64_t seed = 0;
    std::optional<AugmentConfig> augment;
    bool shuffle = true;
    int64_t max_iterations = 0; // 0: run every epoch of the schedule
    std::filesystem::path checkpoint_dir; // empty: no checkpoints
    std::ostream* log = nullptr;
};

struct TrainProgress {
    int completed_epochs = 0;
    int64_t iterations = 0;
    Activation activation = Activation::relu; // of the last optimizer step
};

class Trainer {
public:
    Trainer(StereoNet& net, LossConfig loss, TrainOptions options);

    // One optimizer step on a batch.
    IterationRecord step(const Batch& batch, double lr, Activation activation);

    // Runs (or resumes) the schedule over `data`. Writes a checkpoint at every
    // phase boundary and after every epoch ("latest").
    std::vector<IterationRecord> run(const std::vector<StereoSample>& data, const SwitchSchedule& schedule);

    // Model checkpoint at `path`, optimizer moments at `path`.adam, progress in `path`.json.
    void save(const std::filesystem::path& path) const;
    void resume(const std::filesystem::path& path);

    const TrainProgress& progress() const { return progress_; }
    Adam& optimizer() { return adam_; }

private:
    StereoNet& net_;
    LossConfig loss_;
    TrainOptions options_;
    Adam adam_;
    TrainProgress progress_;
};

} // namespace stereo
