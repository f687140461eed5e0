#pragma once

#include <string>
#include <vector>

#include "stereo/aggregation.hpp"
#include "stereo/features.hpp"
#include "stereo/refinement.hpp"

namespace stereo {

// base: finest volume only, no refinement. ms: all scales integrated, no
// refinement. msmd: all scales integrated plus warped-correlation refinement.
enum class Variant { base, ms, msmd };
const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::msmd;
    int max_disparity = 24;
    FeatureConfig features;
    int groups = 8;                  // group-wise correlation groups
    int64_t projected_groups = 8;    // after the 1x1x1 distribution-matching convolution
    AggregationConfig aggregation;
    RefineConfig refinement;
    Precision precision = Precision::f32;

    void validate() const;
    std::vector<std::string> tap_names() const;
};

struct ModelOutput {
    std::vector<SupervisionTap> taps; // training: all taps; eval: final aggregation tap (+ refined)
    Tensor initial;                   // [N, H, W] last aggregation tap
    Tensor refined;                   // msmd only

    const Tensor& final_disparity() const { return refined.defined() ? refined : initial; }
};

class StereoNet {
public:
    explicit StereoNet(const ModelConfig& cfg, uint64_t seed = 0);
    StereoNet(const StereoNet&) = delete;
    StereoNet& operator=(const StereoNet&) = delete;

    // Images [N, 3, H, W] or [3, H, W] in [0, 1]; H, W divisible by 32.
    ModelOutput forward(const Tensor& left, const Tensor& right, const ForwardContext& ctx) const;

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const ModelConfig& config() const { return config_; }
    Refinement& refinement() { return refinement_; }

private:
    ModelConfig config_;
    ParameterSet params_;
    FeatureExtractor features_;
    std::vector<CombinationVolume> volumes_;
    Aggregation aggregation_;
    Refinement refinement_;
};

} // namespace stereo
