#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stereo/tensor.hpp"

namespace stereo {

using OpClosure = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
    double step = 1e-6;
    // Caps the number of finite-difference probes per input; <= 0 checks every element.
    int64_t max_elements_per_input = 0;
    uint64_t seed = 0x5eed;
};

struct GradCheckReport {
    // Max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) per input.
    std::vector<double> max_rel_error;
    std::vector<int64_t> probes;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares reverse-mode gradients of <r, op(inputs)> (r a fixed random
// projection) with central finite differences. Inputs must be double
// precision. Never throws on a mismatch; the report carries the verdict.
GradCheckReport check_gradients(const OpClosure& op, const std::vector<Tensor>& inputs,
                                double tolerance, const GradCheckOptions& options = {});

// Same comparison for tensors the closure reads directly (model parameters):
// each probed element is perturbed in place and restored afterwards.
GradCheckReport check_parameter_gradients(const std::function<Tensor()>& op, const std::vector<Tensor>& parameters,
                                          double tolerance, const GradCheckOptions& options = {});

} // namespace stereo
