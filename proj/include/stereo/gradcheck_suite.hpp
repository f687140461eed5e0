#pragma once

#include <functional>
#include <string>
#include <vector>

namespace stereo {

struct GradCaseResult {
    double max_rel_error = 0.0;
    int instances = 0; // random shapes checked
    int64_t probes = 0;
    bool passed = false;
};

struct GradCase {
    std::string name;
    std::function<GradCaseResult(double tolerance)> run;
};

inline constexpr double kGradTolerance = 1e-4;

// Every differentiable op of the library, each checked on at least three random shapes.
std::vector<GradCase> gradient_suite();

// An op whose backward is deliberately wrong; must fail.
GradCase corrupted_gradient_case();

} // namespace stereo
