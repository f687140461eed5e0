#include "stereo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stereo/autograd.hpp"
#include "stereo/ops.hpp"

namespace stereo {

namespace {

double projected(const Tensor& out, const std::vector<double>& r) {
    auto v = out.data<double>();
    double acc = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        acc += v[i] * r[i];
    }
    return acc;
}

} // namespace

GradCheckReport check_gradients(const OpClosure& op, const std::vector<Tensor>& inputs,
                                double tolerance, const GradCheckOptions& options) {
    for (const Tensor& t : inputs) {
        if (t.precision() != Precision::f64) {
            throw ConfigError("check_gradients needs double precision inputs");
        }
    }
    GradCheckReport report;
    report.tolerance = tolerance;
    std::mt19937_64 rng(options.seed);

    // Analytic pass on fresh leaves.
    std::vector<Tensor> leaves;
    for (const Tensor& t : inputs) {
        Tensor leaf = t.clone();
        leaf.set_requires_grad(true);
        leaves.push_back(leaf);
    }
    Tensor out = op(leaves);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> r(static_cast<size_t>(out.numel()));
    for (double& v : r) {
        v = unit(rng);
    }
    Tensor loss = sum(mul(out, Tensor::from_values(out.shape(), r, Precision::f64)));
    backward(loss);

    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor analytic = leaves[k].grad();
        const int64_t n = inputs[k].numel();
        std::vector<int64_t> probe(static_cast<size_t>(n));
        std::iota(probe.begin(), probe.end(), 0);
        if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
            std::shuffle(probe.begin(), probe.end(), rng);
            probe.resize(static_cast<size_t>(options.max_elements_per_input));
        }
        double worst = 0.0;
        for (int64_t idx : probe) {
            auto eval_at = [&](double delta) {
                NoGradGuard guard;
                std::vector<Tensor> shifted;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    shifted.push_back(inputs[j].clone());
                }
                shifted[k].set_flat(idx, inputs[k].flat(idx) + delta);
                return projected(op(shifted), r);
            };
            double numeric = (eval_at(options.step) - eval_at(-options.step)) / (2.0 * options.step);
            double a = analytic.flat(idx);
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.max_rel_error.push_back(worst);
        report.probes.push_back(static_cast<int64_t>(probe.size()));
    }
    report.passed = std::all_of(report.max_rel_error.begin(), report.max_rel_error.end(),
                                [&](double e) { return e < tolerance; });
    return report;
}

GradCheckReport check_parameter_gradients(const std::function<Tensor()>& op, const std::vector<Tensor>& parameters,
                                          double tolerance, const GradCheckOptions& options) {
    for (const Tensor& t : parameters) {
        if (t.precision() != Precision::f64 || !t.requires_grad()) {
            throw ConfigError("check_parameter_gradients needs double precision leaves that require grad");
        }
    }
    GradCheckReport report;
    report.tolerance = tolerance;
    std::mt19937_64 rng(options.seed);
    for (Tensor p : parameters) {
        p.zero_grad();
    }
    Tensor out = op();
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> r(static_cast<size_t>(out.numel()));
    for (double& v : r) {
        v = unit(rng);
    }
    backward(sum(mul(out, Tensor::from_values(out.shape(), r, Precision::f64))));

    for (Tensor p : parameters) {
        Tensor analytic = p.grad().clone();
        const int64_t n = p.numel();
        std::vector<int64_t> probe(static_cast<size_t>(n));
        std::iota(probe.begin(), probe.end(), 0);
        if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
            std::shuffle(probe.begin(), probe.end(), rng);
            probe.resize(static_cast<size_t>(options.max_elements_per_input));
        }
        double worst = 0.0;
        for (int64_t idx : probe) {
            const double original = p.flat(idx);
            auto eval_at = [&](double delta) {
                NoGradGuard guard;
                p.set_flat(idx, original + delta);
                return projected(op(), r);
            };
            double numeric = (eval_at(options.step) - eval_at(-options.step)) / (2.0 * options.step);
            p.set_flat(idx, original);
            double a = analytic.flat(idx);
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        report.max_rel_error.push_back(worst);
        report.probes.push_back(static_cast<int64_t>(probe.size()));
    }
    for (Tensor p : parameters) {
        p.zero_grad();
    }
    report.passed = std::all_of(report.max_rel_error.begin(), report.max_rel_error.end(),
                                [&](double e) { return e < tolerance; });
    return report;
}

} // namespace stereo
