#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stereo/tensor.hpp"

namespace stereo {

enum class TensorRole { parameter, buffer };

struct NamedTensor {
    std::string name;
    Tensor value;
    TensorRole role = TensorRole::parameter;
};

enum class Init {
    fan_in_uniform, // U(-b, b), b = sqrt(6 / fan_in)
    zeros,
    ones,
};

// Ordered, uniquely named collection of a model's trainable parameters and
// persistent buffers (normalization running statistics).
class ParameterSet {
public:
    explicit ParameterSet(Precision precision = Precision::f32, uint64_t seed = 0)
        : precision_(precision), rng_(seed) {}

    // fan_in is only used by Init::fan_in_uniform.
    Tensor add_parameter(const std::string& name, Shape shape, Init init, int64_t fan_in = 1);
    Tensor add_buffer(const std::string& name, Shape shape, double fill);

    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;

    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::vector<NamedTensor> parameters() const;
    // Total scalar count of trainable parameters.
    int64_t parameter_count() const;

    Precision precision() const { return precision_; }
    void zero_grad();

private:
    Tensor add(const std::string& name, Tensor value, TensorRole role);

    Precision precision_;
    std::mt19937_64 rng_;
    std::vector<NamedTensor> entries_;
};

} // namespace stereo
