#include "stereo/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace stereo {

Tensor ParameterSet::add(const std::string& name, Tensor value, TensorRole role) {
    if (contains(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    entries_.push_back({name, value, role});
    return value;
}

Tensor ParameterSet::add_parameter(const std::string& name, Shape shape, Init init, int64_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape), precision_);
    switch (init) {
    case Init::zeros:
        break;
    case Init::ones:
        t = Tensor::full(t.shape(), 1.0, precision_);
        break;
    case Init::fan_in_uniform: {
        double bound = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (int64_t i = 0; i < t.numel(); ++i) {
            t.set_flat(i, dist(rng_));
        }
        break;
    }
    }
    t.set_requires_grad(true);
    return add(name, t, TensorRole::parameter);
}

Tensor ParameterSet::add_buffer(const std::string& name, Shape shape, double fill) {
    return add(name, Tensor::full(std::move(shape), fill, precision_), TensorRole::buffer);
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const NamedTensor& e) { return e.name == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) {
            return e.value;
        }
    }
    throw ConfigError("no parameter named '" + name + "'");
}

std::vector<NamedTensor> ParameterSet::parameters() const {
    std::vector<NamedTensor> out;
    for (const auto& e : entries_) {
        if (e.role == TensorRole::parameter) {
            out.push_back(e);
        }
    }
    return out;
}

int64_t ParameterSet::parameter_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) {
        if (e.role == TensorRole::parameter) {
            n += e.value.numel();
        }
    }
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) {
        Tensor t = e.value;
        t.zero_grad();
    }
}

} // namespace stereo
