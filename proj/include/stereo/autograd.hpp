#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stereo/tensor.hpp"

namespace stereo {

// Thread-local switch for graph recording.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Handed to a node's backward function: the incoming output gradient and
// lazily allocated accumulators for every input that needs a gradient.
class BackwardContext {
public:
    BackwardContext(const Buffer& grad_output, std::vector<std::shared_ptr<TensorImpl>>& inputs)
        : grad_output_(grad_output), inputs_(inputs) {}

    template <class T>
    std::span<const T> grad_output() const {
        return grad_output_.span<T>();
    }

    bool needs_grad(size_t input) const;

    // Empty span when input `i` does not require a gradient.
    template <class T>
    std::span<T> grad_input(size_t i) {
        Buffer* g = accumulator(i);
        return g ? g->span<T>() : std::span<T>();
    }

private:
    Buffer* accumulator(size_t i);

    const Buffer& grad_output_;
    std::vector<std::shared_ptr<TensorImpl>>& inputs_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

struct Node {
    std::string name;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn fn;
    bool consumed = false;
};

// Attaches a graph node to `out` when recording is on and any input requires
// a gradient. Throws NumericError if `out` holds NaN/Inf.
Tensor record(Tensor out, std::string name, const std::vector<Tensor>& inputs, BackwardFn fn);

// Topologically ordered view of the ops that produced a scalar loss.
class OpGraph {
public:
    static OpGraph trace(const Tensor& loss);

    size_t size() const { return order_.size(); }
    std::vector<std::string> op_names() const;

    // Runs every recorded op's backward once, in reverse topological order.
    // Leaf gradients accumulate; the graph cannot be replayed afterwards.
    void backward();

private:
    Tensor loss_;
    std::vector<std::shared_ptr<TensorImpl>> order_;
};

void backward(const Tensor& loss);

} // namespace stereo
