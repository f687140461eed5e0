#include "stereo/autograd.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

namespace stereo {

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() { return grad_enabled; }
void GradMode::set_enabled(bool on) { grad_enabled = on; }

bool BackwardContext::needs_grad(size_t i) const {
    return i < inputs_.size() && inputs_[i] && inputs_[i]->requires_grad;
}

Buffer* BackwardContext::accumulator(size_t i) {
    if (!needs_grad(i)) {
        return nullptr;
    }
    auto& impl = inputs_[i];
    if (!impl->grad) {
        impl->grad = std::make_shared<Buffer>(impl->data->precision(), impl->data->size());
    }
    return impl->grad.get();
}

Tensor record(Tensor out, std::string name, const std::vector<Tensor>& inputs, BackwardFn fn) {
    if (!out.all_finite()) {
        throw NumericError(name + " produced non-finite values");
    }
    if (!GradMode::enabled()) {
        return out;
    }
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!any) {
        return out;
    }
    auto node = std::make_shared<Node>();
    node->name = std::move(name);
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        node->inputs.push_back(t.defined() && t.requires_grad() ? t.impl() : nullptr);
    }
    node->fn = std::move(fn);
    out.impl()->grad_fn = std::move(node);
    out.impl()->requires_grad = true;
    return out;
}

OpGraph OpGraph::trace(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw GraphError("backward needs a scalar loss");
    }
    if (!loss.requires_grad()) {
        throw GraphError("loss does not depend on any tensor that requires grad");
    }
    OpGraph g;
    g.loss_ = loss;

    // Iterative post-order DFS; order_ ends up inputs-before-outputs.
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, size_t>> stack;
    stack.emplace_back(loss.impl(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        const auto& node = impl->grad_fn;
        if (node && next < node->inputs.size()) {
            auto child = node->inputs[next++];
            if (child && child->grad_fn && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
            continue;
        }
        if (node) {
            g.order_.push_back(impl);
        }
        stack.pop_back();
    }
    return g;
}

std::vector<std::string> OpGraph::op_names() const {
    std::vector<std::string> names;
    names.reserve(order_.size());
    for (const auto& impl : order_) {
        names.push_back(impl->grad_fn->name);
    }
    return names;
}

void OpGraph::backward() {
    for (const auto& impl : order_) {
        if (impl->grad_fn->consumed) {
            throw GraphError("backward called twice on the same graph (op '" +
                             impl->grad_fn->name + "')");
        }
    }
    auto root = loss_.impl();
    root->grad = std::make_shared<Buffer>(root->data->precision(), 1);
    dispatch(root->data->precision(), [&]<class T>() { root->grad->span<T>()[0] = T(1); });

    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        auto& impl = *it;
        Node& node = *impl->grad_fn;
        if (impl->grad) {
            BackwardContext ctx(*impl->grad, node.inputs);
            node.fn(ctx);
        }
        node.consumed = true;
        node.fn = nullptr;
        node.inputs.clear();
        // Non-leaf gradients are only needed transiently.
        impl->grad.reset();
    }
}

void backward(const Tensor& loss) {
    OpGraph::trace(loss).backward();
}

} // namespace stereo
