#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "stereo/errors.hpp"

namespace stereo {

enum class Precision { f32, f64 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Flat row-major storage of one precision.
class Buffer {
public:
    Buffer(Precision precision, size_t size);
    explicit Buffer(std::vector<float> values) : values_(std::move(values)) {}
    explicit Buffer(std::vector<double> values) : values_(std::move(values)) {}

    Precision precision() const { return values_.index() == 0 ? Precision::f32 : Precision::f64; }
    size_t size() const;

    template <class T>
    std::span<T> span() {
        return std::span<T>(std::get<std::vector<T>>(values_));
    }
    template <class T>
    std::span<const T> span() const {
        return std::span<const T>(std::get<std::vector<T>>(values_));
    }

    void fill_zero();

private:
    std::variant<std::vector<float>, std::vector<double>> values_;
};

struct Node;

struct TensorImpl {
    Shape shape;
    std::shared_ptr<Buffer> data;
    std::shared_ptr<Buffer> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

// Shared handle to a dense tensor. Copies alias the same storage; forward ops
// never write into their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor empty(Shape shape, Precision precision = Precision::f32);
    static Tensor zeros(Shape shape, Precision precision = Precision::f32);
    static Tensor full(Shape shape, double value, Precision precision = Precision::f32);
    static Tensor from_data(Shape shape, std::vector<float> values);
    static Tensor from_data(Shape shape, std::vector<double> values);
    // Converts `values` to the requested precision.
    static Tensor from_values(Shape shape, std::span<const double> values,
                              Precision precision = Precision::f32);
    static Tensor from_values(Shape shape, std::initializer_list<double> values,
                              Precision precision = Precision::f32);
    static Tensor scalar(double value, Precision precision = Precision::f32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    // Negative axes count from the back.
    int64_t dim(int axis) const;
    int64_t numel() const { return shape_numel(impl_->shape); }
    Precision precision() const { return impl_->data->precision(); }

    template <class T>
    std::span<const T> data() const {
        return std::as_const(*impl_->data).template span<T>();
    }
    // In-place access for parameter initialization and optimizer updates.
    // Never use on a tensor that a live graph still needs for backward.
    template <class T>
    std::span<T> mutable_data() {
        return impl_->data->template span<T>();
    }

    double item() const;
    double at(std::initializer_list<int64_t> index) const;
    double flat(int64_t i) const;
    void set_flat(int64_t i, double value);
    std::vector<double> to_vector() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return impl_->grad != nullptr; }
    // Gradient as a plain tensor (zeros when none was accumulated).
    Tensor grad() const;
    void zero_grad() { impl_->grad.reset(); }

    Tensor detach() const;
    Tensor clone() const;
    Tensor to(Precision precision) const;
    bool all_finite() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    const std::shared_ptr<Buffer>& buffer() const { return impl_->data; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Runs `fn.template operator()<T>()` with T = float or double.
template <class F>
decltype(auto) dispatch(Precision precision, F&& fn) {
    if (precision == Precision::f32) {
        return fn.template operator()<float>();
    }
    return fn.template operator()<double>();
}

} // namespace stereo
