#include "stereo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace stereo {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Buffer::Buffer(Precision precision, size_t size) {
    if (precision == Precision::f32) {
        values_ = std::vector<float>(size);
    } else {
        values_ = std::vector<double>(size);
    }
}

size_t Buffer::size() const {
    return std::visit([](const auto& v) { return v.size(); }, values_);
}

void Buffer::fill_zero() {
    std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, values_);
}

namespace {

void check_shape(const Shape& shape) {
    for (int64_t e : shape) {
        if (e <= 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

Tensor make(Shape shape, std::shared_ptr<Buffer> buf) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(buf);
    return Tensor(std::move(impl));
}

} // namespace

Tensor Tensor::empty(Shape shape, Precision precision) {
    check_shape(shape);
    auto n = static_cast<size_t>(shape_numel(shape));
    return make(std::move(shape), std::make_shared<Buffer>(precision, n));
}

Tensor Tensor::zeros(Shape shape, Precision precision) {
    return empty(std::move(shape), precision);
}

Tensor Tensor::full(Shape shape, double value, Precision precision) {
    Tensor t = empty(std::move(shape), precision);
    dispatch(precision, [&]<class T>() {
        auto d = t.mutable_data<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("data length does not match shape " + shape_str(shape));
    }
    return make(std::move(shape), std::make_shared<Buffer>(std::move(values)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("data length does not match shape " + shape_str(shape));
    }
    return make(std::move(shape), std::make_shared<Buffer>(std::move(values)));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, Precision precision) {
    if (precision == Precision::f64) {
        return from_data(std::move(shape), std::vector<double>(values.begin(), values.end()));
    }
    std::vector<float> v(values.size());
    std::transform(values.begin(), values.end(), v.begin(),
                   [](double x) { return static_cast<float>(x); });
    return from_data(std::move(shape), std::move(v));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, Precision precision) {
    return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                       precision);
}

Tensor Tensor::scalar(double value, Precision precision) {
    return full({1}, value, precision);
}

int64_t Tensor::dim(int axis) const {
    int n = ndim();
    if (axis < 0) {
        axis += n;
    }
    if (axis < 0 || axis >= n) {
        throw ShapeError("axis out of range for shape " + shape_str(shape()));
    }
    return impl_->shape[static_cast<size_t>(axis)];
}

double Tensor::flat(int64_t i) const {
    return dispatch(precision(), [&]<class T>() { return static_cast<double>(data<T>()[static_cast<size_t>(i)]); });
}

void Tensor::set_flat(int64_t i, double value) {
    dispatch(precision(), [&]<class T>() { mutable_data<T>()[static_cast<size_t>(i)] = static_cast<T>(value); });
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
    }
    return flat(0);
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int>(index.size()) != ndim()) {
        throw ShapeError("index rank does not match tensor rank");
    }
    int64_t offset = 0;
    size_t axis = 0;
    for (int64_t i : index) {
        int64_t extent = impl_->shape[axis++];
        if (i < 0 || i >= extent) {
            throw ShapeError("index out of range");
        }
        offset = offset * extent + i;
    }
    return flat(offset);
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(precision(), [&]<class T>() {
        auto d = data<T>();
        return std::vector<double>(d.begin(), d.end());
    });
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (impl_->grad_fn) {
        throw GraphError("requires_grad can only be set on leaf tensors");
    }
    impl_->requires_grad = on;
    return *this;
}

Tensor Tensor::grad() const {
    Tensor g = Tensor::zeros(shape(), precision());
    if (impl_->grad) {
        *g.impl()->data = *impl_->grad;
    }
    return g;
}

Tensor Tensor::detach() const {
    return make(impl_->shape, impl_->data);
}

Tensor Tensor::clone() const {
    return make(impl_->shape, std::make_shared<Buffer>(*impl_->data));
}

Tensor Tensor::to(Precision target) const {
    if (target == precision()) {
        return clone();
    }
    std::vector<double> v = to_vector();
    return from_values(shape(), v, target);
}

bool Tensor::all_finite() const {
    return dispatch(precision(), [&]<class T>() {
        auto d = data<T>();
        return std::all_of(d.begin(), d.end(), [](T x) { return std::isfinite(x); });
    });
}

} // namespace stereo
