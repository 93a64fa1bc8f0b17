#include "csi/grad/tensor.hpp"

#include <cmath>
#include <sstream>

#include "csi/error.hpp"

namespace csi::grad {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ')';
    return out.str();
}

bool shape_eq(const Shape& a, const Shape& b) {
    return a == b;
}

Tensor Tensor::zeros(Shape shape) {
    for (const int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(shape_numel(t.shape_), 0.0);
    return t;
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) {
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    for (const int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    for (const double v : data) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
    }
    shape_ = std::move(shape);
    data_ = std::move(data);
}

bool Tensor::all_finite() const {
    for (const double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (const double v : data_) s += v * v;
    return std::sqrt(s);
}

double Tensor::sum() const {
    double s = 0.0;
    for (const double v : data_) s += v;
    return s;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (const double v : data_) m = std::max(m, std::abs(v));
    return m;
}

void Tensor::add_scaled(const Tensor& x, double alpha) {
    if (!same_shape(x)) {
        throw ShapeError("add_scaled shape mismatch: " + shape_str(shape_) + " vs " + shape_str(x.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * x.data_[i];
}

void Tensor::scale(double alpha) {
    for (double& v : data_) v *= alpha;
}

void Tensor::fill(double value) {
    for (double& v : data_) v = value;
}

} // namespace csi::grad
