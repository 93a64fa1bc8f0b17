#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace csi::grad {

// Dimension list of a dense row-major tensor. Empty shape = scalar.
using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

// Dense real tensor, 64-bit scalars, row-major.
//
// The validating constructor rejects NaN/Inf; it is the entry point for
// user-supplied data (graph inputs, dataset payloads). Internally produced
// tensors use zeros() and are checked by the graph evaluator instead.
class Tensor {
public:
    Tensor() = default;

    // Zero-filled tensor of the given shape.
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    // Validates product(shape) == data.size() and all entries finite.
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    int dim(std::size_t i) const { return shape_[i]; }
    std::size_t rank() const { return shape_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_eq(shape_, other.shape_); }

    // True if every entry is finite.
    bool all_finite() const;

    double l2_norm() const;
    double sum() const;
    double max_abs() const;

    // In-place y += alpha * x (shapes must match).
    void add_scaled(const Tensor& x, double alpha);
    void scale(double alpha);
    void fill(double value);

private:
    Shape shape_;
    std::vector<double> data_;
};

// Flat index helpers for the common ranks used by the models.
inline std::size_t idx3(int d1, int d2, int i0, int i1, int i2) {
    return (static_cast<std::size_t>(i0) * d1 + i1) * d2 + i2;
}
inline std::size_t idx2(int d1, int i0, int i1) {
    return static_cast<std::size_t>(i0) * d1 + i1;
}

} // namespace csi::grad
