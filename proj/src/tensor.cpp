#include "cfgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cfgan {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(values_.size()))
        throw std::invalid_argument("tensor data size " + std::to_string(values_.size()) +
                                    " does not match shape " + shape_str(shape_));
}

std::int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank())
        throw std::out_of_range("axis out of range for shape " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

double Tensor::item() const {
    if (values_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
    return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor t = *this;
    return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_numel(shape) != numel())
        throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::add_(const Tensor& other) {
    if (other.shape_ != shape_)
        throw std::invalid_argument("add_: shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

Tensor Tensor::slice_rows(std::int64_t begin, std::int64_t end) const {
    if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end)
        throw std::out_of_range("slice_rows out of range");
    const std::int64_t row = shape_[0] == 0 ? 0 : numel() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    std::vector<double> v(values_.begin() + begin * row, values_.begin() + end * row);
    return Tensor(std::move(s), std::move(v));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    Shape s = parts[0].shape();
    std::int64_t rows = 0;
    std::vector<double> v;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
            throw std::invalid_argument("concat_rows: incompatible shapes");
        rows += p.dim(0);
        v.insert(v.end(), p.values().begin(), p.values().end());
    }
    s[0] = rows;
    return Tensor(std::move(s), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cfgan
