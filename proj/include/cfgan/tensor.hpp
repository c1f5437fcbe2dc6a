#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cfgan {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Owns its storage; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape(), 0.0); }
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(values_.size()); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> data() noexcept { return values_; }
    std::span<const double> data() const noexcept { return values_; }
    double* ptr() noexcept { return values_.data(); }
    const double* ptr() const noexcept { return values_.data(); }
    const std::vector<double>& values() const noexcept { return values_; }

    double& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }

    // rank-4 NCHW accessors
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    double item() const;

    // Same storage, new shape (numel must match).
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double v);
    void add_(const Tensor& other);  // this += other, shapes must match

    // Rows [begin, end) along axis 0.
    Tensor slice_rows(std::int64_t begin, std::int64_t end) const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

// Concatenate along axis 0.
Tensor concat_rows(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cfgan
