#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op records a Node holding its value and a closure that pushes the
// node's gradient into its parents. Nodes are only recorded when at least one
// input requires a gradient and recording is enabled (see NoGradGuard).

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "cfgan/tensor.hpp"

namespace cfgan {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Lazily allocated gradient buffer, zero-initialised.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    std::int64_t numel() const { return node_->value.numel(); }
    double item() const { return node_->value.item(); }

    bool defined() const { return static_cast<bool>(node_); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    // Gradient, or zeros of the value shape when none has been accumulated.
    Tensor grad() const;
    void zero_grad() { node_->grad = Tensor(); }

    // New leaf sharing no history with this one.
    Var detach() const { return Var(node_->value, false); }

    // Backpropagate from a scalar; seeds d(self)/d(self) = 1.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

using Rng = std::mt19937_64;

namespace ops {

// elementwise, identical shapes
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var gelu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
// Gradient flows only where lo < x < hi.
Var clamp(const Var& x, double lo, double hi);

Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);
// out[i] = x[index[i]]; gradient is scattered back (indices may repeat).
Var gather(const Var& x, std::vector<std::int64_t> index, Shape out_shape);
Var permute(const Var& x, const std::vector<int>& axes);
Var concat(const std::vector<Var>& parts, int axis);
Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end);

// x [rows, in], w [out, in], b [out] or undefined.
Var linear(const Var& x, const Var& w, const Var& b);
// x [N, Cin, H, W], w [Cout, Cin, k, k], b [Cout] or undefined; square kernel.
Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride, std::int64_t padding);
// a [B, M, K] (or [B, K, M]), b [B, K, N] (or [B, N, K]).
Var batched_matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

Var upsample_nearest2x(const Var& x);
Var avg_pool2x2(const Var& x);
// [N, C, H, W] -> [N, C]
Var spatial_sum(const Var& x);
Var global_avg_pool(const Var& x);
// [N, C, H, W] -> [N, C]; the gradient goes to the first maximum of each plane.
Var global_max_pool(const Var& x);

// Along the last axis of a rank-2 tensor.
Var softmax(const Var& x);
Var log_softmax(const Var& x);
// x [N, K] -> [N], picking column index[n] of row n.
Var pick(const Var& x, const std::vector<std::int64_t>& index);
Var column(const Var& x, std::int64_t col);

// Row-wise normalisation of x [rows, D] with affine gamma, beta [D].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, Rng& rng);

// Value of `target`, gradient routed to `x` unchanged (shapes must match).
Var straight_through(const Var& x, const Tensor& target);
// rows of table [K, D] selected by index -> [index.size(), D]
Var embedding(const Var& table, const std::vector<std::int64_t>& index);

}  // namespace ops

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator*(double s, const Var& a) { return ops::scale(a, s); }
inline Var operator*(const Var& a, double s) { return ops::scale(a, s); }
inline Var operator-(const Var& a) { return ops::neg(a); }

}  // namespace cfgan
