#include "cfgan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include "cfgan/kernels.hpp"
#include "cfgan/seed.hpp"

namespace cfgan {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

// Builds the output node; records history only when some input needs it.
Var record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& in : inputs) node->parents.push_back(in.node());
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

Var record_many(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& in : inputs) node->parents.push_back(in.node());
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

bool wants(const NodePtr& p) { return p && p->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

// Elementwise op with local derivative df(x, y) where y = f(x).
template <class F, class DF>
Var elementwise(const Var& x, F f, DF df) {
    Tensor out(x.shape());
    const auto& in = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = f(in[i]);
    return record(std::move(out), {x}, [df](Node& self) {
        auto& p = self.parents[0];
        if (!wants(p)) return;
        auto& g = p->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(p->value[i], self.value[i]);
    });
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor::zeros_like(value);
    if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (!node_) return Tensor();
    if (node_->grad.empty()) return Tensor::zeros_like(node_->value);
    return node_->grad;
}

void Var::backward() const {
    if (!node_) throw std::logic_error("backward on undefined Var");
    if (node_->value.numel() != 1) throw std::logic_error("backward requires a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Free interior gradients; leaves keep theirs.
    for (Node* n : order) {
        if (n->backward_fn) n->grad = Tensor();
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace ops {

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return record(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents)
            if (wants(p)) p->grad_buffer().add_(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().add_(self.grad);
        if (wants(self.parents[1])) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) {
            auto& g = pa->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (wants(pb)) {
            auto& g = pb->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
    return record(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) {
            auto& g = pa->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / pb->value[i];
        }
        if (wants(pb)) {
            auto& g = pb->grad_buffer();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i] * self.value[i] / pb->value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return record(std::move(out), {a}, [s](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v += s;
    return record(std::move(out), {a}, [](Node& self) { self.parents[0]->grad_buffer().add_(self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& x) {
    return elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
    return elementwise(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
    return elementwise(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
    return elementwise(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                       [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& x) {
    return elementwise(
        x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var gelu(const Var& x) {
    return elementwise(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
        [](double v, double) {
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * pdf;
        });
}

Var exp(const Var& x) {
    return elementwise(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
    return elementwise(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
    return elementwise(x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
    return elementwise(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var clamp(const Var& x, double lo, double hi) {
    return elementwise(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                       [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return record(Tensor::scalar(s), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const double up = self.grad[0];
        for (auto& v : g.data()) v += up;
    });
}

Var mean(const Var& x) {
    const auto n = x.numel();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return record(std::move(out), {x}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var gather(const Var& x, std::vector<std::int64_t> index, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size()))
        throw std::invalid_argument("gather: index count does not match output shape");
    Tensor out(std::move(out_shape));
    const auto& in = x.value();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= in.numel()) throw std::out_of_range("gather: index out of range");
        out[static_cast<std::int64_t>(i)] = in[index[i]];
    }
    return record(std::move(out), {x}, [index = std::move(index)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[static_cast<std::int64_t>(i)];
    });
}

Var permute(const Var& x, const std::vector<int>& axes) {
    const auto& in_shape = x.shape();
    const int r = static_cast<int>(in_shape.size());
    if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: wrong number of axes");
    Shape out_shape(static_cast<std::size_t>(r));
    std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    const std::int64_t n = shape_numel(out_shape);
    std::vector<std::int64_t> index(static_cast<std::size_t>(n));
    std::vector<std::int64_t> counter(static_cast<std::size_t>(r), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t src = 0;
        for (int a = 0; a < r; ++a) src += counter[a] * in_stride[axes[a]];
        index[static_cast<std::size_t>(i)] = src;
        for (int a = r - 1; a >= 0; --a) {
            if (++counter[a] < out_shape[a]) break;
            counter[a] = 0;
        }
    }
    return gather(x, std::move(index), std::move(out_shape));
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const int r = static_cast<int>(s0.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("concat: bad axis");
    std::int64_t outer = 1, inner = 1, total = 0;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (int i = axis + 1; i < r; ++i) inner *= s0[i];
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (static_cast<int>(s.size()) != r) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
        widths.push_back(s[axis] * inner);
        total += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    Tensor out(out_shape);
    const std::int64_t row = total * inner;
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(v.ptr() + o * widths[k], widths[k], out.ptr() + o * row + offset);
        offset += widths[k];
    }
    return record_many(std::move(out), parts, [widths, outer, row](Node& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            if (wants(p)) {
                auto& g = p->grad_buffer();
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t j = 0; j < widths[k]; ++j) g[o * widths[k] + j] += self.grad[o * row + off + j];
            }
            off += widths[k];
        }
    });
}

Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end) {
    Tensor out = x.value().slice_rows(begin, end);
    const std::int64_t row = x.dim(0) == 0 ? 0 : x.numel() / x.dim(0);
    return record(std::move(out), {x}, [begin, row](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[begin * row + i] += self.grad[i];
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.value().rank() != 2 || w.value().rank() != 2 || x.dim(1) != w.dim(1))
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                                    shape_str(w.shape()));
    const std::int64_t rows = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (b.defined() && b.shape() != Shape{out}) throw std::invalid_argument("linear: bias shape mismatch");
    Tensor y({rows, out});
    kernels::linear_forward(rows, in, out, x.value().data(), w.value().data(),
                            b.defined() ? b.value().data() : std::span<const double>{}, y.data());
    auto fn = [rows, in, out](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        NodePtr pb = self.parents.size() > 2 ? self.parents[2] : nullptr;
        if (wants(px)) kernels::linear_backward_input(rows, in, out, self.grad.data(), pw->value.data(),
                                                      px->grad_buffer().data());
        const bool bias_grad = wants(pb);
        if (wants(pw)) {
            kernels::linear_backward_weight(rows, in, out, px->value.data(), self.grad.data(),
                                            pw->grad_buffer().data(),
                                            bias_grad ? pb->grad_buffer().data() : std::span<double>{});
        } else if (bias_grad) {
            auto& gb = pb->grad_buffer();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t o = 0; o < out; ++o) gb[o] += self.grad[r * out + o];
        }
    };
    return b.defined() ? record(std::move(y), {x, w, b}, fn) : record(std::move(y), {x, w}, fn);
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride, std::int64_t padding) {
    if (x.value().rank() != 4 || w.value().rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3))
        throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x.shape()) + " and " +
                                    shape_str(w.shape()));
    kernels::Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding};
    if (g.out_h() <= 0 || g.out_w() <= 0) throw std::invalid_argument("conv2d: empty output");
    if (b.defined() && b.shape() != Shape{g.out_channels}) throw std::invalid_argument("conv2d: bias shape mismatch");
    Tensor y({g.batch, g.out_channels, g.out_h(), g.out_w()});
    kernels::conv2d_forward(g, x.value().data(), w.value().data(),
                            b.defined() ? b.value().data() : std::span<const double>{}, y.data());
    auto fn = [g](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        NodePtr pb = self.parents.size() > 2 ? self.parents[2] : nullptr;
        if (wants(px)) kernels::conv2d_backward_input(g, self.grad.data(), pw->value.data(), px->grad_buffer().data());
        const bool bias_grad = wants(pb);
        if (wants(pw)) {
            kernels::conv2d_backward_weight(g, px->value.data(), self.grad.data(), pw->grad_buffer().data(),
                                            bias_grad ? pb->grad_buffer().data() : std::span<double>{});
        } else if (bias_grad) {
            auto& gb = pb->grad_buffer();
            const std::int64_t hw = g.out_h() * g.out_w();
            for (std::int64_t n = 0; n < g.batch; ++n)
                for (std::int64_t o = 0; o < g.out_channels; ++o)
                    for (std::int64_t i = 0; i < hw; ++i) gb[o] += self.grad[(n * g.out_channels + o) * hw + i];
        }
    };
    return b.defined() ? record(std::move(y), {x, w, b}, fn) : record(std::move(y), {x, w}, fn);
}

Var batched_matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    if (a.value().rank() != 3 || b.value().rank() != 3 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("batched_matmul: incompatible shapes");
    const std::int64_t batch = a.dim(0);
    const std::int64_t m = trans_a ? a.dim(2) : a.dim(1);
    const std::int64_t k = trans_a ? a.dim(1) : a.dim(2);
    const std::int64_t kb = trans_b ? b.dim(2) : b.dim(1);
    const std::int64_t n = trans_b ? b.dim(1) : b.dim(2);
    if (k != kb)
        throw std::invalid_argument("batched_matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    Tensor c({batch, m, n});
    kernels::batched_matmul(batch, m, k, n, a.value().data(), trans_a, b.value().data(), trans_b, c.data());
    return record(std::move(c), {a, b}, [=](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const auto gc = self.grad.data();
        const auto av = pa->value.data();
        const auto bv = pb->value.data();
        if (wants(pa)) {
            auto ga = pa->grad_buffer().data();
            if (!trans_a && !trans_b) kernels::batched_matmul(batch, m, n, k, gc, false, bv, true, ga, true);
            else if (trans_a && !trans_b) kernels::batched_matmul(batch, k, n, m, bv, false, gc, true, ga, true);
            else if (!trans_a && trans_b) kernels::batched_matmul(batch, m, n, k, gc, false, bv, false, ga, true);
            else kernels::batched_matmul(batch, k, n, m, bv, true, gc, true, ga, true);
        }
        if (wants(pb)) {
            auto gb = pb->grad_buffer().data();
            if (!trans_a && !trans_b) kernels::batched_matmul(batch, k, m, n, av, true, gc, false, gb, true);
            else if (trans_a && !trans_b) kernels::batched_matmul(batch, k, m, n, av, false, gc, false, gb, true);
            else if (!trans_a && trans_b) kernels::batched_matmul(batch, n, m, k, gc, true, av, false, gb, true);
            else kernels::batched_matmul(batch, n, m, k, gc, true, av, true, gb, true);
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    if (x.value().rank() != 4) throw std::invalid_argument("upsample_nearest2x expects NCHW");
    const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out({x.dim(0), x.dim(1), 2 * h, 2 * w});
    kernels::upsample_nearest2x_forward(planes, h, w, x.value().data(), out.data());
    return record(std::move(out), {x}, [planes, h, w](Node& self) {
        kernels::upsample_nearest2x_backward(planes, h, w, self.grad.data(), self.parents[0]->grad_buffer().data());
    });
}

Var avg_pool2x2(const Var& x) {
    if (x.value().rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2)
        throw std::invalid_argument("avg_pool2x2 expects NCHW with even spatial dims");
    const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out({x.dim(0), x.dim(1), h / 2, w / 2});
    kernels::avg_pool2x2_forward(planes, h, w, x.value().data(), out.data());
    return record(std::move(out), {x}, [planes, h, w](Node& self) {
        kernels::avg_pool2x2_backward(planes, h, w, self.grad.data(), self.parents[0]->grad_buffer().data());
    });
}

Var spatial_sum(const Var& x) {
    if (x.value().rank() != 4) throw std::invalid_argument("spatial_sum expects NCHW");
    const std::int64_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1)});
    for (std::int64_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += x.value()[p * hw + i];
        out[p] = s;
    }
    return record(std::move(out), {x}, [planes, hw](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t p = 0; p < planes; ++p)
            for (std::int64_t i = 0; i < hw; ++i) g[p * hw + i] += self.grad[p];
    });
}

Var global_avg_pool(const Var& x) {
    return scale(spatial_sum(x), 1.0 / static_cast<double>(x.dim(2) * x.dim(3)));
}

Var global_max_pool(const Var& x) {
    if (x.value().rank() != 4) throw std::invalid_argument("global_max_pool expects NCHW");
    const std::int64_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1)});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(planes));
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* v = x.value().ptr() + p * hw;
        const std::int64_t i = std::max_element(v, v + hw) - v;  // first maximum
        arg[static_cast<std::size_t>(p)] = p * hw + i;
        out[p] = v[i];
    }
    return record(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < arg.size(); ++p) g[arg[p]] += self.grad[static_cast<std::int64_t>(p)];
    });
}

Var softmax(const Var& x) {
    if (x.value().rank() != 2) throw std::invalid_argument("softmax expects rank 2");
    const std::int64_t rows = x.dim(0), k = x.dim(1);
    Tensor out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.value().ptr() + r * k;
        double* o = out.ptr() + r * k;
        const double mx = *std::max_element(in, in + k);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += (o[j] = std::exp(in[j] - mx));
        for (std::int64_t j = 0; j < k; ++j) o[j] /= s;
    }
    return record(std::move(out), {x}, [rows, k](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * self.value[r * k + j];
            for (std::int64_t j = 0; j < k; ++j) g[r * k + j] += self.value[r * k + j] * (self.grad[r * k + j] - dot);
        }
    });
}

Var log_softmax(const Var& x) {
    if (x.value().rank() != 2) throw std::invalid_argument("log_softmax expects rank 2");
    const std::int64_t rows = x.dim(0), k = x.dim(1);
    Tensor out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.value().ptr() + r * k;
        const double mx = *std::max_element(in, in + k);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(in[j] - mx);
        const double lse = mx + std::log(s);
        for (std::int64_t j = 0; j < k; ++j) out[r * k + j] = in[j] - lse;
    }
    return record(std::move(out), {x}, [rows, k](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
            double gs = 0.0;
            for (std::int64_t j = 0; j < k; ++j) gs += self.grad[r * k + j];
            for (std::int64_t j = 0; j < k; ++j)
                g[r * k + j] += self.grad[r * k + j] - std::exp(self.value[r * k + j]) * gs;
        }
    });
}

Var pick(const Var& x, const std::vector<std::int64_t>& index) {
    if (x.value().rank() != 2 || static_cast<std::int64_t>(index.size()) != x.dim(0))
        throw std::invalid_argument("pick: expects [N, K] and N indices");
    const std::int64_t k = x.dim(1);
    std::vector<std::int64_t> flat(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= k) throw std::out_of_range("pick: column out of range");
        flat[r] = static_cast<std::int64_t>(r) * k + index[r];
    }
    return gather(x, std::move(flat), Shape{x.dim(0)});
}

Var column(const Var& x, std::int64_t col) {
    return pick(x, std::vector<std::int64_t>(static_cast<std::size_t>(x.dim(0)), col));
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x.value().rank() != 2) throw std::invalid_argument("layer_norm expects rank 2");
    const std::int64_t rows = x.dim(0), d = x.dim(1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) throw std::invalid_argument("layer_norm: affine shape");
    Tensor xhat(x.shape()), out(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.value().ptr() + r * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma.value()[j] * h + beta.value()[j];
        }
    }
    return record(std::move(out), {x, gamma, beta},
                  [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                      auto& px = self.parents[0];
                      auto& pg = self.parents[1];
                      auto& pb = self.parents[2];
                      if (wants(pg)) {
                          auto& g = pg->grad_buffer();
                          for (std::int64_t r = 0; r < rows; ++r)
                              for (std::int64_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xhat[r * d + j];
                      }
                      if (wants(pb)) {
                          auto& g = pb->grad_buffer();
                          for (std::int64_t r = 0; r < rows; ++r)
                              for (std::int64_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
                      }
                      if (wants(px)) {
                          auto& g = px->grad_buffer();
                          const double inv_d = 1.0 / static_cast<double>(d);
                          for (std::int64_t r = 0; r < rows; ++r) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::int64_t j = 0; j < d; ++j) {
                                  const double gh = self.grad[r * d + j] * pg->value[j];
                                  m1 += gh;
                                  m2 += gh * xhat[r * d + j];
                              }
                              m1 *= inv_d;
                              m2 *= inv_d;
                              for (std::int64_t j = 0; j < d; ++j) {
                                  const double gh = self.grad[r * d + j] * pg->value[j];
                                  g[r * d + j] += inv_std[static_cast<std::size_t>(r)] * (gh - m1 - xhat[r * d + j] * m2);
                              }
                          }
                      }
                  });
}

Var dropout(const Var& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
    if (p == 0.0) return x;
    Tensor mask(x.shape());
    // One draw from rng keys a counter-based stream; much cheaper than a draw per element.
    const std::uint64_t base = rng();
    const double s = 1.0 / (1.0 - p);
    const double unit = 1.0 / 9007199254740992.0;  // 2^-53
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        const double u = static_cast<double>(splitmix64(base + static_cast<std::uint64_t>(i)) >> 11) * unit;
        mask[i] = u < 1.0 - p ? s : 0.0;
    }
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return record(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Var straight_through(const Var& x, const Tensor& target) {
    if (x.shape() != target.shape()) throw std::invalid_argument("straight_through: shape mismatch");
    return record(target, {x}, [](Node& self) { self.parents[0]->grad_buffer().add_(self.grad); });
}

Var embedding(const Var& table, const std::vector<std::int64_t>& index) {
    if (table.value().rank() != 2) throw std::invalid_argument("embedding: table must be rank 2");
    const std::int64_t k = table.dim(0), d = table.dim(1);
    std::vector<std::int64_t> flat;
    flat.reserve(index.size() * static_cast<std::size_t>(d));
    for (auto i : index) {
        if (i < 0 || i >= k) throw std::out_of_range("embedding: index out of range");
        for (std::int64_t j = 0; j < d; ++j) flat.push_back(i * d + j);
    }
    return gather(table, std::move(flat), Shape{static_cast<std::int64_t>(index.size()), d});
}

}  // namespace ops

}  // namespace cfgan
