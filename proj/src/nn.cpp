#include "cfgan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace cfgan::nn {

std::vector<NamedParameter> Module::named_parameters() const {
    std::vector<NamedParameter> out;
    collect("", out);
    return out;
}

std::vector<Var> Module::parameters() const {
    std::vector<Var> out;
    for (auto& p : named_parameters()) out.push_back(p.var);
    return out;
}

std::int64_t Module::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : named_parameters()) n += p.var.numel();
    return n;
}

void Module::set_requires_grad(bool on) const {
    for (auto& p : named_parameters()) p.var.node()->requires_grad = on;
}

void Module::zero_grad() const {
    for (auto& p : named_parameters()) p.var.node()->grad = Tensor();
}

Tensor uniform_init(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

namespace {
void push(const std::string& prefix, const char* name, const Var& v, std::vector<NamedParameter>& out) {
    if (v.defined()) out.push_back({prefix + name, v});
}
}  // namespace

Conv2d::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_, std::int64_t padding_,
               Rng& rng, bool with_bias)
    : stride(stride_), padding(padding_) {
    const std::int64_t fan_in = in * kernel * kernel;
    weight = Var(uniform_init({out, in, kernel, kernel}, fan_in, rng), true);
    if (with_bias) bias = Var(uniform_init({out}, fan_in, rng), true);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    push(prefix, "weight", weight, out);
    push(prefix, "bias", bias, out);
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) {
    weight = Var(uniform_init({out, in}, in, rng), true);
    if (with_bias) bias = Var(uniform_init({out}, in, rng), true);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    push(prefix, "weight", weight, out);
    push(prefix, "bias", bias, out);
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma(Tensor({dim}, 1.0), true), beta(Tensor({dim}, 0.0), true) {}

void LayerNorm::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    push(prefix, "gamma", gamma, out);
    push(prefix, "beta", beta, out);
}

Adam::Adam(std::vector<NamedParameter> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros_like(p.var.value()));
        v_.push_back(Tensor::zeros_like(p.var.value()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& node = *params_[i].var.node();
        if (node.grad.empty()) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::int64_t j = 0; j < node.value.numel(); ++j) {
            const double g = node.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            node.value[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var.node()->grad = Tensor();
}

}  // namespace cfgan::nn
