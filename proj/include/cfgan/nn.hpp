#pragma once

// Parameter containers, basic layers and the Adam optimiser.

#include <string>
#include <vector>

#include "cfgan/autograd.hpp"

namespace cfgan::nn {

struct NamedParameter {
    std::string name;
    Var var;
};

class Module {
public:
    virtual ~Module() = default;

    // Appends this module's parameters, names prefixed with `prefix`.
    virtual void collect(const std::string& prefix, std::vector<NamedParameter>& out) const = 0;

    std::vector<NamedParameter> named_parameters() const;
    std::vector<Var> parameters() const;
    std::int64_t parameter_count() const;
    void set_requires_grad(bool on) const;
    void zero_grad() const;
};

// Stops gradient accumulation into a module's parameters for its lifetime.
class FreezeGuard {
public:
    explicit FreezeGuard(const Module& m) : module_(m) { module_.set_requires_grad(false); }
    ~FreezeGuard() { module_.set_requires_grad(true); }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    const Module& module_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor uniform_init(Shape shape, std::int64_t fan_in, Rng& rng);
Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);

class Conv2d : public Module {
public:
    Conv2d() = default;
    Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
           Rng& rng, bool bias = true);

    Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, padding); }
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

    Var weight;
    Var bias;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
};

class Linear : public Module {
public:
    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);

    Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

    Var weight;
    Var bias;
};

class LayerNorm : public Module {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::int64_t dim);

    Var operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

    Var gamma;
    Var beta;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed parameter list. Parameters without a gradient are skipped.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<NamedParameter> params, AdamConfig cfg);

    void step();
    void zero_grad();

    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    // First/second moment buffers, aligned with the parameter list.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    const std::vector<NamedParameter>& params() const { return params_; }

private:
    std::vector<NamedParameter> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

}  // namespace cfgan::nn
