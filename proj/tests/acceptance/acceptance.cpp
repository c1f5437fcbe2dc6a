// Acceptance runner. Prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.
//
//   cfgan_acceptance [--criteria 1,2,3] [--config configs/e2e.json] [--workdir dir]
//
// 1-4 are property and oracle suites; 5-8 train the shipped end-to-end configuration
// (twice when 8 is selected) and read the metric files back.

#include <array>
#include <limits>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfgan/attacks.hpp"
#include "cfgan/discriminator.hpp"
#include "cfgan/evaluation.hpp"
#include "cfgan/experiment.hpp"
#include "cfgan/generator.hpp"
#include "cfgan/losses.hpp"

namespace fs = std::filesystem;
using namespace cfgan;
using nlohmann::json;

namespace {

// Collects individual expectations; the criterion passes when none failed.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (ok) return;
        ++failed_;
        if (failures_.size() < 5) failures_.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        std::ostringstream s;
        s.precision(10);
        s << what << ": got " << got << ", want " << want;
        expect(std::abs(got - want) <= tol, s.str());
    }
    void note(const std::string& text) { notes_.push_back(text); }
    bool passed() const { return failed_ == 0 && total_ > 0; }
    std::string summary() const {
        std::ostringstream s;
        s << (total_ - failed_) << "/" << total_ << " checks";
        for (const auto& n : notes_) s << "; " << n;
        for (const auto& f : failures_) s << "; FAILED " << f;
        return s.str();
    }

private:
    int total_ = 0, failed_ = 0;
    std::vector<std::string> failures_, notes_;
};

Var triples(std::int64_t n, std::vector<double> values) { return Var(Tensor({n, 3}, std::move(values))); }

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

Var random_triples(std::int64_t n, std::mt19937_64& rng) {
    return ops::softmax(Var(uniform_tensor({n, 3}, rng, -3.0, 3.0)));
}

std::int64_t pick(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

// ---------------------------------------------------------------------------
// 1. Loss identities and worked examples

// Recovers the weight cycle_loss gives level i by perturbing that level alone.
double cycle_weight(int level, const LossWeights& w, std::mt19937_64& rng) {
    std::vector<NestedTriples> a, b;
    for (int i = 0; i < w.cycles; ++i) {
        NestedTriples t{random_triples(2, rng), random_triples(3, rng)};
        a.push_back(t);
        b.push_back(i == level ? NestedTriples{random_triples(2, rng), random_triples(3, rng)} : t);
    }
    const double da = losses::cycle_loss(a, w).item() - losses::cycle_loss(b, w).item();
    const double dt = losses::generator_adversarial_loss(a[level].gen0, a[level].gen1).item() -
                      losses::generator_adversarial_loss(b[level].gen0, b[level].gen1).item();
    return da / dt;
}

Checks criterion_losses() {
    Checks c;
    std::mt19937_64 rng(11);
    const double eps = losses::kProbEps;

    // Zero at one-hot-correct outputs, for several batch sizes.
    for (std::int64_t n : {1, 2, 5}) {
        std::vector<double> r0, r1, f;
        for (std::int64_t i = 0; i < n; ++i) {
            r0.insert(r0.end(), {1, 0, 0});
            r1.insert(r1.end(), {0, 1, 0});
            f.insert(f.end(), {0, 0, 1});
        }
        const double v = losses::discriminator_loss(triples(n, r0), triples(n, r1), triples(n, f)).item();
        c.expect(std::abs(v) <= 1e-5, "D loss at one-hot outputs is " + std::to_string(v));
    }

    // cycle_loss with one level is the adversarial loss, bit for bit.
    for (int trial = 0; trial < 50; ++trial) {
        LossWeights w;
        w.cycles = 1;
        w.lambda_c = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
        w.cycle_fake_sign_alternates = trial % 2 == 0;
        NestedTriples t{random_triples(pick(rng, 1, 6), rng), random_triples(pick(rng, 1, 6), rng)};
        c.expect(losses::cycle_loss({t}, w).item() == losses::generator_adversarial_loss(t.gen0, t.gen1).item(),
                 "cycle_loss(c=1) differs from the adversarial loss");
    }

    // total_loss is affine in each weight with the matching component as slope.
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.0, 2.0);
        LossBreakdown parts;
        parts.l_D = u(rng);
        parts.l_G_c = u(rng);
        parts.l_G_cls = pos(rng);
        parts.l_G_s = pos(rng);
        parts.l_vq = trial % 3 == 0 ? pos(rng) : 0.0;
        LossWeights w;
        w.lambda1 = pos(rng);
        w.lambda2 = pos(rng);
        w.lambda3 = pos(rng);
        const double slopes[3] = {parts.l_G_c, parts.l_G_cls, parts.l_G_s};
        double* lambdas[3] = {&w.lambda1, &w.lambda2, &w.lambda3};
        for (int k = 0; k < 3; ++k) {
            const double base = *lambdas[k];
            const double t0 = losses::total_loss(parts, w).total;
            *lambdas[k] = base + 1.0;
            const double t1 = losses::total_loss(parts, w).total;
            *lambdas[k] = base + 2.0;
            const double t2 = losses::total_loss(parts, w).total;
            *lambdas[k] = base;
            c.near(t1 - t0, slopes[k], 1e-9, "slope of total in lambda" + std::to_string(k + 1));
            c.near(t2 - 2 * t1 + t0, 0.0, 1e-9, "curvature of total in lambda" + std::to_string(k + 1));
        }
    }

    // Worked examples.
    c.near(losses::discriminator_loss(triples(1, {0.7, 0.2, 0.1}), triples(1, {0.1, 0.8, 0.1}),
                                      triples(1, {0.3, 0.3, 0.4}))
               .item(),
           1.4961, 1e-4, "D loss worked example");
    const double third = 1.0 / 3.0;
    const Var uniform = triples(1, {third, third, third});
    c.near(losses::discriminator_loss(uniform, uniform, uniform).item(), 3.2958, 1e-4, "D loss at uniform outputs");
    // A class-0 counterfactual scored [0.5, 0.3, 0.2] contributes log 0.5 + log 0.2.
    const Var g0 = triples(1, {0.5, 0.3, 0.2});
    c.near(losses::mean_log_prob(g0, 0).item() + losses::mean_log_prob(g0, 2).item(), -2.302, 1e-3,
           "class-0 counterfactual contribution");
    c.near(losses::generator_adversarial_loss(uniform, uniform).item(), -3.2958, 1e-4, "G loss at uniform outputs");
    const std::vector<int> ones{1, 1};
    c.near(losses::generator_aux_class_loss(Var(Tensor({2, 2}, {0.1, 0.9, 0.2, 0.8})), ones).item(), 0.1643, 1e-4,
           "aux loss worked example");
    const std::vector<int> zero{0};
    c.near(losses::generator_aux_class_loss(Var(Tensor({1, 2}, {0.5, 0.5})), zero).item(), std::log(2.0), 1e-4,
           "aux loss at 0.5");
    c.near(losses::sparsity_loss(Var(Tensor({1, 1, 1, 2}, {0.0, 1.0})), Var(Tensor({1, 1, 1, 2}, {0.25, 0.5}))).item(),
           0.375, 1e-4, "sparsity worked example");
    c.near(losses::sparsity_loss(Var(Tensor({1, 1, 2, 2}, 0.0)), Var(Tensor({1, 1, 2, 2}, 0.5))).item(), 0.5, 1e-4,
           "sparsity of a constant shift");
    {
        LossWeights w;
        w.cycles = 2;
        w.lambda_c = 0.5;
        const double w1 = cycle_weight(0, w, rng), w2 = cycle_weight(1, w, rng);
        c.near(w1 * -2.0 + w2 * -1.0, -1.5, 1e-4, "cycle loss c=2, lambda_c=0.5, terms (-2, -1)");
        w.cycles = 3;
        w.lambda_c = 1.0;
        const double v1 = cycle_weight(0, w, rng), v2 = cycle_weight(1, w, rng), v3 = cycle_weight(2, w, rng);
        c.near(v1, 1.0, 1e-4, "cycle weight 1 at lambda_c=1");
        c.near(v2, -1.0, 1e-4, "cycle weight 2 at lambda_c=1");
        c.near(v3, 1.0, 1e-4, "cycle weight 3 at lambda_c=1");
    }
    {
        LossBreakdown parts;
        parts.l_D = 1.0;
        parts.l_G_c = -2.0;
        parts.l_G_cls = 0.5;
        parts.l_G_s = 0.1;
        LossWeights w;
        w.lambda1 = 1.0;
        w.lambda2 = 1.0;
        w.lambda3 = 0.1;
        c.near(losses::total_loss(parts, w).total, -0.49, 1e-4, "total loss worked example");
    }
    // Clamping keeps log(0) finite.
    c.expect(std::isfinite(losses::discriminator_loss(triples(1, {0, 1, 0}), triples(1, {1, 0, 0}),
                                                      triples(1, {1, 0, 0}))
                               .item()),
             "D loss is finite at fully wrong outputs");
    c.near(losses::mean_log_prob(triples(1, {0, 1, 0}), 0).item(), std::log(eps), 1e-12, "clamped log of zero");
    return c;
}

// ---------------------------------------------------------------------------
// 2. Gradients against central finite differences

struct GradStats {
    double worst = 0.0;
    int coords = 0;
    int retried = 0;
};

constexpr double kFdStep = 1e-5;
// Fallback steps for stencils that straddle a leaky-ReLU kink.
constexpr std::array<double, 2> kFdStepsFine{1e-6, 1e-7};
constexpr double kRelTol = 1e-4;
// Denominator floor, so components that are zero analytically compare in absolute terms.
constexpr double kRelFloor = 1e-6;

struct Difference {
    double value;
    double noise;  // round-off bound of the quotient
};

Difference central_difference(const std::function<double()>& f, Tensor& slot, std::int64_t i, double h) {
    const double keep = slot[i];
    slot[i] = keep + h;
    const double up = f();
    slot[i] = keep - h;
    const double down = f();
    slot[i] = keep;
    // The loss itself carries a few hundred ulps of accumulated rounding.
    constexpr double kUlps = 256 * std::numeric_limits<double>::epsilon();
    return {(up - down) / (2 * h), kUlps * (std::abs(up) + std::abs(down)) / (2 * h)};
}

// Relative error, or 0 when the gap is within the quotient's own round-off.
double relative_error(const Difference& d, double ana) {
    const double gap = std::abs(d.value - ana);
    if (gap <= d.noise) return 0.0;
    return gap / std::max({std::abs(d.value), std::abs(ana), kRelFloor});
}

// Compares d f / d (*slot)[i] for the listed indices.
// A piecewise-linear activation whose input lies within h of zero makes the wide stencil average two slopes.
// A mismatch is then re-measured with finer steps, keeping the closest. A wrong analytic gradient disagrees with all.
void check_coords(Checks& c, GradStats& st, const std::function<double()>& f, Tensor& slot, const Tensor& analytic,
                  const std::vector<std::int64_t>& idx, const std::string& what) {
    for (std::int64_t i : idx) {
        const double ana = analytic[i];
        Difference d = central_difference(f, slot, i, kFdStep);
        double rel = relative_error(d, ana);
        if (rel > kRelTol) {
            ++st.retried;
            for (double h : kFdStepsFine) {
                const Difference n = central_difference(f, slot, i, h);
                if (relative_error(n, ana) < rel) d = n, rel = relative_error(n, ana);
            }
        }
        st.worst = std::max(st.worst, rel);
        ++st.coords;
        std::ostringstream s;
        s << what << " coord " << i << ": analytic " << ana << " vs numeric " << d.value;
        c.expect(rel <= kRelTol, s.str());
    }
}

std::vector<std::int64_t> sample_indices(std::int64_t n, std::int64_t k, std::mt19937_64& rng) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (n <= k) return all;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(k));
    return all;
}

// Gradient of a scalar function of leaf tensors, checked on every coordinate.
void check_leaves(Checks& c, GradStats& st, std::vector<Tensor>& leaves,
                  const std::function<Var(const std::vector<Var>&)>& f, const std::string& what) {
    std::vector<Var> vars;
    for (auto& t : leaves) vars.emplace_back(t, true);
    f(vars).backward();
    std::vector<Tensor> grads;
    for (auto& v : vars) grads.push_back(v.grad());
    auto eval = [&] {
        std::vector<Var> vs;
        for (auto& t : leaves) vs.emplace_back(t, false);
        return f(vs).item();
    };
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(leaves[k].numel()));
        std::iota(idx.begin(), idx.end(), 0);
        check_coords(c, st, eval, leaves[k], grads[k], idx, what + " input " + std::to_string(k));
    }
}

Checks criterion_gradients() {
    Checks c;
    GradStats st;
    std::mt19937_64 rng(23);
    constexpr int kConfigs = 20;

    for (int t = 0; t < kConfigs; ++t) {
        const std::int64_t n0 = pick(rng, 1, 4), n1 = pick(rng, 1, 4), nf = pick(rng, 1, 4);
        std::vector<Tensor> leaves{uniform_tensor({n0, 3}, rng, -2, 2), uniform_tensor({n1, 3}, rng, -2, 2),
                                   uniform_tensor({nf, 3}, rng, -2, 2)};
        check_leaves(c, st, leaves, [](const std::vector<Var>& v) {
            return losses::discriminator_loss(ops::softmax(v[0]), ops::softmax(v[1]), ops::softmax(v[2]));
        }, "D loss");
        leaves.pop_back();
        check_leaves(c, st, leaves, [](const std::vector<Var>& v) {
            return losses::generator_adversarial_loss(ops::softmax(v[0]), ops::softmax(v[1]));
        }, "G adversarial loss");

        const std::int64_t n = pick(rng, 1, 6);
        std::vector<int> labels;
        for (std::int64_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(pick(rng, 0, 1)));
        std::vector<Tensor> logits{uniform_tensor({n, 2}, rng, -2, 2)};
        check_leaves(c, st, logits, [&](const std::vector<Var>& v) {
            return losses::generator_aux_class_loss(ops::softmax(v[0]), labels);
        }, "aux loss");

        const Shape shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
        std::vector<Tensor> pair{uniform_tensor(shape, rng), uniform_tensor(shape, rng)};
        check_leaves(c, st, pair, [](const std::vector<Var>& v) { return losses::sparsity_loss(v[0], v[1]); },
                     "sparsity loss");

        LossWeights w;
        w.cycles = static_cast<int>(pick(rng, 1, 3));
        w.lambda_c = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
        w.cycle_fake_sign_alternates = t % 2 == 0;
        std::vector<Tensor> levels;
        for (int i = 0; i < w.cycles; ++i) {
            levels.push_back(uniform_tensor({pick(rng, 1, 3), 3}, rng, -2, 2));
            levels.push_back(uniform_tensor({pick(rng, 1, 3), 3}, rng, -2, 2));
        }
        check_leaves(c, st, levels, [&](const std::vector<Var>& v) {
            std::vector<NestedTriples> nested;
            for (int i = 0; i < w.cycles; ++i) nested.push_back({ops::softmax(v[2 * i]), ops::softmax(v[2 * i + 1])});
            return losses::cycle_loss(nested, w);
        }, "cycle loss");
    }

    // Tiny generators: parameters and input pixels, with fixed latent and dropout streams.
    for (int t = 0; t < kConfigs; ++t) {
        GeneratorConfig g;
        g.backbone = t % 2 ? "attention_unet" : "cnn_unet";
        g.output = (t / 2) % 2 ? "residual" : "tanh";
        g.image_channels = pick(rng, 1, 3);
        g.image_size = 8;
        g.depth = pick(rng, 1, 2);
        g.base_channels = 2 * pick(rng, 1, 2);
        g.latent_dim = 3;
        g.noise_channels = pick(rng, 0, 2);
        g.class_hidden = 4;
        g.dropout = t % 3 == 0 ? 0.0 : 0.5;
        g.attention_window = 2;
        g.attention_heads = 2;
        Rng init(static_cast<std::uint64_t>(100 + t));
        Generator gen(g, init);
        const std::int64_t n = pick(rng, 1, 2);
        Tensor x = uniform_tensor({n, g.image_channels, 8, 8}, rng, -0.9, 0.9);
        Rng zr(5);
        const Tensor z = gen.sample_latent(n, zr);
        const Tensor r_img = uniform_tensor({n, g.image_channels, 8, 8}, rng);
        const Tensor r_cls = uniform_tensor({n, 2}, rng);
        const auto dropout_seed = static_cast<std::uint64_t>(t);
        auto objective = [&](const Var& xv) {
            Rng dr(dropout_seed);
            const GeneratorOutput out = gen.forward(xv, Var(z), dr);
            return ops::sum(out.image * Var(r_img)) + ops::sum(out.class_probs * Var(r_cls));
        };
        Var xv(x, true);
        gen.zero_grad();
        objective(xv).backward();
        auto eval = [&] { return objective(Var(x)).item(); };
        const std::string name = "generator " + g.backbone + "/" + g.output + " #" + std::to_string(t);
        for (const auto& p : gen.named_parameters()) {
            Var v = p.var;
            const Tensor grad = v.grad();
            check_coords(c, st, eval, v.mutable_value(), grad, sample_indices(v.numel(), 2, rng), name + " " + p.name);
        }
        check_coords(c, st, eval, x, xv.grad(), sample_indices(x.numel(), 8, rng), name + " input");
    }

    // Tiny discriminators over every backbone and pooling.
    const char* backbones[] = {"resnet_tiny", "resnet_mid", "attention", "hybrid"};
    for (int t = 0; t < kConfigs; ++t) {
        DiscriminatorConfig d;
        d.backbone = backbones[t % 4];
        d.pooling = (t / 4) % 2 ? "avg" : "avg_max";
        d.image_channels = pick(rng, 1, 3);
        d.image_size = 8;
        d.base_channels = pick(rng, 2, 3);
        d.attention_dim = 4;
        d.attention_heads = 2;
        d.attention_window = 2;
        Rng init(static_cast<std::uint64_t>(200 + t));
        Discriminator disc(d, init);
        const std::int64_t n = pick(rng, 1, 3);
        Tensor x = uniform_tensor({n, d.image_channels, 8, 8}, rng);
        const Tensor r = uniform_tensor({n, 3}, rng);
        auto objective = [&](const Var& xv) { return ops::sum(disc.probs(xv) * Var(r)); };
        Var xv(x, true);
        disc.zero_grad();
        objective(xv).backward();
        auto eval = [&] { return objective(Var(x)).item(); };
        const std::string name = "discriminator " + d.backbone + "/" + d.pooling + " #" + std::to_string(t);
        for (const auto& p : disc.named_parameters()) {
            Var v = p.var;
            const Tensor grad = v.grad();
            check_coords(c, st, eval, v.mutable_value(), grad, sample_indices(v.numel(), 2, rng), name + " " + p.name);
        }
        check_coords(c, st, eval, x, xv.grad(), sample_indices(x.numel(), 8, rng), name + " input");
    }
    std::ostringstream s;
    s << "worst relative error " << st.worst << " over " << st.coords << " coordinates, " << st.retried
      << " re-measured at finer steps";
    c.note(s.str());
    return c;
}

// ---------------------------------------------------------------------------
// 3. PGD contracts

Checks criterion_pgd() {
    Checks c;
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Containment over mixed models, inputs and settings.
    for (int t = 0; t < 100; ++t) {
        const std::int64_t n = pick(rng, 1, 3), ch = pick(rng, 1, 2);
        Tensor x = uniform_tensor({n, ch, 8, 8}, rng);
        for (auto& v : x.data())
            if (unit(rng) < 0.1) v = unit(rng) < 0.5 ? -1.0 : 1.0;  // some pixels on the range boundary
        attacks::AttackConfig cfg;
        cfg.step_size = std::exp(std::uniform_real_distribution<double>(std::log(1e-3), std::log(0.3))(rng));
        cfg.iterations = static_cast<int>(pick(rng, 1, 8));
        if (t % 2) cfg.epsilon = cfg.step_size * std::uniform_real_distribution<double>(1.0, 2.0 * cfg.iterations)(rng);
        std::vector<int> target;
        for (std::int64_t i = 0; i < n; ++i) target.push_back(static_cast<int>(pick(rng, 0, 1)));

        attacks::ProbFn model;
        Discriminator disc;
        Tensor w;
        const std::int64_t features = ch * 64;
        if (t % 3 == 0) {
            DiscriminatorConfig d;
            d.image_channels = ch;
            d.image_size = 8;
            d.base_channels = 2;
            Rng init(static_cast<std::uint64_t>(t));
            disc = Discriminator(d, init);
            model = [&disc](const Var& v) { return disc.probs(v); };
        } else {
            w = uniform_tensor({3, features}, rng, -0.2, 0.2);
            const bool mlp = t % 3 == 2;
            model = [&w, n, features, mlp](const Var& v) {
                Var flat = ops::reshape(v, {n, features});
                if (mlp) flat = ops::tanh(flat);
                return ops::softmax(ops::linear(flat, Var(w), Var()));
            };
        }
        const Tensor adv = attacks::pgd_attack(model, x, target, cfg);
        const double eps = cfg.effective_epsilon();
        double ball = 0.0;
        bool in_range = true;
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            ball = std::max(ball, std::abs(adv[i] - x[i]));
            in_range = in_range && adv[i] >= attacks::kPixelMin && adv[i] <= attacks::kPixelMax;
        }
        c.expect(ball <= eps + 1e-12, "trial " + std::to_string(t) + ": L-inf displacement " + std::to_string(ball) +
                                          " exceeds epsilon " + std::to_string(eps));
        c.expect(in_range, "trial " + std::to_string(t) + ": adversarial pixel outside [-1, 1]");
    }

    // Monotone loss on logistic models, including clamped boundary pixels.
    for (int t = 0; t < 30; ++t) {
        const std::int64_t d = pick(rng, 2, 40);
        const Tensor w = uniform_tensor({1, d}, rng);
        const double b = std::uniform_real_distribution<double>(-1, 1)(rng);
        const double sgn = t % 2 ? 1.0 : -1.0;
        Tensor x = uniform_tensor({1, d}, rng);
        attacks::AttackConfig cfg;
        cfg.step_size = std::uniform_real_distribution<double>(0.005, 0.2)(rng);
        cfg.iterations = static_cast<int>(pick(rng, 2, 15));
        if (t % 3 == 0) cfg.epsilon = cfg.step_size * 2.5;
        attacks::LossFn loss = [&](const Var& v) {
            Var margin = ops::add_scalar(ops::linear(v, Var(w), Var()), b);
            return ops::neg(ops::log(ops::sigmoid(sgn * margin)));
        };
        std::vector<double> trace;
        attacks::pgd(loss, x, cfg, &trace);
        c.expect(static_cast<int>(trace.size()) == cfg.iterations + 1, "trace length");
        for (std::size_t i = 1; i < trace.size(); ++i)
            c.expect(trace[i] <= trace[i - 1] + 1e-12,
                     "logistic model " + std::to_string(t) + ": loss rose at iteration " + std::to_string(i));
    }

    // Closed-form displacement: with a linear loss every coordinate walks alpha per step
    // against sign(w) until the ball stops it.
    for (int t = 0; t < 30; ++t) {
        const std::int64_t d = pick(rng, 1, 30);
        Tensor w = uniform_tensor({1, d}, rng);
        for (auto& v : w.data())
            if (std::abs(v) < 1e-3) v = 0.5;
        const Tensor x = uniform_tensor({1, d}, rng, -0.3, 0.3);
        attacks::AttackConfig cfg;
        cfg.iterations = static_cast<int>(pick(rng, 1, 12));
        cfg.step_size = std::uniform_real_distribution<double>(0.001, 0.6 / cfg.iterations)(rng);
        if (t % 2) cfg.epsilon = std::uniform_real_distribution<double>(cfg.step_size, 0.7)(rng);
        attacks::LossFn loss = [&](const Var& v) { return ops::sum(v * Var(w)); };
        const Tensor adv = attacks::pgd(loss, x, cfg);
        const double expected = std::min(cfg.step_size * cfg.iterations, cfg.effective_epsilon());
        for (std::int64_t i = 0; i < d; ++i) {
            const double moved = (x[i] - adv[i]) * (w[i] > 0 ? 1.0 : -1.0);
            c.near(moved, expected, 1e-6, "linear displacement, model " + std::to_string(t));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// 4. Metrics against brute-force oracles

double brute_iou(const std::vector<int>& a, const std::vector<int>& b) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] & b[i];
        uni += a[i] | b[i];
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// Threshold by rank: the q-quantile of n values sits at position q * (n - 1) of the sorted list.
// Quantiles are whole percentages, so the interpolation position is an exact rational k (n - 1) / 100.
std::vector<int> brute_binarize(const std::vector<double>& v, double q) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    const auto percent = static_cast<std::int64_t>(std::llround(q * 100.0));
    const std::int64_t num = percent * static_cast<std::int64_t>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(num / 100);
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const long double frac = static_cast<long double>(num % 100) / 100.0L;
    const long double thr = s[lo] + frac * (static_cast<long double>(s[hi]) - s[lo]);
    std::vector<int> out;
    for (double x : v) out.push_back(static_cast<long double>(x) > thr);
    return out;
}

// Square root of a matrix with positive eigenvalues, Denman-Beavers iteration.
using Mat = std::vector<std::vector<long double>>;

Mat mat_mul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size();
    Mat c(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat mat_inv(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0L;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(inv[col], inv[piv]);
        const long double d = a[col][col];
        for (std::size_t j = 0; j < n; ++j) {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const long double f = a[r][col];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

long double trace_sqrt(const Mat& m) {
    const std::size_t n = m.size();
    Mat y = m, z(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) z[i][i] = 1.0L;
    for (int it = 0; it < 100; ++it) {
        const Mat yi = mat_inv(y), zi = mat_inv(z);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                y[i][j] = 0.5L * (y[i][j] + zi[i][j]);
                z[i][j] = 0.5L * (z[i][j] + yi[i][j]);
            }
    }
    long double tr = 0.0L;
    for (std::size_t i = 0; i < n; ++i) tr += y[i][i];
    return tr;
}

double brute_fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                 double shrinkage) {
    const std::size_t d = a[0].size();
    auto stats = [&](const std::vector<std::vector<double>>& s, std::vector<long double>& mu, Mat& cov) {
        mu.assign(d, 0.0L);
        for (const auto& row : s)
            for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
        for (auto& m : mu) m /= static_cast<long double>(s.size());
        cov.assign(d, std::vector<long double>(d, 0.0L));
        for (const auto& row : s)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) cov[i][j] += (row[i] - mu[i]) * (row[j] - mu[j]);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) cov[i][j] /= static_cast<long double>(s.size() - 1);
            cov[i][i] += shrinkage;
        }
    };
    std::vector<long double> m1, m2;
    Mat c1, c2;
    stats(a, m1, c1);
    stats(b, m2, c2);
    long double dist = 0.0L, tr = 0.0L;
    for (std::size_t i = 0; i < d; ++i) {
        dist += (m1[i] - m2[i]) * (m1[i] - m2[i]);
        tr += c1[i][i] + c2[i][i];
    }
    return static_cast<double>(dist + tr - 2.0L * trace_sqrt(mat_mul(c1, c2)));
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor({static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows[0].size())}, flat);
}

Checks criterion_metrics() {
    Checks c;
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double tol = 1e-6;

    // IoU and quantile binarisation on masks up to 8x8.
    for (int t = 0; t < 200; ++t) {
        const std::int64_t h = pick(rng, 1, 8), w = pick(rng, 1, 8);
        const double density = unit(rng);
        std::vector<int> a, b;
        Tensor ta({h, w}), tb({h, w});
        for (std::int64_t i = 0; i < h * w; ++i) {
            a.push_back(unit(rng) < density);
            b.push_back(unit(rng) < density);
            ta[i] = a.back();
            tb[i] = b.back();
        }
        c.near(eval::iou(ta, tb), brute_iou(a, b), tol, "IoU");
        Tensor sal = uniform_tensor({h, w}, rng, 0.0, 1.0);
        if (t % 4 == 0)
            for (auto& v : sal.data()) v = std::round(v * 3) / 3;  // ties
        const double q = eval::default_quantiles()[static_cast<std::size_t>(t) % eval::default_quantiles().size()];
        const Tensor bin = eval::binarize_mask(sal, q);
        const std::vector<int> ref = brute_binarize(sal.values(), q);
        bool same = true;
        for (std::int64_t i = 0; i < h * w; ++i) same = same && (bin[i] > 0.5) == (ref[static_cast<std::size_t>(i)] == 1);
        c.expect(same, "binarised mask differs from the rank oracle");
    }
    // Curve over several masks.
    for (int t = 0; t < 20; ++t) {
        const std::int64_t h = pick(rng, 2, 8), w = pick(rng, 2, 8), n = pick(rng, 1, 6);
        std::vector<Tensor> masks, gts;
        for (std::int64_t k = 0; k < n; ++k) {
            masks.push_back(uniform_tensor({h, w}, rng, 0.0, 1.0));
            Tensor g({h, w});
            for (auto& v : g.data()) v = unit(rng) < 0.3;
            gts.push_back(g);
        }
        const auto qs = eval::default_quantiles();
        const eval::IouCurve curve = eval::iou_curve(masks, gts, qs);
        double best = -1.0;
        for (std::size_t qi = 0; qi < qs.size(); ++qi) {
            double sum = 0.0;
            for (std::int64_t k = 0; k < n; ++k) {
                std::vector<int> gv;
                for (double v : gts[static_cast<std::size_t>(k)].values()) gv.push_back(v > 0.5);
                sum += brute_iou(brute_binarize(masks[static_cast<std::size_t>(k)].values(), qs[qi]), gv);
            }
            c.near(curve.points[qi].second, sum / double(n), tol, "IoU curve point");
            best = std::max(best, sum / double(n));
        }
        c.near(curve.max_iou, best, tol, "IoU curve maximum");
    }
    // The fixed example: 2x2 squares offset by one pixel on a 3x3 grid.
    {
        Tensor a({3, 3}), b({3, 3});
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                a[y * 3 + x] = 1;
                b[(y + 1) * 3 + x + 1] = 1;
            }
        c.near(eval::iou(a, b), 1.0 / 7.0, tol, "offset squares");
    }

    // Confusion-matrix metrics.
    for (int t = 0; t < 200; ++t) {
        const std::int64_t n = pick(rng, 1, 30);
        std::vector<int> p, y;
        for (std::int64_t i = 0; i < n; ++i) {
            p.push_back(static_cast<int>(pick(rng, 0, 1)));
            y.push_back(static_cast<int>(pick(rng, 0, 1)));
        }
        int tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            tp += p[i] == 1 && y[i] == 1;
            fp += p[i] == 1 && y[i] == 0;
            fn += p[i] == 0 && y[i] == 1;
            tn += p[i] == 0 && y[i] == 0;
        }
        const double prec = tp + fp ? double(tp) / (tp + fp) : 0.0;
        const double rec = tp + fn ? double(tp) / (tp + fn) : 0.0;
        const double f1 = 2.0 * tp + fp + fn > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
        const auto m = eval::classification_metrics(p, y);
        c.near(m.precision, prec, tol, "precision");
        c.near(m.recall, rec, tol, "recall");
        c.near(m.f1, f1, tol, "F1");
        c.near(m.accuracy, double(tp + tn) / double(n), tol, "accuracy");
    }

    // Pearson r, textbook single-pass sums in long double.
    for (int t = 0; t < 200; ++t) {
        const std::int64_t n = pick(rng, 2, 40);
        std::vector<double> x, y;
        const double slope = std::uniform_real_distribution<double>(-2, 2)(rng);
        for (std::int64_t i = 0; i < n; ++i) {
            x.push_back(std::uniform_real_distribution<double>(-3, 3)(rng));
            y.push_back(slope * x.back() + std::uniform_real_distribution<double>(-1, 1)(rng));
        }
        long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            sx += x[i];
            sy += y[i];
            sxx += static_cast<long double>(x[i]) * x[i];
            syy += static_cast<long double>(y[i]) * y[i];
            sxy += static_cast<long double>(x[i]) * y[i];
        }
        const long double num = n * sxy - sx * sy;
        const long double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
        const auto r = eval::pearson(x, y);
        c.expect(r.r.has_value(), "Pearson r missing");
        if (r.r) c.near(*r.r, static_cast<double>(num / den), tol, "Pearson r");
    }
    {
        const std::vector<double> x{1, 2, 3, 4}, up{3, 5, 7, 9}, down{8, 6, 4, 2}, flat{1, 1, 1, 1};
        c.near(eval::pearson(x, up).r.value_or(0), 1.0, tol, "perfect correlation");
        c.near(eval::pearson(x, down).r.value_or(0), -1.0, tol, "perfect anticorrelation");
        c.expect(!eval::pearson(x, flat).r.has_value(), "constant input gives no r");
        c.near(eval::nll_per_sample(0.9, 1), 0.1054, 1e-4, "NLL of p1 = 0.9 for a damaged sample");
    }

    // FID: brute force in up to 4 dimensions, plus closed-form 1-D cases.
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = static_cast<std::size_t>(pick(rng, 1, 4));
        const std::int64_t na = pick(rng, static_cast<std::int64_t>(d) + 2, 12),
                           nb = pick(rng, static_cast<std::int64_t>(d) + 2, 12);
        const double shift = std::uniform_real_distribution<double>(-1, 1)(rng);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<std::vector<double>> a(static_cast<std::size_t>(na), std::vector<double>(d)),
            b(static_cast<std::size_t>(nb), std::vector<double>(d));
        for (auto& r : a)
            for (auto& v : r) v = normal(rng);
        for (auto& r : b)
            for (auto& v : r) v = 1.5 * normal(rng) + shift;
        const double shrink = t % 2 ? 1e-6 : 0.0;
        c.near(eval::fid_from_embeddings(rows_tensor(a), rows_tensor(b), shrink), brute_fid(a, b, shrink), tol,
               "FID in " + std::to_string(d) + "-D");
        if (d == 1) {
            // (mu1 - mu2)^2 + (sigma1 - sigma2)^2
            auto moments = [](const std::vector<std::vector<double>>& s, double& mu, double& var) {
                mu = 0;
                for (const auto& r : s) mu += r[0];
                mu /= double(s.size());
                var = 0;
                for (const auto& r : s) var += (r[0] - mu) * (r[0] - mu);
                var /= double(s.size() - 1);
            };
            double mu1, v1, mu2, v2;
            moments(a, mu1, v1);
            moments(b, mu2, v2);
            v1 += shrink;
            v2 += shrink;
            const double closed = (mu1 - mu2) * (mu1 - mu2) + (std::sqrt(v1) - std::sqrt(v2)) * (std::sqrt(v1) - std::sqrt(v2));
            c.near(eval::fid_from_embeddings(rows_tensor(a), rows_tensor(b), shrink), closed, tol, "1-D closed form");
        }
    }
    {
        // Unit-variance sets one apart: distance 1.
        const Tensor a({4, 1}, {-1, -1, 1, 1}), b({4, 1}, {0, 0, 2, 2});
        c.near(eval::fid_from_embeddings(a, b, 0.0), 1.0, tol, "1-D shifted means");
        c.near(eval::fid_from_embeddings(a, a, 0.0), 0.0, tol, "identical sets");
    }
    return c;
}

// ---------------------------------------------------------------------------
// 5-8. End-to-end experiment

struct E2E {
    bool ran = false;
    double seconds = 0.0;
    json metrics;
    fs::path dir;
    std::string error;
};

E2E run_once(const RunConfig& base, const fs::path& dir) {
    E2E r;
    r.dir = dir;
    RunConfig cfg = base;
    cfg.output_dir = dir.string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.metrics = run_experiment(cfg, dir).metrics;
        r.ran = true;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// Metric files that must match across runs. config.json names the output directory and
// timing files hold wall times, so both are left out.
std::vector<fs::path> metric_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        const auto name = e.path().filename().string();
        if (ext != ".json" && ext != ".csv" && ext != ".jsonl") continue;
        if (name == "config.json" || name.find("timing") != std::string::npos) continue;
        out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

Checks criterion_end_to_end(const E2E& r) {
    Checks c;
    if (!r.ran) {
        c.expect(false, "experiment failed: " + r.error);
        return c;
    }
    const json& m = r.metrics;
    const double f1 = m.at("discriminator").at("f1").get<double>();
    c.expect(f1 >= 0.90, "D test F1 " + fmt(f1) + " (need >= 0.90)");
    if (!m.contains("saliency_iou") || m.at("saliency_iou").is_null()) {
        c.expect(false, "no saliency IoU (test split has no masks)");
        return c;
    }
    const double sal = m.at("saliency_iou").at("max_iou").get<double>();
    const double cam = m.at("gradcam_iou").at("max_iou").get<double>();
    c.expect(sal >= 0.30, "counterfactual max IoU " + fmt(sal) + " (need >= 0.30)");
    c.expect(sal > cam, "counterfactual IoU " + fmt(sal) + " vs GradCAM " + fmt(cam) + " (need >)");
    c.expect(r.seconds <= 1800.0, "runtime " + fmt(r.seconds) + " s (need <= 1800)");
    c.note("F1 " + fmt(f1) + ", IoU " + fmt(sal) + " vs GradCAM " + fmt(cam) + ", " + fmt(r.seconds) + " s");
    return c;
}

Checks criterion_robustness(const E2E& r) {
    Checks c;
    if (!r.ran) {
        c.expect(false, "experiment failed: " + r.error);
        return c;
    }
    const json& rob = r.metrics.at("robustness");
    const auto& adv = rob.at("pgd_adversarial");
    if (!rob.contains("pgd_plain") || rob.at("pgd_plain").is_null()) {
        c.expect(false, "no plain-classifier sweep (baseline disabled)");
        return c;
    }
    const auto& plain = rob.at("pgd_plain");
    c.expect(adv.size() == plain.size() && !adv.empty(), "PGD grids differ");
    std::size_t wins = 0;
    std::ostringstream grid;
    for (std::size_t i = 0; i < std::min(adv.size(), plain.size()); ++i) {
        const double a = adv[i].at("f1").get<double>(), p = plain[i].at("f1").get<double>();
        wins += a >= p;
        grid << (i ? " " : "") << fmt(a) << (a >= p ? ">=" : "<") << fmt(p);
    }
    const double share = adv.empty() ? 0.0 : double(wins) / double(adv.size());
    c.expect(share >= 0.70, "adversarial F1 >= plain F1 at " + std::to_string(wins) + "/" + std::to_string(adv.size()) +
                                " PGD points [" + grid.str() + "] (need 70%)");
    const auto& noise = rob.at("noise_adversarial");
    std::ostringstream pf;
    bool monotone = true;
    for (std::size_t i = 0; i < noise.size(); ++i) {
        const double v = noise[i].at("mean_p_fake").get<double>();
        pf << (i ? " " : "") << fmt(v);
        if (i > 0 && v < noise[i - 1].at("mean_p_fake").get<double>()) monotone = false;
    }
    c.expect(monotone, "mean p_fake under noise not non-decreasing [" + pf.str() + "]");
    c.note("PGD " + std::to_string(wins) + "/" + std::to_string(adv.size()) + ", p_fake [" + pf.str() + "]");
    return c;
}

Checks criterion_uncertainty(const E2E& r) {
    Checks c;
    if (!r.ran) {
        c.expect(false, "experiment failed: " + r.error);
        return c;
    }
    for (const char* path : {"discriminator_path", "generator_path"}) {
        const json& p = r.metrics.at("pearson").at(path);
        if (p.at("r").is_null()) {
            c.expect(false, std::string(path) + ": r undefined (" + p.value("reason", std::string()) + ")");
            continue;
        }
        const double v = p.at("r").get<double>();
        c.expect(v > 0.0, std::string(path) + " r = " + fmt(v) + " (need > 0)");
        c.note(std::string(path) + " r = " + fmt(v));
    }
    return c;
}

Checks criterion_determinism(const E2E& a, const E2E& b) {
    Checks c;
    if (!a.ran || !b.ran) {
        c.expect(false, "an experiment run failed");
        return c;
    }
    const auto fa = metric_files(a.dir), fb = metric_files(b.dir);
    c.expect(fa == fb, "runs wrote different sets of metric files");
    for (const auto& f : fa) c.expect(slurp(a.dir / f) == slurp(b.dir / f), f.string() + " differs between runs");
    c.note(std::to_string(fa.size()) + " metric files compared");
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string criteria = "1,2,3,4,5,6,7,8";
    std::string config = CFGAN_SOURCE_DIR "/configs/e2e.json";
    std::string workdir = "acceptance_runs";
    app.add_option("--criteria", criteria, "Comma-separated criterion numbers");
    app.add_option("--config", config, "End-to-end run config");
    app.add_option("--workdir", workdir, "Where end-to-end runs write their outputs");
    CLI11_PARSE(app, argc, argv);

    std::set<int> wanted;
    {
        std::stringstream ss(criteria);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) wanted.insert(std::stoi(tok));
    }

    bool all_passed = true;
    auto report = [&](int id, const std::string& name, const Checks& c, double secs) {
        all_passed = all_passed && c.passed();
        std::cout << "criterion " << id << " [" << name << "]: " << (c.passed() ? "PASS" : "FAIL") << " (" << fmt(secs)
                  << " s) " << c.summary() << std::endl;
    };
    auto timed = [&](int id, const std::string& name, const std::function<Checks()>& f) {
        if (!wanted.count(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        const Checks c = f();
        report(id, name, c, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };

    timed(1, "loss identities", criterion_losses);
    timed(2, "gradients", criterion_gradients);
    timed(3, "PGD contract", criterion_pgd);
    timed(4, "metric oracles", criterion_metrics);

    if (wanted.count(5) || wanted.count(6) || wanted.count(7) || wanted.count(8)) {
        RunConfig cfg;
        try {
            cfg = load_config(config);
        } catch (const std::exception& e) {
            std::cout << "cannot load " << config << ": " << e.what() << std::endl;
            return 1;
        }
        const fs::path root = workdir;
        const E2E first = run_once(cfg, root / "run_a");
        timed(5, "synthetic end-to-end", [&] { return criterion_end_to_end(first); });
        timed(6, "robustness direction", [&] { return criterion_robustness(first); });
        timed(7, "uncertainty direction", [&] { return criterion_uncertainty(first); });
        if (wanted.count(8)) {
            const E2E second = run_once(cfg, root / "run_b");
            timed(8, "determinism", [&] { return criterion_determinism(first, second); });
        }
    }
    return all_passed ? 0 : 1;
}
