#include "cfgan/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cfgan/discriminator.hpp"
#include "cfgan/evaluation.hpp"
#include "cfgan/losses.hpp"
#include "cfgan/seed.hpp"

namespace cfgan::attacks {

void AttackConfig::validate() const {
    if (kind != "pgd_targeted" && kind != "gaussian_noise")
        throw std::invalid_argument("attack.kind must be pgd_targeted or gaussian_noise, got " + kind);
    if (kind == "pgd_targeted") {
        if (!(step_size > 0.0)) throw std::invalid_argument("attack.step_size must be > 0");
        if (iterations < 1) throw std::invalid_argument("attack.iterations must be >= 1");
        if (epsilon != 0.0 && epsilon < step_size) throw std::invalid_argument("attack.epsilon must be >= step_size");
    }
    if (sigma < 0.0) throw std::invalid_argument("attack.sigma must be >= 0");
}

namespace {

double objective(const LossFn& loss, const Tensor& x, Tensor* grad) {
    Var v(x, grad != nullptr);
    Var l = loss(v);
    if (l.numel() != 1) l = ops::sum(l);
    if (grad) {
        if (!l.requires_grad()) throw std::invalid_argument("pgd: model output is not differentiable w.r.t. the input");
        l.backward();
        *grad = v.grad();
    }
    return l.item();
}

}  // namespace

Tensor pgd(const LossFn& loss, const Tensor& x, const AttackConfig& cfg, std::vector<double>* trace) {
    cfg.validate();
    const double eps = cfg.effective_epsilon();
    Tensor adv = x;
    for (auto& v : adv.data()) v = std::clamp(v, kPixelMin, kPixelMax);
    Tensor grad;
    for (int it = 0; it < cfg.iterations; ++it) {
        const double l = objective(loss, adv, &grad);
        if (trace) trace->push_back(l);
        for (std::int64_t i = 0; i < adv.numel(); ++i) {
            const double g = grad[i];
            const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
            double v = adv[i] - cfg.step_size * s;
            v = std::clamp(v, x[i] - eps, x[i] + eps);
            adv[i] = std::clamp(v, kPixelMin, kPixelMax);
        }
    }
    if (trace) trace->push_back(objective(loss, adv, nullptr));
    return adv;
}

Tensor pgd_attack(const ProbFn& probs, const Tensor& x, std::span<const int> target, const AttackConfig& cfg) {
    if (static_cast<std::int64_t>(target.size()) != x.dim(0)) throw std::invalid_argument("pgd_attack: one target per sample");
    std::vector<std::int64_t> idx(target.begin(), target.end());
    LossFn loss = [&](const Var& v) {
        return -ops::sum(ops::log(ops::clamp(ops::pick(probs(v), idx), losses::kProbEps, 1.0 - losses::kProbEps)));
    };
    return pgd(loss, x, cfg);
}

Tensor gaussian_eta(const Shape& shape, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
    Tensor eta(shape);
    if (sigma == 0.0) return eta;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& v : eta.data()) v = normal(rng);
    return eta;
}

Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed) {
    if (sigma == 0.0) return x;
    Tensor out = x;
    const Tensor eta = gaussian_eta(x.shape(), sigma, seed);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i] + eta[i], kPixelMin, kPixelMax);
    return out;
}

std::vector<SweepPoint> robustness_sweep(const ProbFn& probs, const Tensor& images, std::span<const int> labels,
                                         const std::string& kind, std::span<const double> strengths,
                                         const AttackConfig& base, std::int64_t batch) {
    if (images.rank() != 4 || images.dim(0) == 0) throw std::invalid_argument("robustness_sweep: empty dataset");
    if (static_cast<std::int64_t>(labels.size()) != images.dim(0))
        throw std::invalid_argument("robustness_sweep: one label per image");
    if (!std::is_sorted(strengths.begin(), strengths.end()))
        throw std::invalid_argument("robustness_sweep: strengths must be sorted ascending");
    if (kind != "pgd_targeted" && kind != "gaussian_noise")
        throw std::invalid_argument("robustness_sweep: unknown kind " + kind);

    std::vector<SweepPoint> curve;
    const std::int64_t n = images.dim(0);
    for (std::size_t si = 0; si < strengths.size(); ++si) {
        const double strength = strengths[si];
        std::vector<int> preds;
        double fake_sum = 0.0;
        bool has_fake = false;
        for (std::int64_t s = 0; s < n; s += batch) {
            const std::int64_t e = std::min(n, s + batch);
            Tensor x = images.slice_rows(s, e);
            if (strength > 0.0) {
                AttackConfig cfg = base;
                cfg.kind = kind;
                if (kind == "pgd_targeted") {
                    cfg.step_size = strength;
                    cfg.epsilon = 0.0;
                    std::vector<int> target;
                    for (std::int64_t i = s; i < e; ++i) target.push_back(1 - labels[static_cast<std::size_t>(i)]);
                    x = pgd_attack(probs, x, target, cfg);
                } else {
                    // Same draws at every sigma, so strengths differ only in scale.
                    x = gaussian_noise(x, strength, derive_seed({base.seed, tag(Stream::attack), static_cast<std::uint64_t>(s)}));
                }
            }
            NoGradGuard guard;
            const Tensor p = probs(Var(x)).value();
            const auto batch_preds = predict_classes(p);
            preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
            if (p.dim(1) >= 3) {
                has_fake = true;
                for (std::int64_t i = 0; i < p.dim(0); ++i) fake_sum += p[i * p.dim(1) + 2];
            }
        }
        SweepPoint pt;
        pt.strength = strength;
        pt.f1 = eval::classification_metrics(preds, labels).f1;
        pt.has_p_fake = has_fake;
        pt.mean_p_fake = has_fake ? fake_sum / static_cast<double>(n) : 0.0;
        curve.push_back(pt);
    }
    return curve;
}

}  // namespace cfgan::attacks
