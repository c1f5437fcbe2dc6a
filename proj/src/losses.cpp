#include "cfgan/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cfgan {

void LossWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw std::invalid_argument("loss weights must be nonnegative");
    if (!(lambda_c > 0.0 && lambda_c <= 1.0)) throw std::invalid_argument("lambda_c must be in (0, 1]");
    if (cycles < 1) throw std::invalid_argument("cycles must be >= 1");
    if (generator_objective != "minimax" && generator_objective != "non_saturating")
        throw std::invalid_argument("generator_objective must be minimax or non_saturating, got " + generator_objective);
}

namespace losses {
namespace {

void require_triples(const Var& p, const char* what) {
    if (!p.defined() || p.value().rank() != 2 || p.dim(1) != 3)
        throw std::invalid_argument(std::string(what) + ": expected [N, 3] probabilities");
    if (p.dim(0) == 0) throw std::invalid_argument(std::string(what) + ": empty sub-batch");
}

// Class terms and fake term of the adversarial objective, kept apart for the cycle weighting.
std::pair<Var, Var> adversarial_parts(const Var& gen0, const Var& gen1) {
    require_triples(gen0, "generator_adversarial_loss");
    require_triples(gen1, "generator_adversarial_loss");
    Var classes = mean_log_prob(gen0, 0) + mean_log_prob(gen1, 1);
    Var fake = mean_log_prob(ops::concat({gen0, gen1}, 0), 2);
    return {classes, fake};
}

std::pair<Var, Var> non_saturating_parts(const Var& gen0, const Var& gen1) {
    require_triples(gen0, "generator_non_saturating_loss");
    require_triples(gen1, "generator_non_saturating_loss");
    Var classes = -(mean_log_prob(gen0, 1) + mean_log_prob(gen1, 0));
    Var real = ops::add_scalar(-ops::column(ops::concat({gen0, gen1}, 0), 2), 1.0);
    Var fake = -ops::mean(ops::log(ops::clamp(real, kProbEps, 1.0 - kProbEps)));
    return {classes, fake};
}

}  // namespace

Var mean_log_prob(const Var& probs, std::int64_t col) {
    return ops::mean(ops::log(ops::clamp(ops::column(probs, col), kProbEps, 1.0 - kProbEps)));
}

Var discriminator_loss(const Var& real0, const Var& real1, const Var& fake) {
    require_triples(real0, "discriminator_loss");
    require_triples(real1, "discriminator_loss");
    require_triples(fake, "discriminator_loss");
    return -(mean_log_prob(real0, 0) + mean_log_prob(real1, 1) + mean_log_prob(fake, 2));
}

Var generator_adversarial_loss(const Var& gen0, const Var& gen1) {
    auto [classes, fake] = adversarial_parts(gen0, gen1);
    return classes + fake;
}

Var generator_non_saturating_loss(const Var& gen0, const Var& gen1) {
    auto [classes, fake] = non_saturating_parts(gen0, gen1);
    return classes + fake;
}

Var generator_aux_class_loss(const Var& class_probs, std::span<const int> labels) {
    if (class_probs.value().rank() != 2 || class_probs.dim(1) != 2 ||
        class_probs.dim(0) != static_cast<std::int64_t>(labels.size()))
        throw std::invalid_argument("generator_aux_class_loss: expected [N, 2] probabilities and N labels");
    if (labels.empty()) throw std::invalid_argument("generator_aux_class_loss: empty batch");
    std::vector<std::int64_t> idx;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("generator_aux_class_loss: label " + std::to_string(y));
        idx.push_back(y);
    }
    return -ops::mean(ops::log(ops::clamp(ops::pick(class_probs, idx), kProbEps, 1.0 - kProbEps)));
}

Var sparsity_loss(const Var& x, const Var& x_hat) {
    if (x.shape() != x_hat.shape())
        throw std::invalid_argument("sparsity_loss: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(x_hat.shape()));
    return ops::mean(ops::abs(x - x_hat));
}

Var cycle_loss(const std::vector<NestedTriples>& nested, const LossWeights& w) {
    if (static_cast<int>(nested.size()) != w.cycles)
        throw std::invalid_argument("cycle_loss: got " + std::to_string(nested.size()) + " levels for " +
                                    std::to_string(w.cycles) + " cycles");
    Var total;
    for (std::size_t i = 0; i < nested.size(); ++i) {
        auto [classes, fake] = w.generator_objective == "non_saturating"
                                   ? non_saturating_parts(nested[i].gen0, nested[i].gen1)
                                   : adversarial_parts(nested[i].gen0, nested[i].gen1);
        const double mag = std::pow(w.lambda_c, static_cast<double>(i));
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        const double fake_coef = w.cycle_fake_sign_alternates ? sign * mag : mag;
        Var term = i == 0 ? classes + fake : sign * mag * classes + fake_coef * fake;
        total = total.defined() ? total + term : term;
    }
    return total;
}

LossBreakdown total_loss(LossBreakdown parts, const LossWeights& w) {
    parts.total = parts.l_D + w.lambda1 * parts.l_G_c + w.lambda2 * parts.l_G_cls + w.lambda3 * parts.l_G_s + parts.l_vq;
    return parts;
}

}  // namespace losses
}  // namespace cfgan
