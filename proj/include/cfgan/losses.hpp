#pragma once

// Training objectives. Probability inputs are [N, K] rows on the simplex; every
// expectation is a mean over the rows given.

#include <span>
#include <string>
#include <vector>

#include "cfgan/autograd.hpp"

namespace cfgan {

struct LossWeights {
    double lambda1 = 1.0;   // adversarial / cycle term
    double lambda2 = 1.0;   // auxiliary classification
    double lambda3 = 0.1;   // sparsity
    double lambda_c = 0.5;  // nested-counterfactual decay
    int cycles = 1;
    // When false the fake term of cycle i is weighted by lambda_c^(i-1) without the sign flip.
    bool cycle_fake_sign_alternates = true;
    // "minimax": G minimises the log-probabilities D assigns to the source class and to fake.
    // "non_saturating": G maximises log p_opposite and log(1 - p_fake) instead, which keeps
    // its gradient alive when D rejects counterfactuals with confidence.
    std::string generator_objective = "minimax";

    void validate() const;
};

struct LossBreakdown {
    double l_D = 0.0;
    double l_G = 0.0;
    double l_G_cls = 0.0;
    double l_G_s = 0.0;
    double l_G_c = 0.0;
    double l_vq = 0.0;
    double total = 0.0;
};

// D outputs on the counterfactuals of class-0 and class-1 inputs for one nesting level.
struct NestedTriples {
    Var gen0;
    Var gen1;
};

namespace losses {

inline constexpr double kProbEps = 1e-7;

// mean over rows of log(clamp(p[:, col]))
Var mean_log_prob(const Var& probs, std::int64_t col);

Var discriminator_loss(const Var& real0, const Var& real1, const Var& fake);
Var generator_adversarial_loss(const Var& gen0, const Var& gen1);
// -(mean log p1(gen0) + mean log p0(gen1) + mean log(1 - p_fake(gen))).
Var generator_non_saturating_loss(const Var& gen0, const Var& gen1);
Var generator_aux_class_loss(const Var& class_probs, std::span<const int> labels);
Var sparsity_loss(const Var& x, const Var& x_hat);
// Per-level adversarial terms (minimax or non-saturating, per w) with weights (-lambda_c)^(i-1).
Var cycle_loss(const std::vector<NestedTriples>& nested, const LossWeights& w);

// Fills parts.total from the other components.
LossBreakdown total_loss(LossBreakdown parts, const LossWeights& w);

}  // namespace losses
}  // namespace cfgan
