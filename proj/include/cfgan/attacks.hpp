#pragma once

// Input perturbations: targeted PGD and additive Gaussian noise, plus strength sweeps.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfgan/autograd.hpp"

namespace cfgan::attacks {

struct AttackConfig {
    std::string kind = "pgd_targeted";  // pgd_targeted | gaussian_noise
    double step_size = 0.01;
    int iterations = 10;
    double epsilon = 0.0;  // L-inf budget; 0 means step_size * iterations
    double sigma = 0.0;
    std::uint64_t seed = 0;

    double effective_epsilon() const { return epsilon > 0.0 ? epsilon : step_size * iterations; }
    void validate() const;
};

// Loss to minimise, scalar or per sample (summed).
using LossFn = std::function<Var(const Var& x)>;
// [N, K] class probabilities; K = 3 adds p_fake in the last column.
using ProbFn = std::function<Var(const Var& x)>;

inline constexpr double kPixelMin = -1.0;
inline constexpr double kPixelMax = 1.0;

// x <- clip(x - alpha * sign(grad L)), projected to the eps ball around x and the pixel range.
// `trace`, when given, receives L at each iterate including the final one.
Tensor pgd(const LossFn& loss, const Tensor& x, const AttackConfig& cfg, std::vector<double>* trace = nullptr);
// Targeted PGD minimising -log p_target.
Tensor pgd_attack(const ProbFn& probs, const Tensor& x, std::span<const int> target, const AttackConfig& cfg);

// N(0, sigma^2) noise drawn from `seed`, before any clipping.
Tensor gaussian_eta(const Shape& shape, double sigma, std::uint64_t seed);
Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed);

struct SweepPoint {
    double strength = 0.0;
    double f1 = 0.0;
    double mean_p_fake = 0.0;
    bool has_p_fake = false;
};

// Perturbs the whole set at each strength (step size for PGD, sigma for noise) and scores it.
// PGD targets the opposite of each true label. Strength 0 leaves the inputs untouched.
std::vector<SweepPoint> robustness_sweep(const ProbFn& probs, const Tensor& images, std::span<const int> labels,
                                         const std::string& kind, std::span<const double> strengths,
                                         const AttackConfig& base, std::int64_t batch = 50);

}  // namespace cfgan::attacks
