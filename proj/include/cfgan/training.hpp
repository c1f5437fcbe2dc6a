#pragma once

// Adversarial optimisation of G and D.
//
// Every random draw (batch composition, augmentation, latent codes, dropout masks)
// comes from a stream keyed by (seed, step, purpose), so a run resumed from a
// checkpoint replays exactly the steps an uninterrupted run would have taken.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfgan/checkpoint.hpp"
#include "cfgan/data.hpp"
#include "cfgan/discriminator.hpp"
#include "cfgan/evaluation.hpp"
#include "cfgan/generator.hpp"
#include "cfgan/losses.hpp"

namespace cfgan {

struct TrainConfig {
    std::int64_t steps = 2000;
    std::int64_t batch_size = 16;
    std::int64_t d_updates_per_g_update = 2;
    // Initial steps that train D on real data only, as a classifier, before G joins.
    std::int64_t d_warmup_steps = 0;
    nn::AdamConfig g_optim;
    nn::AdamConfig d_optim;
    LossWeights weights;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::int64_t eval_every = 250;      // 0 disables validation
    bool adversarial = true;            // false trains D as a plain two-class classifier on real data
    bool augment = true;
    AugmentConfig augmentation;
    std::int64_t collapse_patience = 100;
    double collapse_std = 1e-4;

    void validate() const;
};

// Deterministic latent / dropout stream for one purpose at one step.
struct StepStreams {
    Rng latent;
    Rng dropout;
};
StepStreams step_streams(std::uint64_t seed, std::int64_t step, std::uint64_t purpose);

// [G^1(x), ..., G^c(x)], a fresh latent per application.
std::vector<Var> generate_nested_counterfactuals(const Generator& g, const Var& x, int cycles, Rng& latent_rng,
                                                 Rng& dropout_rng);

struct FitResult {
    std::int64_t steps_run = 0;
    double best_val_f1 = -1.0;
    std::int64_t best_step = -1;
};

struct FitOptions {
    std::filesystem::path out_dir;  // empty: no files written
    std::string config_hash;
    // Extra fields embedded in every checkpoint's metadata.
    nlohmann::json checkpoint_meta = nlohmann::json::object();
};

class Trainer {
public:
    Trainer(GeneratorConfig gcfg, DiscriminatorConfig dcfg, TrainConfig tcfg);

    Generator& generator() { return g_; }
    Discriminator& discriminator() { return d_; }
    const Generator& generator() const { return g_; }
    const Discriminator& discriminator() const { return d_; }
    const TrainConfig& config() const { return tcfg_; }

    std::int64_t step() const { return step_; }
    std::int64_t g_updates() const { return g_updates_; }
    std::int64_t d_updates() const { return d_updates_; }
    bool g_update_due() const;
    bool warming_up() const { return step_ < tcfg_.d_warmup_steps; }

    // One optimisation step on class-0 and class-1 sub-batches in model range.
    LossBreakdown train_step(const Tensor& x0, const Tensor& x1);

    // Runs steps until config().steps, validating, checkpointing and tracking the best D by val F1.
    FitResult fit(const Dataset& train, const Dataset* val, const FitOptions& opts = {});

    Checkpoint to_checkpoint() const;
    void load_checkpoint(const Checkpoint& ckpt);
    // Swaps the best-validation weights in, when any were recorded.
    bool restore_best();

    // Where a diagnostic checkpoint goes when a loss turns non-finite; empty disables it.
    std::filesystem::path diagnostics_path;

private:
    void diverged(const std::string& what, double value);
    double validate_f1(const Dataset& val) const;

    GeneratorConfig gcfg_;
    DiscriminatorConfig dcfg_;
    TrainConfig tcfg_;
    Generator g_;
    Discriminator d_;
    nn::Adam g_opt_, d_opt_;
    std::int64_t step_ = 0, g_updates_ = 0, d_updates_ = 0, collapse_run_ = 0;
    double best_f1_ = -1.0;
    std::int64_t best_step_ = -1;
    std::vector<Tensor> best_g_, best_d_;
};

nlohmann::json breakdown_json(const LossBreakdown& b);

}  // namespace cfgan
