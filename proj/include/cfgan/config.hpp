#pragma once

// One declarative run document: data, models, losses, training, attacks and evaluation grids.
// Unknown keys anywhere are rejected; missing keys keep their defaults.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfgan/attacks.hpp"
#include "cfgan/data.hpp"
#include "cfgan/discriminator.hpp"
#include "cfgan/generator.hpp"
#include "cfgan/training.hpp"

namespace cfgan {

struct DataSection {
    std::string source = "synthetic";  // synthetic | folder
    std::string root;                  // folder source only
    SyntheticDataConfig synthetic;
    FolderLayout layout;
    SplitSpec split;
    bool augment = true;
    AugmentConfig augmentation;
};

struct AttackSection {
    std::vector<double> pgd_strengths{0.0, 0.002, 0.005, 0.01, 0.02, 0.05};
    std::vector<double> noise_strengths{0.0, 0.05, 0.1, 0.2, 0.3, 0.5};
    int iterations = 10;
    double epsilon = 0.0;  // 0: step size * iterations
    std::int64_t batch_size = 50;
};

struct EvalSection {
    std::vector<double> quantiles = eval::default_quantiles();
    std::int64_t batch_size = 64;
    std::int64_t embedder_dim = 64;
    std::uint64_t embedder_seed = 1234;
    std::int64_t panels = 8;  // explanation panels written by the experiment
};

// Identically built D trained without the GAN loop, for the robustness comparison.
struct BaselineSection {
    bool enabled = true;
    std::int64_t steps = -1;  // -1: same as train.steps
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/default";
    DataSection data;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    LossWeights loss;
    TrainConfig train;  // train.seed and train.weights are taken from seed and loss
    AttackSection attack;
    EvalSection evaluation;
    BaselineSection baseline;

    // Applies cross-section consistency (image size, channels, seeds) and validates every section.
    void finalize();
    TrainConfig train_config() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);
// SHA-256 of the canonical JSON form, output directory excluded.
std::string config_hash(const RunConfig& cfg);
// Same, over only the sections that shape trained weights; checkpoints are matched on this.
std::string training_hash(const RunConfig& cfg);

}  // namespace cfgan
