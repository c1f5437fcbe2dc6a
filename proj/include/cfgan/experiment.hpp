#pragma once

// End-to-end pipeline shared by the CLI and the acceptance runner: data, training,
// evaluation, robustness sweeps and explanation panels.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfgan/config.hpp"
#include "cfgan/training.hpp"

namespace cfgan {

struct DataSplits {
    Dataset train, val, test;
};

// Synthetic generation or folder ingestion, per the data section.
Dataset load_dataset(const RunConfig& cfg);
// Split by source id, so no source straddles two splits.
DataSplits split_data(const RunConfig& cfg, const Dataset& all);

// What every artifact records about where it came from.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string checkpoint_hash;  // empty when the models were not loaded from a file
    std::string dataset_id;

    nlohmann::json to_json() const;
};

// Test images in model range with labels and masks, center-cropped to the working size.
struct EvalSet {
    Tensor images;  // [N, C, H, W] in [-1, 1]
    std::vector<int> labels;
    std::vector<Tensor> masks;  // [H, W]; empty when unknown
    std::vector<std::string> ids;
};
EvalSet make_eval_set(const Dataset& data, std::int64_t size);

// Counterfactuals G(x) with latent and dropout streams keyed by (seed, batch start).
Tensor counterfactuals(const Generator& g, const Tensor& images, std::uint64_t seed, std::int64_t batch);
// G's class-branch probabilities under the same streams.
Tensor generator_class_probs(const Generator& g, const Tensor& images, std::uint64_t seed, std::int64_t batch);

struct EvalSummary {
    eval::ClassificationMetrics d_metrics, g_metrics;
    std::optional<eval::IouCurve> saliency_iou, gradcam_iou;
    eval::FidReport fid;
    eval::PearsonResult pearson_d, pearson_g;
};

// Classification, saliency vs GradCAM IoU, FID subsets and the uncertainty correlation.
// Writes report.json, iou_curve.csv/png and pearson.csv under `out`.
EvalSummary evaluate_models(const Generator& g, const Discriminator& d, const EvalSet& test, const RunConfig& cfg,
                            const Provenance& prov, const std::filesystem::path& out);

struct SweepSet {
    std::string kind;       // pgd_targeted | gaussian_noise
    std::string path_name;  // which predictor was attacked
    std::vector<attacks::SweepPoint> points;
};

std::vector<attacks::SweepPoint> sweep_discriminator(const Discriminator& d, const EvalSet& test, const RunConfig& cfg,
                                                     const std::string& kind);
std::vector<attacks::SweepPoint> sweep_generator(const Generator& g, const EvalSet& test, const RunConfig& cfg,
                                                 const std::string& kind);
// robustness_<kind>.csv and .png with one f1 column (and p_fake column) per path.
void write_sweeps(const std::vector<SweepSet>& sweeps, const RunConfig& cfg, const Provenance& prov,
                  const std::filesystem::path& out);

// Input, counterfactual, saliency and GradCAM images per input plus a combined panel.
void write_explanations(const Generator& g, const Discriminator& d, const Tensor& images,
                        const std::vector<std::string>& names, const RunConfig& cfg, const std::filesystem::path& out);

struct ExperimentResult {
    EvalSummary summary;
    std::vector<attacks::SweepPoint> pgd_adversarial, pgd_plain, noise_adversarial;
    nlohmann::json metrics;  // exactly what metrics.json holds
};

// Trains the GAN and the plain classifier, then evaluates everything. Deterministic artifacts
// (metrics.json, report.json, CSVs) go to `out`; wall times go to timing.json.
ExperimentResult run_experiment(const RunConfig& cfg, const std::filesystem::path& out);

// Metadata stored in every checkpoint written for `cfg`.
nlohmann::json checkpoint_meta(const RunConfig& cfg, const std::string& dataset_id);

// Rebuilds a trainer for `cfg` and loads a checkpoint into it. A checkpoint trained under a
// different config is a ConfigError unless allow_mismatch, which downgrades it to a warning.
Trainer trainer_from_checkpoint(const RunConfig& cfg, const std::filesystem::path& checkpoint, bool use_best,
                                bool allow_mismatch = false);

}  // namespace cfgan
