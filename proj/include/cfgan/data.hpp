#pragma once

// Labeled image sources: procedural crack scenes, on-disk folders, augmentation,
// leak-safe splits and class-balanced batches.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfgan/autograd.hpp"
#include "cfgan/tensor.hpp"

namespace cfgan {

struct LabeledImage {
    Tensor image;    // [C, H, W] in [0, 1]
    int label = 0;   // 0 undamaged, 1 damaged
    Tensor gt_mask;  // [H, W] of 0/1, empty when unknown
    std::string source_id;
};

struct BackgroundSpec {
    std::array<double, 3> base_color{0.55, 0.55, 0.55};
    double noise_amplitude = 0.05;
    double blur_radius = 1.0;  // Gaussian sigma of the noise field, px
};

struct DefectSpec {
    std::vector<std::array<double, 2>> points;  // (x, y) pixel centres of the polyline
    double thickness = 2.0;                     // px
    double intensity_delta = -0.3;
};

struct SyntheticSceneSpec {
    std::int64_t canvas_size = 64;
    std::int64_t channels = 3;
    BackgroundSpec background;
    std::optional<DefectSpec> defect;
    std::uint64_t rng_seed = 0;
};

// Pixel (x, y) is defect iff its centre lies within thickness / 2 of the polyline.
LabeledImage generate_synthetic_scene(const SyntheticSceneSpec& spec);

struct SyntheticDataConfig {
    std::int64_t count = 2000;
    double defect_rate = 0.5;
    std::int64_t canvas_size = 64;
    std::int64_t channels = 3;
    double thickness_min = 1.5;
    double thickness_max = 3.0;
    double intensity_min = 0.25;  // magnitude of the darkening
    double intensity_max = 0.4;
    std::uint64_t seed = 7;

    void validate() const;
};

// Random scene parameters for item `index`; damaged decides whether a defect is drawn.
SyntheticSceneSpec random_scene_spec(const SyntheticDataConfig& cfg, std::int64_t index, bool damaged);

struct AugmentConfig {
    std::int64_t working_size = 64;
    double crop_min = 0.85;  // smallest crop side as a fraction of the source side
    double brightness = 0.1;
    double hue = 0.05;
    double blur_sigma_max = 1.0;
    bool flips = true;
    bool rotations = true;

    void validate() const;
};

// Random crop + resize, photometric jitter and dihedral transforms. The mask gets the geometric part only.
LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, Rng& rng);
// Largest centred square, resized to `working_size`.
LabeledImage center_crop(const LabeledImage& img, std::int64_t working_size);

struct SplitSpec {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<std::string> train, val, test;
};

// Sizes are floor(n * ratio) for val and test; the remainder goes to train.
Split split_dataset(std::vector<std::string> sources, const SplitSpec& spec);

class Dataset {
public:
    std::vector<LabeledImage> items;
    std::string id;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    bool has_masks() const;
    std::int64_t count(int label) const;
    std::vector<std::size_t> indices_of(int label) const;
    // Sorted unique source ids.
    std::vector<std::string> source_ids() const;
    Dataset subset(const std::vector<std::string>& sources, const std::string& suffix) const;
    Dataset center_cropped(std::int64_t working_size) const;
};

Dataset make_synthetic_dataset(const SyntheticDataConfig& cfg);

struct FolderLayout {
    std::map<std::string, int> class_dirs{{"undamaged", 0}, {"damaged", 1}};
    std::string mask_dir;  // masks named <stem>.png; empty disables masks
    std::string source_regex = "^(.*)$";  // first group of the file stem names the source
    std::int64_t channels = 3;
    std::vector<std::string> extensions{".png", ".jpg", ".jpeg", ".bmp"};
};

// Throws DataError for a missing root or an empty class. Unreadable files are skipped.
Dataset ingest_folder(const std::filesystem::path& root, const FolderLayout& layout);

// Writes undamaged/, damaged/, masks/ and manifest.json; returns the manifest text.
std::string write_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& extra_json = "{}");

// Half of each batch from each class; stateless in the step index.
class BalancedSampler {
public:
    BalancedSampler(const Dataset& data, std::int64_t batch_size, std::uint64_t seed);
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> draw(std::int64_t step) const;

private:
    std::vector<std::size_t> take(int label, std::int64_t step, std::int64_t count) const;

    std::array<std::vector<std::size_t>, 2> by_class_;
    std::int64_t batch_size_;
    std::uint64_t seed_;
};

struct Batch {
    Tensor images;  // [N, C, H, W] in [-1, 1]
    std::vector<int> labels;
    std::vector<Tensor> masks;  // may be empty tensors
};

Tensor to_model_range(const Tensor& unit);
Tensor to_unit_range(const Tensor& model);

// Stacks items; with `aug` each sample is augmented from a stream keyed by (seed, source id, position).
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentConfig* aug,
                 std::uint64_t seed);

}  // namespace cfgan
