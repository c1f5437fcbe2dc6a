#include "cfgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <regex>
#include <set>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cfgan/errors.hpp"
#include "cfgan/hash.hpp"
#include "cfgan/image.hpp"
#include "cfgan/seed.hpp"

namespace cfgan {
namespace fs = std::filesystem;

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - a[0]) * dx + (py - a[1]) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a[0] + t * dx - px, ey = a[1] + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

LabeledImage generate_synthetic_scene(const SyntheticSceneSpec& spec) {
    const std::int64_t s = spec.canvas_size;
    if (s < 32) throw std::invalid_argument("synthetic scene: canvas_size must be >= 32");
    if (spec.channels != 1 && spec.channels != 3) throw std::invalid_argument("synthetic scene: channels must be 1 or 3");
    if (spec.background.noise_amplitude < 0.0 || spec.background.blur_radius < 0.0)
        throw std::invalid_argument("synthetic scene: negative background parameter");
    if (spec.defect) {
        const auto& d = *spec.defect;
        if (d.points.empty()) throw std::invalid_argument("synthetic scene: defect needs at least one point");
        if (!(d.thickness > 0.0)) throw std::invalid_argument("synthetic scene: thickness must be positive");
        for (const auto& p : d.points)
            if (!(p[0] >= 0.0 && p[0] <= static_cast<double>(s - 1) && p[1] >= 0.0 && p[1] <= static_cast<double>(s - 1)))
                throw std::invalid_argument("synthetic scene: control point (" + std::to_string(p[0]) + ", " +
                                            std::to_string(p[1]) + ") outside the canvas");
    }

    Rng rng(spec.rng_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor field({1, s, s});
    for (auto& v : field.data()) v = normal(rng);
    field = image::gaussian_blur(field, spec.background.blur_radius);
    double mean = 0.0, sq = 0.0;
    for (double v : field.data()) mean += v;
    mean /= static_cast<double>(field.numel());
    for (double v : field.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(field.numel()));
    const double gain = sd > 0.0 ? spec.background.noise_amplitude / sd : 0.0;

    LabeledImage out;
    out.image = Tensor({spec.channels, s, s});
    out.gt_mask = Tensor({s, s});
    if (spec.defect) {
        const auto& d = *spec.defect;
        const double r = d.thickness / 2.0;
        for (std::int64_t y = 0; y < s; ++y)
            for (std::int64_t x = 0; x < s; ++x) {
                double best = std::numeric_limits<double>::infinity();
                if (d.points.size() == 1)
                    best = segment_distance(static_cast<double>(x), static_cast<double>(y), d.points[0], d.points[0]);
                for (std::size_t i = 0; i + 1 < d.points.size(); ++i)
                    best = std::min(best, segment_distance(static_cast<double>(x), static_cast<double>(y), d.points[i],
                                                           d.points[i + 1]));
                if (best <= r) out.gt_mask[y * s + x] = 1.0;
            }
        out.label = 1;
    }
    const double delta = spec.defect ? spec.defect->intensity_delta : 0.0;
    for (std::int64_t c = 0; c < spec.channels; ++c) {
        const double base = spec.background.base_color[static_cast<std::size_t>(spec.channels == 1 ? 0 : c)];
        for (std::int64_t i = 0; i < s * s; ++i) {
            const double v = base + gain * (field[i] - mean) + delta * out.gt_mask[i];
            out.image[c * s * s + i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

void SyntheticDataConfig::validate() const {
    if (count < 1) throw std::invalid_argument("data.count must be >= 1");
    if (defect_rate < 0.0 || defect_rate > 1.0) throw std::invalid_argument("data.defect_rate must be in [0, 1]");
    if (canvas_size < 32) throw std::invalid_argument("data.canvas_size must be >= 32");
    if (!(thickness_min > 0.0 && thickness_min <= thickness_max))
        throw std::invalid_argument("data.thickness_min/max must satisfy 0 < min <= max");
    if (!(intensity_min >= 0.0 && intensity_min <= intensity_max))
        throw std::invalid_argument("data.intensity_min/max must satisfy 0 <= min <= max");
}

SyntheticSceneSpec random_scene_spec(const SyntheticDataConfig& cfg, std::int64_t index, bool damaged) {
    Rng rng(derive_seed({cfg.seed, tag(Stream::init), static_cast<std::uint64_t>(index)}));
    SyntheticSceneSpec spec;
    spec.canvas_size = cfg.canvas_size;
    spec.channels = cfg.channels;
    const double gray = uniform(rng, 0.4, 0.7);
    for (auto& c : spec.background.base_color) c = gray + uniform(rng, -0.05, 0.05);
    spec.background.noise_amplitude = uniform(rng, 0.02, 0.06);
    spec.background.blur_radius = uniform(rng, 0.6, 1.6);
    spec.rng_seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(index), 0x5ce4e});
    if (damaged) {
        const double s = static_cast<double>(cfg.canvas_size);
        const double hi = s - 1.0;
        DefectSpec d;
        const int n = std::uniform_int_distribution<int>(3, 5)(rng);
        const double length = uniform(rng, 0.5, 0.9) * s;
        const double step = length / (n - 1);
        double x = uniform(rng, 0.15 * s, 0.85 * s), y = uniform(rng, 0.15 * s, 0.85 * s);
        double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        d.points.push_back({x, y});
        for (int i = 1; i < n; ++i) {
            theta += uniform(rng, -0.6, 0.6);
            x += step * std::cos(theta);
            y += step * std::sin(theta);
            if (x < 0.0 || x > hi) theta = std::numbers::pi - theta;
            if (y < 0.0 || y > hi) theta = -theta;
            x = std::clamp(x, 0.0, hi);
            y = std::clamp(y, 0.0, hi);
            d.points.push_back({x, y});
        }
        d.thickness = uniform(rng, cfg.thickness_min, cfg.thickness_max);
        d.intensity_delta = -uniform(rng, cfg.intensity_min, cfg.intensity_max);
        spec.defect = std::move(d);
    }
    return spec;
}

void AugmentConfig::validate() const {
    if (working_size < 8) throw std::invalid_argument("augment.working_size must be >= 8");
    if (!(crop_min > 0.0 && crop_min <= 1.0)) throw std::invalid_argument("augment.crop_min must be in (0, 1]");
    if (brightness < 0 || hue < 0 || blur_sigma_max < 0) throw std::invalid_argument("augment amplitudes must be >= 0");
}

LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, Rng& rng) {
    const std::int64_t h = img.image.dim(1), w = img.image.dim(2);
    const std::int64_t side_max = std::min(h, w);
    if (side_max < cfg.working_size)
        throw std::invalid_argument("augment: source " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than the working size " + std::to_string(cfg.working_size));
    const auto side_min = std::min(side_max, static_cast<std::int64_t>(std::ceil(cfg.crop_min * side_max - 1e-9)));
    const auto side = std::uniform_int_distribution<std::int64_t>(side_min, side_max)(rng);
    const auto top = std::uniform_int_distribution<std::int64_t>(0, h - side)(rng);
    const auto left = std::uniform_int_distribution<std::int64_t>(0, w - side)(rng);

    LabeledImage out;
    out.label = img.label;
    out.source_id = img.source_id;
    Tensor im = image::resize_bilinear(image::crop(img.image, top, left, side, side), cfg.working_size, cfg.working_size);
    Tensor mask;
    if (!img.gt_mask.empty())
        mask = image::resize_nearest(image::crop(img.gt_mask, top, left, side, side), cfg.working_size, cfg.working_size);

    auto geometric = [&](auto&& fn) {
        im = fn(im);
        if (!mask.empty()) mask = fn(mask);
    };
    if (cfg.flips && std::bernoulli_distribution(0.5)(rng)) geometric(image::flip_horizontal);
    if (cfg.rotations) {
        const int k = std::uniform_int_distribution<int>(0, 3)(rng);
        geometric([k](const Tensor& t) { return image::rot90(t, k); });
    }

    if (cfg.brightness > 0.0) {
        const double b = uniform(rng, -cfg.brightness, cfg.brightness);
        for (auto& v : im.data()) v += b;
    }
    if (cfg.hue > 0.0 && im.dim(0) == 3) {
        for (auto& v : im.data()) v = std::clamp(v, 0.0, 1.0);
        im = image::shift_hue(im, uniform(rng, -cfg.hue, cfg.hue));
    }
    if (cfg.blur_sigma_max > 0.0) im = image::gaussian_blur(im, uniform(rng, 0.0, cfg.blur_sigma_max));
    for (auto& v : im.data()) v = std::clamp(v, 0.0, 1.0);

    out.image = std::move(im);
    out.gt_mask = std::move(mask);
    return out;
}

LabeledImage center_crop(const LabeledImage& img, std::int64_t working_size) {
    const std::int64_t h = img.image.dim(1), w = img.image.dim(2);
    const std::int64_t side = std::min(h, w);
    const std::int64_t top = (h - side) / 2, left = (w - side) / 2;
    LabeledImage out;
    out.label = img.label;
    out.source_id = img.source_id;
    out.image = image::resize_bilinear(image::crop(img.image, top, left, side, side), working_size, working_size);
    if (!img.gt_mask.empty())
        out.gt_mask = image::resize_nearest(image::crop(img.gt_mask, top, left, side, side), working_size, working_size);
    return out;
}

Split split_dataset(std::vector<std::string> sources, const SplitSpec& spec) {
    if (sources.empty()) throw std::invalid_argument("split_dataset: no sources");
    if (spec.train < 0 || spec.val < 0 || spec.test < 0 || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw std::invalid_argument("split_dataset: ratios must be nonnegative and sum to 1");
    std::sort(sources.begin(), sources.end());
    if (std::adjacent_find(sources.begin(), sources.end()) != sources.end())
        throw std::invalid_argument("split_dataset: duplicate source id");
    Rng rng(spec.seed);
    std::shuffle(sources.begin(), sources.end(), rng);
    const auto n = static_cast<double>(sources.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * spec.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test + 1e-9));
    Split out;
    out.val.assign(sources.begin(), sources.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.test.assign(sources.begin() + static_cast<std::ptrdiff_t>(n_val),
                    sources.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    out.train.assign(sources.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), sources.end());
    return out;
}

bool Dataset::has_masks() const {
    return !items.empty() && std::all_of(items.begin(), items.end(), [](const auto& it) { return !it.gt_mask.empty(); });
}

std::int64_t Dataset::count(int label) const {
    return std::count_if(items.begin(), items.end(), [label](const auto& it) { return it.label == label; });
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i].label == label) out.push_back(i);
    return out;
}

std::vector<std::string> Dataset::source_ids() const {
    std::set<std::string> ids;
    for (const auto& it : items) ids.insert(it.source_id);
    return {ids.begin(), ids.end()};
}

Dataset Dataset::subset(const std::vector<std::string>& sources, const std::string& suffix) const {
    const std::set<std::string> keep(sources.begin(), sources.end());
    Dataset out;
    out.id = id + ":" + suffix;
    for (const auto& it : items)
        if (keep.count(it.source_id)) out.items.push_back(it);
    return out;
}

Dataset Dataset::center_cropped(std::int64_t working_size) const {
    Dataset out;
    out.id = id;
    for (const auto& it : items) out.items.push_back(center_crop(it, working_size));
    return out;
}

Dataset make_synthetic_dataset(const SyntheticDataConfig& cfg) {
    cfg.validate();
    const auto damaged = static_cast<std::int64_t>(std::llround(static_cast<double>(cfg.count) * cfg.defect_rate));
    std::vector<std::int64_t> order(static_cast<std::size_t>(cfg.count));
    for (std::int64_t i = 0; i < cfg.count; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed({cfg.seed, tag(Stream::batch)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_damaged(order.size(), false);
    for (std::int64_t i = 0; i < damaged; ++i) is_damaged[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

    Dataset out;
    out.id = "synthetic:n=" + std::to_string(cfg.count) + ",seed=" + std::to_string(cfg.seed);
    char name[32];
    for (std::int64_t i = 0; i < cfg.count; ++i) {
        auto item = generate_synthetic_scene(random_scene_spec(cfg, i, is_damaged[static_cast<std::size_t>(i)]));
        std::snprintf(name, sizeof name, "synth_%05lld", static_cast<long long>(i));
        item.source_id = name;
        out.items.push_back(std::move(item));
    }
    return out;
}

Dataset ingest_folder(const fs::path& root, const FolderLayout& layout) {
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
    if (layout.class_dirs.empty()) throw DataError("folder layout lists no class directories");
    const std::regex source_re(layout.source_regex);
    Dataset out;
    out.id = "folder:" + root.string();
    for (const auto& [dir, label] : layout.class_dirs) {
        if (label != 0 && label != 1) throw DataError("class label for '" + dir + "' must be 0 or 1");
        const fs::path class_dir = root / dir;
        std::vector<fs::path> files;
        if (fs::is_directory(class_dir))
            for (const auto& e : fs::directory_iterator(class_dir)) {
                std::string ext = e.path().extension().string();
                std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
                if (e.is_regular_file() &&
                    std::find(layout.extensions.begin(), layout.extensions.end(), ext) != layout.extensions.end())
                    files.push_back(e.path());
            }
        std::sort(files.begin(), files.end());
        std::int64_t loaded = 0;
        for (const auto& f : files) {
            LabeledImage item;
            try {
                item.image = image::read_image(f, layout.channels);
            } catch (const std::exception& e) {
                spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
                continue;
            }
            item.label = label;
            const std::string stem = f.stem().string();
            std::smatch m;
            item.source_id = std::regex_search(stem, m, source_re) && m.size() > 1 ? m[1].str() : stem;
            if (!layout.mask_dir.empty()) {
                const fs::path mp = root / layout.mask_dir / (stem + ".png");
                if (fs::exists(mp)) {
                    try {
                        item.gt_mask = image::read_mask(mp);
                    } catch (const std::exception& e) {
                        spdlog::warn("skipping unreadable mask {}: {}", mp.string(), e.what());
                    }
                    if (!item.gt_mask.empty() &&
                        (item.gt_mask.dim(0) != item.image.dim(1) || item.gt_mask.dim(1) != item.image.dim(2))) {
                        spdlog::warn("mask {} does not match its image size; ignored", mp.string());
                        item.gt_mask = Tensor();
                    }
                } else if (label == 0) {
                    item.gt_mask = Tensor({item.image.dim(1), item.image.dim(2)});
                }
            }
            out.items.push_back(std::move(item));
            ++loaded;
        }
        if (loaded == 0) throw DataError("class '" + dir + "' has no readable images under " + class_dir.string());
    }
    if (out.count(0) == 0 || out.count(1) == 0) throw DataError("folder layout must provide both classes");
    return out;
}

std::string write_dataset(const Dataset& data, const fs::path& dir, const std::string& extra_json) {
    for (const char* sub : {"undamaged", "damaged", "masks"}) fs::create_directories(dir / sub);
    nlohmann::json manifest = nlohmann::json::parse(extra_json);
    manifest["dataset"] = data.id;
    manifest["count"] = data.size();
    manifest["damaged"] = data.count(1);
    auto& items = manifest["items"] = nlohmann::json::array();
    for (const auto& it : data.items) {
        const std::string rel = std::string(it.label == 1 ? "damaged/" : "undamaged/") + it.source_id + ".png";
        image::write_image(dir / rel, it.image);
        nlohmann::json entry{{"id", it.source_id}, {"label", it.label}, {"image", rel},
                             {"sha256", sha256_file(dir / rel)}};
        if (!it.gt_mask.empty()) {
            const std::string mrel = "masks/" + it.source_id + ".png";
            image::write_mask(dir / mrel, it.gt_mask);
            entry["mask"] = mrel;
        }
        items.push_back(std::move(entry));
    }
    std::string text = manifest.dump(2) + "\n";
    std::ofstream(dir / "manifest.json") << text;
    return text;
}

BalancedSampler::BalancedSampler(const Dataset& data, std::int64_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
    if (batch_size < 2) throw std::invalid_argument("balanced sampler needs batch_size >= 2");
    by_class_[0] = data.indices_of(0);
    by_class_[1] = data.indices_of(1);
    if (by_class_[0].empty() || by_class_[1].empty()) throw DataError("balanced sampler needs both classes present");
}

std::vector<std::size_t> BalancedSampler::take(int label, std::int64_t step, std::int64_t count) const {
    const auto& pool = by_class_[static_cast<std::size_t>(label)];
    const auto n = static_cast<std::int64_t>(pool.size());
    std::vector<std::size_t> perm;
    std::int64_t perm_epoch = -1;
    std::vector<std::size_t> out;
    for (std::int64_t j = 0; j < count; ++j) {
        const std::int64_t pos = step * count + j;
        const std::int64_t epoch = pos / n;
        if (epoch != perm_epoch) {
            perm = pool;
            Rng rng(derive_seed({seed_, tag(Stream::batch), static_cast<std::uint64_t>(label),
                                 static_cast<std::uint64_t>(epoch)}));
            std::shuffle(perm.begin(), perm.end(), rng);
            perm_epoch = epoch;
        }
        out.push_back(perm[static_cast<std::size_t>(pos % n)]);
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> BalancedSampler::draw(std::int64_t step) const {
    const std::int64_t n1 = batch_size_ / 2;
    return {take(0, step, batch_size_ - n1), take(1, step, n1)};
}

Tensor to_model_range(const Tensor& unit) {
    Tensor out = unit;
    for (auto& v : out.data()) v = 2.0 * v - 1.0;
    return out;
}

Tensor to_unit_range(const Tensor& model) {
    Tensor out = model;
    for (auto& v : out.data()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return out;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentConfig* aug,
                 std::uint64_t seed) {
    if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
    std::vector<LabeledImage> picked;
    for (std::size_t p = 0; p < indices.size(); ++p) {
        const auto& it = data.items.at(indices[p]);
        if (aug) {
            Rng rng(derive_seed({seed, tag(Stream::augment), hash_string(it.source_id), p}));
            picked.push_back(augment(it, *aug, rng));
        } else {
            picked.push_back(it);
        }
    }
    const Shape& s = picked[0].image.shape();
    Batch b;
    b.images = Tensor({static_cast<std::int64_t>(picked.size()), s[0], s[1], s[2]});
    const std::int64_t per = shape_numel(s);
    for (std::size_t p = 0; p < picked.size(); ++p) {
        if (picked[p].image.shape() != s) throw std::invalid_argument("make_batch: images differ in shape");
        for (std::int64_t i = 0; i < per; ++i)
            b.images[static_cast<std::int64_t>(p) * per + i] = 2.0 * picked[p].image[i] - 1.0;
        b.labels.push_back(picked[p].label);
        b.masks.push_back(std::move(picked[p].gt_mask));
    }
    return b;
}

}  // namespace cfgan
