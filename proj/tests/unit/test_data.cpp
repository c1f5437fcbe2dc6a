#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "cfgan/data.hpp"
#include "cfgan/errors.hpp"
#include "cfgan/image.hpp"

using namespace cfgan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cfgan_unit_" + name);
    fs::remove_all(p);
    return p;
}

SyntheticDataConfig tiny(std::int64_t count = 12) {
    SyntheticDataConfig c;
    c.count = count;
    c.canvas_size = 32;
    return c;
}

}  // namespace

TEST_CASE("synthetic masks mark exactly the pixels within half the thickness of the polyline") {
    SyntheticSceneSpec spec;
    spec.canvas_size = 32;
    spec.background.noise_amplitude = 0.0;
    spec.defect = DefectSpec{{{4.0, 16.0}, {27.0, 16.0}}, 3.0, -0.3};
    const LabeledImage img = generate_synthetic_scene(spec);
    CHECK(img.label == 1);
    for (std::int64_t y = 0; y < 32; ++y)
        for (std::int64_t x = 0; x < 32; ++x) {
            const double dx = x < 4 ? 4.0 - x : (x > 27 ? x - 27.0 : 0.0);
            const double d = std::hypot(dx, y - 16.0);
            CHECK((img.gt_mask[y * 32 + x] == 1.0) == (d <= 1.5));
            // Flat background, so the defect is exactly delta darker.
            const double expected = 0.55 - (d <= 1.5 ? 0.3 : 0.0);
            CHECK(img.image[y * 32 + x] == doctest::Approx(expected));
        }
}

TEST_CASE("synthetic scenes validate their parameters") {
    SyntheticSceneSpec spec;
    spec.canvas_size = 32;
    spec.defect = DefectSpec{{{40.0, 3.0}}, 2.0, -0.3};
    CHECK_THROWS_AS(generate_synthetic_scene(spec), std::invalid_argument);
    spec.defect = DefectSpec{{{4.0, 3.0}}, 0.0, -0.3};
    CHECK_THROWS_AS(generate_synthetic_scene(spec), std::invalid_argument);
    spec.defect.reset();
    spec.canvas_size = 8;
    CHECK_THROWS_AS(generate_synthetic_scene(spec), std::invalid_argument);
}

TEST_CASE("synthetic datasets are deterministic and follow the defect rate") {
    const Dataset a = make_synthetic_dataset(tiny(20)), b = make_synthetic_dataset(tiny(20));
    REQUIRE(a.size() == 20);
    CHECK(a.count(1) == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.items[i].image == b.items[i].image);
        CHECK(a.items[i].label == b.items[i].label);
        double mask_sum = 0;
        for (double v : a.items[i].gt_mask.data()) mask_sum += v;
        CHECK((mask_sum > 0) == (a.items[i].label == 1));
    }
    SyntheticDataConfig other = tiny(20);
    other.seed = 8;
    CHECK_FALSE(make_synthetic_dataset(other).items[0].image == a.items[0].image);
}

TEST_CASE("splits are disjoint, complete and sized by floor") {
    std::vector<std::string> ids;
    for (int i = 0; i < 37; ++i) ids.push_back("s" + std::to_string(i));
    const Split s = split_dataset(ids, {0.7, 0.1, 0.2, 3});
    CHECK(s.val.size() == 3);
    CHECK(s.test.size() == 7);
    CHECK(s.train.size() == 27);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 37);
    CHECK(split_dataset(ids, {0.7, 0.1, 0.2, 3}).test == s.test);
    CHECK_THROWS(split_dataset(ids, {0.7, 0.2, 0.2, 3}));
    ids.push_back("s1");
    CHECK_THROWS(split_dataset(ids, {0.7, 0.1, 0.2, 3}));
}

TEST_CASE("balanced sampler draws half of each class, statelessly") {
    const Dataset d = make_synthetic_dataset(tiny(12));
    const BalancedSampler s(d, 6, 1);
    for (std::int64_t step : {0, 1, 7}) {
        const auto [a, b] = s.draw(step);
        CHECK(a.size() == 3);
        CHECK(b.size() == 3);
        for (auto i : a) CHECK(d.items[i].label == 0);
        for (auto i : b) CHECK(d.items[i].label == 1);
        CHECK(s.draw(step) == std::make_pair(a, b));
    }
}

TEST_CASE("augmentation moves masks with the image and stays in range") {
    SyntheticSceneSpec spec;
    spec.canvas_size = 32;
    spec.background.noise_amplitude = 0.0;
    spec.defect = DefectSpec{{{2.0, 5.0}, {29.0, 9.0}}, 2.0, -0.4};
    const LabeledImage img = generate_synthetic_scene(spec);
    AugmentConfig cfg;
    cfg.working_size = 32;
    cfg.brightness = 0.0;
    cfg.hue = 0.0;
    cfg.blur_sigma_max = 0.0;
    cfg.crop_min = 1.0;
    for (int seed = 0; seed < 8; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed));
        const LabeledImage out = augment(img, cfg, rng);
        REQUIRE(out.gt_mask.shape() == Shape{32, 32});
        // Without photometric change, defect pixels are exactly the dark ones.
        for (std::int64_t i = 0; i < 32 * 32; ++i) CHECK((out.gt_mask[i] > 0.5) == (out.image[i] < 0.3));
    }
    AugmentConfig full;
    full.working_size = 24;
    Rng rng(1);
    const LabeledImage out = augment(img, full, rng);
    CHECK(out.image.shape() == Shape{3, 24, 24});
    for (double v : out.image.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("center crop takes the middle square") {
    LabeledImage img;
    img.image = Tensor({1, 4, 6});
    for (std::int64_t i = 0; i < 24; ++i) img.image[i] = static_cast<double>(i % 6);
    const LabeledImage out = center_crop(img, 4);
    CHECK(out.image.shape() == Shape{1, 4, 4});
    CHECK(out.image[0] == doctest::Approx(1.0));
    CHECK(out.image[3] == doctest::Approx(4.0));
}

TEST_CASE("folder datasets round-trip through write_dataset") {
    const fs::path dir = scratch("folder");
    const Dataset d = make_synthetic_dataset(tiny(6));
    write_dataset(d, dir);
    FolderLayout layout;
    layout.mask_dir = "masks";
    const Dataset back = ingest_folder(dir, layout);
    REQUIRE(back.size() == d.size());
    CHECK(back.count(1) == d.count(1));
    CHECK(back.has_masks());
    for (const auto& it : back.items) {
        const auto orig = std::find_if(d.items.begin(), d.items.end(), [&](const auto& o) { return o.source_id == it.source_id; });
        REQUIRE(orig != d.items.end());
        CHECK(it.label == orig->label);
        CHECK(max_abs_diff(it.image, orig->image) <= 0.5 / 255.0 + 1e-12);
        CHECK(it.gt_mask == orig->gt_mask);
    }
    fs::remove_all(dir);
}

TEST_CASE("folder ingestion reports missing data") {
    CHECK_THROWS_AS(ingest_folder("/nonexistent/cfgan", FolderLayout{}), DataError);
    const fs::path dir = scratch("empty_class");
    fs::create_directories(dir / "undamaged");
    fs::create_directories(dir / "damaged");
    CHECK_THROWS_AS(ingest_folder(dir, FolderLayout{}), DataError);
    fs::remove_all(dir);
}

TEST_CASE("model range conversion is invertible") {
    const Tensor t({2}, {0.0, 0.75});
    const Tensor m = to_model_range(t);
    CHECK(m[0] == -1.0);
    CHECK(m[1] == 0.5);
    CHECK(to_unit_range(m) == t);
}
