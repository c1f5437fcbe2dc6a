#include <doctest.h>

#include <random>

#include "cfgan/discriminator.hpp"
#include "cfgan/generator.hpp"
#include "cfgan/layers.hpp"

using namespace cfgan;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

GeneratorConfig small_generator(const std::string& backbone = "cnn_unet") {
    GeneratorConfig g;
    g.backbone = backbone;
    g.image_size = 16;
    g.depth = 2;
    g.base_channels = 4;
    g.latent_dim = 6;
    g.noise_channels = 2;
    g.class_hidden = 8;
    g.attention_window = 4;
    return g;
}

DiscriminatorConfig small_discriminator(const std::string& backbone = "resnet_tiny") {
    DiscriminatorConfig d;
    d.backbone = backbone;
    d.image_size = 16;
    d.base_channels = 4;
    d.attention_dim = 8;
    d.attention_window = 2;
    return d;
}

}  // namespace

TEST_CASE("generator outputs images in range and class probabilities on the simplex") {
    for (const char* backbone : {"cnn_unet", "attention_unet"})
        for (const char* output : {"tanh", "residual"})
            for (bool vq : {false, true}) {
                CAPTURE(backbone);
                CAPTURE(output);
                CAPTURE(vq);
                GeneratorConfig cfg = small_generator(backbone);
                cfg.output = output;
                cfg.use_vq = vq;
                cfg.codebook_size = 8;
                cfg.codebook_dim = 4;
                Rng init(1), zr(2), dr(3);
                Generator g(cfg, init);
                const Tensor x = rand_tensor({3, 3, 16, 16}, 4);
                const GeneratorOutput out = g.forward(Var(x), Var(g.sample_latent(3, zr)), dr);
                CHECK(out.image.shape() == Shape{3, 3, 16, 16});
                CHECK(out.class_probs.shape() == Shape{3, 2});
                for (double v : out.image.value().data()) CHECK((v >= -1.0 && v <= 1.0));
                for (std::int64_t n = 0; n < 3; ++n)
                    CHECK(out.class_probs.value()[2 * n] + out.class_probs.value()[2 * n + 1] ==
                          doctest::Approx(1.0));
                CHECK(out.vq_loss.defined() == vq);
                if (vq) CHECK(out.vq_indices.size() == 3 * 4 * 4);
            }
}

TEST_CASE("generator is stochastic in the latent and in dropout") {
    Rng init(1);
    Generator g(small_generator(), init);
    const Tensor x = rand_tensor({2, 3, 16, 16}, 5);
    Rng z1(1), z2(2), d1(9), d2(9);
    const Tensor a = g.forward(Var(x), Var(g.sample_latent(2, z1)), d1).image.value();
    const Tensor b = g.forward(Var(x), Var(g.sample_latent(2, z2)), d2).image.value();
    CHECK(max_abs_diff(a, b) > 0.0);
    // Same streams, same output.
    Rng z3(1), d3(9);
    CHECK(g.forward(Var(x), Var(g.sample_latent(2, z3)), d3).image.value() == a);
}

TEST_CASE("residual generator starts as the identity") {
    GeneratorConfig cfg = small_generator();
    cfg.output = "residual";
    Rng init(1), zr(2), dr(3);
    Generator g(cfg, init);
    const Tensor x = rand_tensor({2, 3, 16, 16}, 6, -0.9, 0.9);
    const Tensor y = g.forward(Var(x), Var(g.sample_latent(2, zr)), dr).image.value();
    CHECK(max_abs_diff(x, y) < 1e-9);
}

TEST_CASE("generator rejects mismatched inputs and configs") {
    Rng init(1), zr(2), dr(3);
    Generator g(small_generator(), init);
    CHECK_THROWS_AS(g.forward(Var(Tensor({1, 3, 8, 8})), Var(g.sample_latent(1, zr)), dr), std::invalid_argument);
    CHECK_THROWS_AS(g.forward(Var(Tensor({2, 3, 16, 16})), Var(g.sample_latent(1, zr)), dr), std::invalid_argument);
    GeneratorConfig bad = small_generator();
    bad.image_size = 12;
    bad.depth = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_generator();
    bad.output = "linear";
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("discriminator emits softmax triples for every backbone and pooling") {
    for (const char* backbone : {"resnet_tiny", "resnet_mid", "attention", "hybrid"})
        for (const char* pooling : {"avg", "avg_max"}) {
            CAPTURE(backbone);
            CAPTURE(pooling);
            DiscriminatorConfig cfg = small_discriminator(backbone);
            cfg.pooling = pooling;
            Rng init(1);
            Discriminator d(cfg, init);
            const Tensor p = d.probs(Var(rand_tensor({4, 3, 16, 16}, 7))).value();
            REQUIRE(p.shape() == Shape{4, 3});
            for (std::int64_t n = 0; n < 4; ++n) CHECK(p[3 * n] + p[3 * n + 1] + p[3 * n + 2] == doctest::Approx(1.0));
            CHECK(d.spatial_features(Var(Tensor({1, 3, 16, 16}))).size() == (std::string(backbone) == "hybrid" ? 2u : 1u));
        }
    CHECK_THROWS_AS(Discriminator(small_discriminator("vgg"), *std::make_unique<Rng>(1)), std::invalid_argument);
}

TEST_CASE("predictions break ties toward class 0") {
    CHECK(predict_class(0.4, 0.4) == 0);
    CHECK(predict_class(0.3, 0.31) == 1);
    // p_fake is ignored by the class decision.
    CHECK(predict_classes(Tensor({2, 3}, {0.1, 0.2, 0.7, 0.3, 0.1, 0.6})) == std::vector<int>{1, 0});
}

TEST_CASE("weighted average pooling follows its formula") {
    const Tensor s({1, 1, 1, 3}, {1.0, 2.0, 4.0}), w({1, 1, 1, 3}, {1.0, 0.0, 3.0});
    const double out = nn::weighted_average_pool(Var(s), Var(w)).value()[0];
    CHECK(out == doctest::Approx((1.0 + 12.0) / (4.0 + 1e-8)));
}

TEST_CASE("vector quantiser picks the nearest code with ties to the lowest index") {
    // Codes at 0, 1 and 1 again; latent 0.6 is nearest to code 1 (index 1, not 2).
    const Var codebook(Tensor({3, 1}, {0.0, 1.0, 1.0}));
    const Var latent(Tensor({1, 1, 1, 2}, {0.6, 0.2}), true);
    const nn::QuantizeResult q = nn::vector_quantize(latent, codebook, 0.25);
    CHECK(q.indices == std::vector<std::int64_t>{1, 0});
    CHECK(q.quantized.value()[0] == 1.0);
    CHECK(q.quantized.value()[1] == 0.0);
    // codebook term + 0.25 * commitment term, both mean squared distances.
    const double mse = (0.4 * 0.4 + 0.2 * 0.2) / 2.0;
    CHECK(q.loss.item() == doctest::Approx(1.25 * mse));
}

TEST_CASE("window partition and merge are inverse") {
    const Tensor x = rand_tensor({2, 3, 8, 8}, 8);
    const Var t = nn::window_partition(Var(x), 4);
    CHECK(t.shape() == Shape{8, 16, 3});
    CHECK(nn::window_merge(t, 2, 3, 8, 8, 4).value() == x);
    CHECK(nn::roll2d(nn::roll2d(Var(x), 2, 3), -2, -3).value() == x);
}

TEST_CASE("noise injection without noise channels ignores the latent") {
    Rng rng(1);
    nn::NoiseInjection inj(4, 0, 5, 4, 4, rng);
    const Tensor u = rand_tensor({2, 4, 4, 4}, 9);
    const Tensor a = inj(Var(u), Var(rand_tensor({2, 5}, 1))).value();
    const Tensor b = inj(Var(u), Var(rand_tensor({2, 5}, 2))).value();
    CHECK(a == b);
    nn::NoiseInjection with(4, 2, 5, 4, 4, rng);
    CHECK_FALSE(with(Var(u), Var(rand_tensor({2, 5}, 1))).value() == with(Var(u), Var(rand_tensor({2, 5}, 2))).value());
}
