#include <doctest.h>

#include <random>

#include "cfgan/training.hpp"

using namespace cfgan;

namespace {

GeneratorConfig tiny_g() {
    GeneratorConfig g;
    g.image_size = 8;
    g.depth = 1;
    g.base_channels = 2;
    g.latent_dim = 3;
    g.noise_channels = 1;
    g.class_hidden = 4;
    return g;
}

DiscriminatorConfig tiny_d() {
    DiscriminatorConfig d;
    d.image_size = 8;
    d.base_channels = 2;
    return d;
}

TrainConfig tiny_train() {
    TrainConfig t;
    t.steps = 4;
    t.batch_size = 4;
    t.d_updates_per_g_update = 2;
    t.eval_every = 0;
    t.augment = false;
    return t;
}

Tensor batch(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t({2, 3, 8, 8});
    for (auto& v : t.data()) v = u(rng);
    return t;
}

std::vector<Tensor> values(const nn::Module& m) {
    std::vector<Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.value());
    return out;
}

}  // namespace

TEST_CASE("G updates once every k steps and waits for the warm-up") {
    TrainConfig t = tiny_train();
    t.d_warmup_steps = 2;
    Trainer tr(tiny_g(), tiny_d(), t);
    for (int s = 0; s < 6; ++s) tr.train_step(batch(2 * s), batch(2 * s + 1));
    CHECK(tr.d_updates() == 6);
    // Steps 2..5 are adversarial; G goes at steps 3 and 5.
    CHECK(tr.g_updates() == 2);

    TrainConfig plain = tiny_train();
    plain.adversarial = false;
    Trainer p(tiny_g(), tiny_d(), plain);
    const auto g_before = values(p.generator());
    for (int s = 0; s < 4; ++s) p.train_step(batch(s), batch(s + 10));
    CHECK(p.g_updates() == 0);
    CHECK(values(p.generator()) == g_before);
}

TEST_CASE("D-only steps leave G untouched and G steps move G") {
    Trainer tr(tiny_g(), tiny_d(), tiny_train());
    const auto g0 = values(tr.generator()), d0 = values(tr.discriminator());
    REQUIRE_FALSE(tr.g_update_due());
    tr.train_step(batch(1), batch(2));
    CHECK(values(tr.generator()) == g0);
    CHECK_FALSE(values(tr.discriminator()) == d0);
    REQUIRE(tr.g_update_due());
    const auto d1 = values(tr.discriminator());
    const auto g1 = values(tr.generator());
    tr.train_step(batch(3), batch(4));
    // D still steps on this iteration; G must move too.
    CHECK_FALSE(values(tr.generator()) == g1);
    CHECK_FALSE(values(tr.discriminator()) == d1);
}

TEST_CASE("zero learning rates leave every parameter unchanged") {
    TrainConfig t = tiny_train();
    t.g_optim.lr = 0.0;
    t.d_optim.lr = 0.0;
    Trainer tr(tiny_g(), tiny_d(), t);
    const auto g0 = values(tr.generator()), d0 = values(tr.discriminator());
    for (int s = 0; s < 4; ++s) tr.train_step(batch(s), batch(s + 5));
    CHECK(values(tr.generator()) == g0);
    CHECK(values(tr.discriminator()) == d0);
}

TEST_CASE("resuming from a checkpoint replays the uninterrupted run bit for bit") {
    const Dataset data = make_synthetic_dataset([] {
        SyntheticDataConfig c;
        c.count = 12;
        c.canvas_size = 32;
        return c;
    }());
    // fit crops to the model size itself.
    const Dataset& small = data;

    Trainer full(tiny_g(), tiny_d(), tiny_train());
    full.fit(small, nullptr);

    TrainConfig half = tiny_train();
    half.steps = 2;
    Trainer first(tiny_g(), tiny_d(), half);
    first.fit(small, nullptr);
    const Checkpoint ck = Checkpoint::deserialize(first.to_checkpoint().serialize());

    Trainer second(tiny_g(), tiny_d(), tiny_train());
    second.load_checkpoint(ck);
    CHECK(second.step() == 2);
    second.fit(small, nullptr);
    CHECK(second.step() == 4);
    CHECK(values(second.generator()) == values(full.generator()));
    CHECK(values(second.discriminator()) == values(full.discriminator()));
    CHECK(second.g_updates() == full.g_updates());
}

TEST_CASE("training configs are validated") {
    TrainConfig t = tiny_train();
    t.d_updates_per_g_update = 0;
    CHECK_THROWS(t.validate());
    t = tiny_train();
    t.d_warmup_steps = -1;
    CHECK_THROWS(t.validate());
    t = tiny_train();
    t.batch_size = 1;
    CHECK_THROWS(t.validate());
}

TEST_CASE("nested counterfactuals use a fresh latent per application") {
    Rng init(1);
    GeneratorConfig cfg = tiny_g();
    cfg.dropout = 0.0;
    Generator g(cfg, init);
    Rng z(2), d(3);
    const auto nested = generate_nested_counterfactuals(g, Var(batch(1)), 3, z, d);
    REQUIRE(nested.size() == 3);
    for (const auto& v : nested) CHECK(v.shape() == Shape{2, 3, 8, 8});
    CHECK_FALSE(nested[0].value() == nested[1].value());
}
