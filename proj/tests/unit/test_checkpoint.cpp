#include <doctest.h>

#include <filesystem>

#include "cfgan/checkpoint.hpp"
#include "cfgan/discriminator.hpp"

using namespace cfgan;
namespace fs = std::filesystem;

namespace {

DiscriminatorConfig tiny_d() {
    DiscriminatorConfig d;
    d.image_size = 8;
    d.base_channels = 2;
    return d;
}

}  // namespace

TEST_CASE("checkpoints round-trip tensors and metadata exactly") {
    Checkpoint ck;
    ck.meta["note"] = "hello";
    ck.groups["a"] = {{"x", Tensor({2, 2}, {1.0, -0.0, 1e-300, 3.14159})}, {"empty", Tensor({0})}};
    const Checkpoint back = Checkpoint::deserialize(ck.serialize());
    CHECK(back.meta["note"] == "hello");
    REQUIRE(back.group("a").size() == 2);
    CHECK(back.group("a")[0].name == "x");
    CHECK(back.group("a")[0].value == ck.group("a")[0].value);
    CHECK(back.group("a")[1].value.shape() == Shape{0});
    CHECK(back.serialize() == ck.serialize());
}

TEST_CASE("corrupt or foreign bytes are rejected") {
    Checkpoint ck;
    ck.groups["a"] = {{"x", Tensor({3}, 1.0)}};
    std::string bytes = ck.serialize();
    CHECK_THROWS(Checkpoint::deserialize("NOPE" + bytes.substr(4)));
    CHECK_THROWS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 8)));
    bytes[4] = 9;  // version
    CHECK_THROWS(Checkpoint::deserialize(bytes));
    CHECK_THROWS(Checkpoint::load("/nonexistent/cfgan.cfgn"));
}

TEST_CASE("modules and optimisers restore from a saved file") {
    Rng r1(1), r2(2);
    Discriminator a(tiny_d(), r1), b(tiny_d(), r2);
    nn::Adam opt(a.named_parameters(), {});
    for (auto& p : a.parameters()) p.node()->grad = Tensor(p.shape(), 0.1);
    opt.step();

    Checkpoint ck;
    store_module(ck, "d", a);
    store_adam(ck, "opt", opt);
    const fs::path path = fs::temp_directory_path() / "cfgan_unit_ckpt.cfgn";
    ck.save(path);
    const Checkpoint back = Checkpoint::load(path);
    fs::remove(path);

    load_module(back, "d", b);
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value() == pb[i].value());
    nn::Adam opt_b(b.named_parameters(), {});
    load_adam(back, "opt", opt_b);
    CHECK(opt_b.steps() == 1);
    CHECK(opt_b.first_moments()[0] == opt.first_moments()[0]);

    DiscriminatorConfig wider = tiny_d();
    wider.base_channels = 3;
    Rng r3(3);
    Discriminator c(wider, r3);
    CHECK_THROWS(load_module(back, "d", c));
    CHECK_THROWS(load_module(back, "missing", b));
}

TEST_CASE("snapshot and restore copy parameter values") {
    Rng r(1);
    Discriminator d(tiny_d(), r);
    const auto snap = snapshot(d);
    d.parameters()[0].mutable_value().fill(7.0);
    restore(d, snap);
    CHECK(d.parameters()[0].value() == snap[0]);
}
