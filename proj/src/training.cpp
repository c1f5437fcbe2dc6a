#include "cfgan/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "cfgan/errors.hpp"
#include "cfgan/seed.hpp"

namespace cfgan {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("train.steps must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("train.batch_size must be >= 2");
    if (d_updates_per_g_update < 1) throw std::invalid_argument("train.d_updates_per_g_update must be >= 1");
    if (d_warmup_steps < 0) throw std::invalid_argument("train.d_warmup_steps must be >= 0");
    if (checkpoint_every < 0 || eval_every < 0) throw std::invalid_argument("train intervals must be >= 0");
    for (const auto* o : {&g_optim, &d_optim})
        if (o->lr < 0 || o->beta1 < 0 || o->beta1 >= 1 || o->beta2 < 0 || o->beta2 >= 1 || o->eps <= 0)
            throw std::invalid_argument("train optimizer settings out of range");
    if (collapse_patience < 1) throw std::invalid_argument("train.collapse_patience must be >= 1");
    weights.validate();
    augmentation.validate();
}

StepStreams step_streams(std::uint64_t seed, std::int64_t step, std::uint64_t purpose) {
    const auto s = static_cast<std::uint64_t>(step);
    return {Rng(derive_seed({seed, tag(Stream::latent), s, purpose})),
            Rng(derive_seed({seed, tag(Stream::dropout), s, purpose}))};
}

std::vector<Var> generate_nested_counterfactuals(const Generator& g, const Var& x, int cycles, Rng& latent_rng,
                                                 Rng& dropout_rng) {
    if (cycles < 1) throw std::invalid_argument("generate_nested_counterfactuals: cycles must be >= 1");
    std::vector<Var> out;
    Var cur = x;
    for (int i = 0; i < cycles; ++i) {
        Var z(g.sample_latent(x.dim(0), latent_rng));
        cur = g.forward(cur, z, dropout_rng).image;
        out.push_back(cur);
    }
    return out;
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
    return {{"l_D", b.l_D},     {"l_G", b.l_G},   {"l_G_cls", b.l_G_cls}, {"l_G_s", b.l_G_s},
            {"l_G_c", b.l_G_c}, {"l_vq", b.l_vq}, {"total", b.total}};
}

namespace {

Rng init_rng(std::uint64_t seed, std::uint64_t role) { return Rng(derive_seed({seed, tag(Stream::init), role})); }

double pixel_std(const Tensor& t) {
    double mean = 0.0, sq = 0.0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.numel());
    for (double v : t.data()) sq += (v - mean) * (v - mean);
    return std::sqrt(sq / static_cast<double>(t.numel()));
}

}  // namespace

Trainer::Trainer(GeneratorConfig gcfg, DiscriminatorConfig dcfg, TrainConfig tcfg)
    : gcfg_(std::move(gcfg)), dcfg_(std::move(dcfg)), tcfg_(std::move(tcfg)) {
    tcfg_.validate();
    auto grng = init_rng(tcfg_.seed, 1);
    auto drng = init_rng(tcfg_.seed, 2);
    g_ = Generator(gcfg_, grng);
    d_ = Discriminator(dcfg_, drng);
    g_opt_ = nn::Adam(g_.named_parameters(), tcfg_.g_optim);
    d_opt_ = nn::Adam(d_.named_parameters(), tcfg_.d_optim);
}

bool Trainer::g_update_due() const {
    return tcfg_.adversarial && !warming_up() && (step_ + 1) % tcfg_.d_updates_per_g_update == 0;
}

void Trainer::diverged(const std::string& what, double value) {
    const std::string msg = what + " became non-finite (" + std::to_string(value) + ") at step " + std::to_string(step_);
    if (!diagnostics_path.empty()) {
        Checkpoint ck = to_checkpoint();
        ck.meta["diagnostic"] = msg;
        ck.save(diagnostics_path);
        spdlog::error("{}; diagnostic checkpoint written to {}", msg, diagnostics_path.string());
    }
    throw DivergenceError(msg);
}

LossBreakdown Trainer::train_step(const Tensor& x0, const Tensor& x1) {
    if (x0.rank() != 4 || x1.rank() != 4 || x0.dim(0) == 0 || x1.dim(0) == 0)
        throw std::invalid_argument("train_step: both class sub-batches must be nonempty [N, C, H, W]");
    const std::int64_t n0 = x0.dim(0), n1 = x1.dim(0), n = n0 + n1;
    const std::vector<Tensor> parts{x0, x1};
    const Tensor x = concat_rows(parts);
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::fill(labels.begin() + n0, labels.end(), 1);

    LossBreakdown b;
    d_opt_.zero_grad();
    Var l_d;
    if (tcfg_.adversarial && !warming_up()) {
        Tensor fake;
        {
            NoGradGuard guard;
            auto st = step_streams(tcfg_.seed, step_, 0);
            Var z(g_.sample_latent(n, st.latent));
            fake = g_.forward(Var(x), z, st.dropout).image.value();
        }
        const std::vector<Tensor> all{x, fake};
        Var p = d_.probs(Var(concat_rows(all)));
        l_d = losses::discriminator_loss(ops::slice_rows(p, 0, n0), ops::slice_rows(p, n0, n),
                                         ops::slice_rows(p, n, 2 * n));
    } else {
        Var p = d_.probs(Var(x));
        l_d = -(losses::mean_log_prob(ops::slice_rows(p, 0, n0), 0) + losses::mean_log_prob(ops::slice_rows(p, n0, n), 1));
    }
    b.l_D = l_d.item();
    if (!std::isfinite(b.l_D)) diverged("discriminator loss", b.l_D);
    l_d.backward();
    d_opt_.step();
    ++d_updates_;

    if (g_update_due()) {
        nn::FreezeGuard freeze(d_);
        g_opt_.zero_grad();
        auto st = step_streams(tcfg_.seed, step_, 1);
        const Var xv(x);
        GeneratorOutput first = g_.forward(xv, Var(g_.sample_latent(n, st.latent)), st.dropout);
        std::vector<NestedTriples> nested;
        Var cur = first.image;
        for (int i = 0; i < tcfg_.weights.cycles; ++i) {
            if (i > 0) cur = g_.forward(cur, Var(g_.sample_latent(n, st.latent)), st.dropout).image;
            Var p = d_.probs(cur);
            nested.push_back({ops::slice_rows(p, 0, n0), ops::slice_rows(p, n0, n)});
        }
        Var l_gc = losses::cycle_loss(nested, tcfg_.weights);
        Var l_cls = losses::generator_aux_class_loss(first.class_probs, labels);
        Var l_s = losses::sparsity_loss(xv, first.image);
        const auto& w = tcfg_.weights;
        Var objective = w.lambda1 * l_gc + w.lambda2 * l_cls + w.lambda3 * l_s;
        if (first.vq_loss.defined()) {
            objective = objective + first.vq_loss;
            b.l_vq = first.vq_loss.item();
        }
        {
            NoGradGuard guard;
            b.l_G = losses::generator_adversarial_loss(nested[0].gen0, nested[0].gen1).item();
        }
        b.l_G_c = l_gc.item();
        b.l_G_cls = l_cls.item();
        b.l_G_s = l_s.item();
        if (!std::isfinite(objective.item())) diverged("generator loss", objective.item());
        objective.backward();
        g_opt_.step();
        ++g_updates_;

        collapse_run_ = pixel_std(first.image.value()) < tcfg_.collapse_std ? collapse_run_ + 1 : 0;
        if (collapse_run_ >= tcfg_.collapse_patience) {
            ++step_;
            throw DivergenceError("mode collapse: counterfactual pixel std below " + std::to_string(tcfg_.collapse_std) +
                                  " for " + std::to_string(collapse_run_) + " consecutive generator updates");
        }
    }
    ++step_;
    return losses::total_loss(b, tcfg_.weights);
}

double Trainer::validate_f1(const Dataset& val) const {
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (const auto& it : val.items) {
        images.push_back(to_model_range(it.image).reshaped({1, it.image.dim(0), it.image.dim(1), it.image.dim(2)}));
        labels.push_back(it.label);
    }
    const Tensor probs = eval::discriminator_probs(d_, concat_rows(images));
    return eval::classification_metrics(predict_classes(probs), labels).f1;
}

FitResult Trainer::fit(const Dataset& train_in, const Dataset* val_in, const FitOptions& opts) {
    const std::int64_t size = gcfg_.image_size;
    const Dataset train = tcfg_.augment ? train_in : train_in.center_cropped(size);
    std::optional<Dataset> val;
    if (val_in && !val_in->empty() && tcfg_.eval_every > 0) val = val_in->center_cropped(size);
    AugmentConfig aug = tcfg_.augmentation;
    aug.working_size = size;
    const BalancedSampler sampler(train, tcfg_.batch_size, derive_seed({tcfg_.seed, tag(Stream::batch)}));

    std::ofstream metrics, timing;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        const auto mode = step_ > 0 ? std::ios::app : std::ios::trunc;
        metrics.open(opts.out_dir / "metrics.jsonl", std::ios::out | mode);
        timing.open(opts.out_dir / "timing.jsonl", std::ios::out | mode);
        if (!metrics || !timing) throw std::runtime_error("cannot open metrics log in " + opts.out_dir.string());
    }
    auto save = [&](const fs::path& path, bool best) {
        Checkpoint ck = to_checkpoint();
        ck.meta.update(opts.checkpoint_meta);
        if (best && !best_g_.empty()) {
            for (auto& t : ck.groups["generator"]) t.value = best_g_[&t - ck.groups["generator"].data()];
            for (auto& t : ck.groups["discriminator"]) t.value = best_d_[&t - ck.groups["discriminator"].data()];
            ck.meta["weights"] = "best";
        }
        ck.save(path);
    };

    FitResult result;
    const auto start = std::chrono::steady_clock::now();
    while (step_ < tcfg_.steps) {
        auto [i0, i1] = sampler.draw(step_);
        std::vector<std::size_t> idx = i0;
        idx.insert(idx.end(), i1.begin(), i1.end());
        const Batch batch = make_batch(train, idx, tcfg_.augment ? &aug : nullptr,
                                       derive_seed({tcfg_.seed, tag(Stream::augment), static_cast<std::uint64_t>(step_)}));
        const auto n0 = static_cast<std::int64_t>(i0.size());
        const bool g_step = g_update_due();
        const auto t0 = std::chrono::steady_clock::now();
        const LossBreakdown b = train_step(batch.images.slice_rows(0, n0),
                                           batch.images.slice_rows(n0, static_cast<std::int64_t>(idx.size())));
        ++result.steps_run;

        nlohmann::json row = breakdown_json(b);
        row["step"] = step_;
        row["g_update"] = g_step;
        if (val && (step_ % tcfg_.eval_every == 0 || step_ == tcfg_.steps)) {
            const double f1 = validate_f1(*val);
            row["val_f1"] = f1;
            if (f1 > best_f1_) {
                best_f1_ = f1;
                best_step_ = step_;
                best_g_ = snapshot(g_);
                best_d_ = snapshot(d_);
            }
            spdlog::info("step {}/{}  l_D {:.4f}  l_G {:.4f}  l_G_s {:.4f}  val F1 {:.4f}", step_, tcfg_.steps, b.l_D,
                         b.l_G, b.l_G_s, f1);
        }
        if (metrics.is_open()) {
            metrics << row.dump() << '\n';
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            timing << nlohmann::json{{"step", step_}, {"seconds", secs}}.dump() << '\n';
        }
        if (!opts.out_dir.empty() && tcfg_.checkpoint_every > 0 && step_ % tcfg_.checkpoint_every == 0) {
            char name[40];
            std::snprintf(name, sizeof name, "step_%07lld.cfgn", static_cast<long long>(step_));
            save(opts.out_dir / "checkpoints" / name, false);
        }
    }
    if (!opts.out_dir.empty()) {
        save(opts.out_dir / "final.cfgn", false);
        save(opts.out_dir / "best.cfgn", true);
    }
    spdlog::info("trained {} steps in {:.1f}s", result.steps_run,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    result.best_val_f1 = best_f1_;
    result.best_step = best_step_;
    return result;
}

Checkpoint Trainer::to_checkpoint() const {
    Checkpoint ck;
    store_module(ck, "generator", g_);
    store_module(ck, "discriminator", d_);
    store_adam(ck, "generator_optimizer", g_opt_);
    store_adam(ck, "discriminator_optimizer", d_opt_);
    if (!best_g_.empty()) {
        auto& bg = ck.groups["best_generator"];
        auto& bd = ck.groups["best_discriminator"];
        const auto gp = g_.named_parameters();
        const auto dp = d_.named_parameters();
        for (std::size_t i = 0; i < gp.size(); ++i) bg.push_back({gp[i].name, best_g_[i]});
        for (std::size_t i = 0; i < dp.size(); ++i) bd.push_back({dp[i].name, best_d_[i]});
    }
    ck.meta["state"] = {{"step", step_},           {"g_updates", g_updates_}, {"d_updates", d_updates_},
                        {"collapse_run", collapse_run_}, {"best_f1", best_f1_}, {"best_step", best_step_}};
    ck.meta["generator_backbone"] = gcfg_.backbone;
    ck.meta["discriminator_backbone"] = dcfg_.backbone;
    ck.meta["noise"] = {{"latent_dim", gcfg_.latent_dim}, {"channels_per_stage", gcfg_.noise_channels}};
    return ck;
}

void Trainer::load_checkpoint(const Checkpoint& ck) {
    load_module(ck, "generator", g_);
    load_module(ck, "discriminator", d_);
    if (ck.has("generator_optimizer")) load_adam(ck, "generator_optimizer", g_opt_);
    if (ck.has("discriminator_optimizer")) load_adam(ck, "discriminator_optimizer", d_opt_);
    best_g_.clear();
    best_d_.clear();
    if (ck.has("best_generator")) {
        for (const auto& t : ck.group("best_generator")) best_g_.push_back(t.value);
        for (const auto& t : ck.group("best_discriminator")) best_d_.push_back(t.value);
    }
    if (ck.meta.contains("state")) {
        const auto& s = ck.meta.at("state");
        step_ = s.at("step").get<std::int64_t>();
        g_updates_ = s.at("g_updates").get<std::int64_t>();
        d_updates_ = s.at("d_updates").get<std::int64_t>();
        collapse_run_ = s.at("collapse_run").get<std::int64_t>();
        best_f1_ = s.at("best_f1").get<double>();
        best_step_ = s.at("best_step").get<std::int64_t>();
    }
}

bool Trainer::restore_best() {
    if (best_g_.empty()) return false;
    restore(g_, best_g_);
    restore(d_, best_d_);
    return true;
}

}  // namespace cfgan
