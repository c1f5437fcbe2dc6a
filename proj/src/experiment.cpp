#include "cfgan/experiment.hpp"

#include <chrono>
#include <fstream>

#include <spdlog/spdlog.h>

#include "cfgan/errors.hpp"
#include "cfgan/hash.hpp"
#include "cfgan/image.hpp"
#include "cfgan/report.hpp"
#include "cfgan/seed.hpp"

namespace cfgan {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

json metrics_json(const eval::ClassificationMetrics& m) {
    return {{"accuracy", m.accuracy}, {"f1", m.f1},   {"precision", m.precision}, {"recall", m.recall},
            {"tp", m.tp},             {"fp", m.fp},   {"fn", m.fn},               {"tn", m.tn}};
}

json curve_json(const std::optional<eval::IouCurve>& c) {
    if (!c) return nullptr;
    json pts = json::array();
    for (const auto& [q, v] : c->points) pts.push_back({{"quantile", q}, {"iou", v}});
    return {{"points", pts}, {"max_iou", c->max_iou}, {"best_quantile", c->best_quantile}};
}

json pearson_json(const eval::PearsonResult& p) {
    return p.r ? json{{"r", *p.r}} : json{{"r", nullptr}, {"reason", p.reason}};
}

json sweep_json(const std::vector<attacks::SweepPoint>& pts) {
    json out = json::array();
    for (const auto& p : pts) {
        json row{{"strength", p.strength}, {"f1", p.f1}};
        row["mean_p_fake"] = p.has_p_fake ? json(p.mean_p_fake) : json(nullptr);
        out.push_back(row);
    }
    return out;
}

// Latent and dropout streams for the evaluation batch starting at `start`.
StepStreams eval_streams(std::uint64_t seed, std::int64_t start) {
    return {Rng(derive_seed({seed, tag(Stream::eval), static_cast<std::uint64_t>(start), 0})),
            Rng(derive_seed({seed, tag(Stream::eval), static_cast<std::uint64_t>(start), 1}))};
}

std::pair<Tensor, Tensor> generate(const Generator& g, const Tensor& images, std::uint64_t seed, std::int64_t batch) {
    NoGradGuard guard;
    std::vector<Tensor> cf, probs;
    for (std::int64_t s = 0; s < images.dim(0); s += batch) {
        const Tensor x = images.slice_rows(s, std::min(images.dim(0), s + batch));
        auto st = eval_streams(seed, s);
        auto out = g.forward(Var(x), Var(g.sample_latent(x.dim(0), st.latent)), st.dropout);
        cf.push_back(out.image.value());
        probs.push_back(out.class_probs.value());
    }
    return {concat_rows(cf), concat_rows(probs)};
}

Tensor row_plane(const Tensor& planes, std::int64_t i) {
    return planes.slice_rows(i, i + 1).reshaped({planes.dim(1), planes.dim(2)});
}

// [N, C, H, W] rows of a model-range batch as unit-range [C, H, W] images.
Tensor unit_image(const Tensor& batch, std::int64_t i) {
    return to_unit_range(batch.slice_rows(i, i + 1).reshaped({batch.dim(1), batch.dim(2), batch.dim(3)}));
}

}  // namespace

json Provenance::to_json() const {
    return {{"config_hash", config_hash},
            {"seed", seed},
            {"checkpoint_hash", checkpoint_hash.empty() ? json(nullptr) : json(checkpoint_hash)},
            {"dataset_id", dataset_id}};
}

Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.data.source == "synthetic") return make_synthetic_dataset(cfg.data.synthetic);
    if (cfg.data.root.empty() || !fs::exists(cfg.data.root))
        throw DataError("dataset root '" + cfg.data.root + "' does not exist");
    return ingest_folder(cfg.data.root, cfg.data.layout);
}

DataSplits split_data(const RunConfig& cfg, const Dataset& all) {
    const Split s = split_dataset(all.source_ids(), cfg.data.split);
    DataSplits out{all.subset(s.train, "train"), all.subset(s.val, "val"), all.subset(s.test, "test")};
    for (const auto* d : {&out.train, &out.test})
        if (d->count(0) == 0 || d->count(1) == 0)
            throw DataError("split '" + d->id + "' lacks one of the two classes");
    return out;
}

EvalSet make_eval_set(const Dataset& data, std::int64_t size) {
    if (data.empty()) throw DataError("evaluation set is empty");
    EvalSet set;
    std::vector<Tensor> rows;
    for (const auto& raw : data.items) {
        const LabeledImage it = center_crop(raw, size);
        rows.push_back(to_model_range(it.image).reshaped({1, it.image.dim(0), it.image.dim(1), it.image.dim(2)}));
        set.labels.push_back(it.label);
        set.masks.push_back(it.gt_mask);
        set.ids.push_back(it.source_id);
    }
    set.images = concat_rows(rows);
    return set;
}

Tensor counterfactuals(const Generator& g, const Tensor& images, std::uint64_t seed, std::int64_t batch) {
    return generate(g, images, seed, batch).first;
}

Tensor generator_class_probs(const Generator& g, const Tensor& images, std::uint64_t seed, std::int64_t batch) {
    return generate(g, images, seed, batch).second;
}

EvalSummary evaluate_models(const Generator& g, const Discriminator& d, const EvalSet& test, const RunConfig& cfg,
                            const Provenance& prov, const fs::path& out) {
    const std::int64_t batch = cfg.evaluation.batch_size;
    const std::int64_t n = test.images.dim(0);
    EvalSummary sum;

    const Tensor d_probs = eval::discriminator_probs(d, test.images, batch);
    sum.d_metrics = eval::classification_metrics(predict_classes(d_probs), test.labels);
    auto [cf, g_probs] = generate(g, test.images, cfg.seed, batch);
    std::vector<int> g_preds;
    for (std::int64_t i = 0; i < n; ++i) g_preds.push_back(predict_class(g_probs[i * 2], g_probs[i * 2 + 1]));
    sum.g_metrics = eval::classification_metrics(g_preds, test.labels);

    // Localisation is scored where a defect exists.
    std::vector<std::int64_t> located;
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor& m = test.masks[static_cast<std::size_t>(i)];
        if (!m.empty() && std::any_of(m.data().begin(), m.data().end(), [](double v) { return v > 0.5; }))
            located.push_back(i);
    }
    if (!located.empty()) {
        const Tensor sal = eval::saliency_from_counterfactual(test.images, cf);
        std::vector<Tensor> sal_masks, cam_masks, gts;
        const eval::CamModel cam = eval::cam_model(d);
        nn::FreezeGuard freeze(d);
        for (std::size_t s = 0; s < located.size(); s += static_cast<std::size_t>(batch)) {
            const std::size_t e = std::min(located.size(), s + static_cast<std::size_t>(batch));
            std::vector<Tensor> xs;
            std::vector<int> cls;
            for (std::size_t k = s; k < e; ++k) {
                xs.push_back(test.images.slice_rows(located[k], located[k] + 1));
                cls.push_back(1);
            }
            const Tensor maps = eval::gradcam(cam, concat_rows(xs), cls);
            for (std::size_t k = s; k < e; ++k) cam_masks.push_back(row_plane(maps, static_cast<std::int64_t>(k - s)));
        }
        for (auto i : located) {
            sal_masks.push_back(row_plane(sal, i));
            gts.push_back(test.masks[static_cast<std::size_t>(i)]);
        }
        sum.saliency_iou = eval::iou_curve(sal_masks, gts, cfg.evaluation.quantiles);
        sum.gradcam_iou = eval::iou_curve(cam_masks, gts, cfg.evaluation.quantiles);
    }

    const eval::RandomConvEmbedder embedder(test.images.dim(1), cfg.evaluation.embedder_seed,
                                            cfg.evaluation.embedder_dim);
    sum.fid = eval::fid_report(embedder.embed(test.images, batch), test.labels, embedder.embed(cf, batch), test.labels);

    std::vector<double> nll_d, nll_g, p_fake;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p0 = d_probs[i * 3], p1 = d_probs[i * 3 + 1];
        const int y = test.labels[static_cast<std::size_t>(i)];
        nll_d.push_back(eval::nll_per_sample(p1 / std::max(p0 + p1, losses::kProbEps), y));
        nll_g.push_back(eval::nll_per_sample(g_probs[i * 2 + 1], y));
        p_fake.push_back(d_probs[i * 3 + 2]);
    }
    sum.pearson_d = eval::pearson(nll_d, p_fake);
    sum.pearson_g = eval::pearson(nll_g, p_fake);

    if (out.empty()) return sum;
    fs::create_directories(out);
    report::Table pearson_rows{{"index", "label", "p_fake", "nll_d", "nll_g"}, {}};
    for (std::int64_t i = 0; i < n; ++i)
        pearson_rows.rows.push_back({static_cast<double>(i), static_cast<double>(test.labels[static_cast<std::size_t>(i)]),
                                     p_fake[static_cast<std::size_t>(i)], nll_d[static_cast<std::size_t>(i)],
                                     nll_g[static_cast<std::size_t>(i)]});
    report::write_csv(out / "pearson.csv", pearson_rows);

    json rep{{"provenance", prov.to_json()},
             {"samples", n},
             {"discriminator", metrics_json(sum.d_metrics)},
             {"generator_class_branch", metrics_json(sum.g_metrics)},
             {"fid", {{"full", sum.fid.full}, {"und", sum.fid.und}, {"dam", sum.fid.dam},
                      {"embedder", "random_conv"}, {"embedder_dim", cfg.evaluation.embedder_dim}}},
             {"pearson", {{"discriminator_path", pearson_json(sum.pearson_d)},
                          {"generator_path", pearson_json(sum.pearson_g)}}},
             {"localized_samples", located.size()},
             {"iou_curve", curve_json(sum.saliency_iou)},
             {"gradcam_iou_curve", curve_json(sum.gradcam_iou)}};
    write_json(out / "report.json", rep);

    if (sum.saliency_iou) {
        report::Table t{{"quantile", "counterfactual", "gradcam"}, {}};
        for (std::size_t k = 0; k < sum.saliency_iou->points.size(); ++k)
            t.rows.push_back({sum.saliency_iou->points[k].first, sum.saliency_iou->points[k].second,
                              sum.gradcam_iou->points[k].second});
        report::write_csv(out / "iou_curve.csv", t);
        report::plot_table(t, {"IoU vs binarization quantile", "quantile", {"counterfactual", "gradcam"}, true},
                           out / "iou_curve.png");
    }
    return sum;
}

std::vector<attacks::SweepPoint> sweep_discriminator(const Discriminator& d, const EvalSet& test, const RunConfig& cfg,
                                                     const std::string& kind) {
    attacks::AttackConfig base;
    base.iterations = cfg.attack.iterations;
    base.epsilon = cfg.attack.epsilon;
    base.seed = derive_seed({cfg.seed, tag(Stream::attack)});
    const auto& grid = kind == "pgd_targeted" ? cfg.attack.pgd_strengths : cfg.attack.noise_strengths;
    nn::FreezeGuard freeze(d);
    return attacks::robustness_sweep([&d](const Var& x) { return d.probs(x); }, test.images, test.labels, kind, grid,
                                     base, cfg.attack.batch_size);
}

std::vector<attacks::SweepPoint> sweep_generator(const Generator& g, const EvalSet& test, const RunConfig& cfg,
                                                 const std::string& kind) {
    attacks::AttackConfig base;
    base.iterations = cfg.attack.iterations;
    base.epsilon = cfg.attack.epsilon;
    base.seed = derive_seed({cfg.seed, tag(Stream::attack)});
    const auto& grid = kind == "pgd_targeted" ? cfg.attack.pgd_strengths : cfg.attack.noise_strengths;
    const std::uint64_t seed = cfg.seed;
    // Fixed latent and dropout draws, so the attacked function does not change between iterations.
    auto probs = [&g, seed](const Var& x) {
        auto st = eval_streams(seed, -1);
        return g.classify(x, Var(g.sample_latent(x.dim(0), st.latent)), st.dropout);
    };
    nn::FreezeGuard freeze(g);
    return attacks::robustness_sweep(probs, test.images, test.labels, kind, grid, base, cfg.attack.batch_size);
}

void write_sweeps(const std::vector<SweepSet>& sweeps, const RunConfig& cfg, const Provenance& prov,
                  const fs::path& out) {
    fs::create_directories(out);
    json meta{{"provenance", prov.to_json()},
              {"iterations", cfg.attack.iterations},
              {"epsilon", cfg.attack.epsilon > 0 ? json(cfg.attack.epsilon) : json("step_size * iterations")},
              {"target", "opposite of the true label"},
              {"sweeps", json::object()}};
    for (const std::string kind : {"pgd_targeted", "gaussian_noise"}) {
        report::Table t{{"strength"}, {}};
        std::vector<const SweepSet*> mine;
        for (const auto& s : sweeps)
            if (s.kind == kind) mine.push_back(&s);
        if (mine.empty()) continue;
        std::vector<std::string> f1_cols;
        for (const auto* s : mine) {
            t.header.push_back("f1_" + s->path_name);
            f1_cols.push_back("f1_" + s->path_name);
            if (!s->points.empty() && s->points[0].has_p_fake) t.header.push_back("p_fake_" + s->path_name);
            meta["sweeps"][kind][s->path_name] = sweep_json(s->points);
        }
        for (std::size_t k = 0; k < mine[0]->points.size(); ++k) {
            std::vector<double> row{mine[0]->points[k].strength};
            for (const auto* s : mine) {
                row.push_back(s->points[k].f1);
                if (s->points[k].has_p_fake) row.push_back(s->points[k].mean_p_fake);
            }
            t.rows.push_back(std::move(row));
        }
        const std::string stem = kind == "pgd_targeted" ? "robustness_pgd" : "robustness_noise";
        report::write_csv(out / (stem + ".csv"), t);
        std::vector<std::string> cols = f1_cols;
        for (const auto& h : t.header)
            if (h.rfind("p_fake_", 0) == 0) cols.push_back(h);
        report::plot_table(t, {kind == "pgd_targeted" ? "Targeted PGD" : "Gaussian noise", "strength", cols, true},
                           out / (stem + ".png"));
    }
    write_json(out / "robustness.json", meta);
}

void write_explanations(const Generator& g, const Discriminator& d, const Tensor& images,
                        const std::vector<std::string>& names, const RunConfig& cfg, const fs::path& out) {
    if (images.dim(0) != static_cast<std::int64_t>(names.size()))
        throw std::invalid_argument("write_explanations: one name per image");
    if (images.dim(0) == 0) return;
    fs::create_directories(out);
    const Tensor cf = counterfactuals(g, images, cfg.seed, cfg.evaluation.batch_size);
    const Tensor sal = eval::saliency_from_counterfactual(images, cf);
    const Tensor probs = eval::discriminator_probs(d, images, cfg.evaluation.batch_size);
    const std::vector<int> cls = predict_classes(probs);
    Tensor cams;
    {
        nn::FreezeGuard freeze(d);
        cams = eval::gradcam(eval::cam_model(d), images, cls);
    }
    const std::int64_t c = images.dim(1);
    for (std::int64_t i = 0; i < images.dim(0); ++i) {
        const std::string& name = names[static_cast<std::size_t>(i)];
        const Tensor x = unit_image(images, i), xh = unit_image(cf, i);
        const Tensor s = row_plane(sal, i), m = row_plane(cams, i);
        image::write_image(out / (name + "_input.png"), x);
        image::write_image(out / (name + "_counterfactual.png"), xh);
        image::write_gray(out / (name + "_saliency.png"), s);
        image::write_gray(out / (name + "_gradcam.png"), m);
        image::write_image(out / (name + "_panel.png"),
                           image::hstack({x, xh, image::gray_to_chw(s, c), image::gray_to_chw(m, c)}));
    }
}

json checkpoint_meta(const RunConfig& cfg, const std::string& dataset_id) {
    return {{"config_hash", config_hash(cfg)},
            {"training_hash", training_hash(cfg)},
            {"seed", cfg.seed},
            {"dataset_id", dataset_id}};
}

Trainer trainer_from_checkpoint(const RunConfig& cfg, const fs::path& checkpoint, bool use_best,
                                bool allow_mismatch) {
    if (!fs::exists(checkpoint)) throw DataError("checkpoint " + checkpoint.string() + " does not exist");
    const Checkpoint ck = Checkpoint::load(checkpoint);
    const std::string want = training_hash(cfg);
    if (ck.meta.contains("training_hash") && ck.meta.at("training_hash").get<std::string>() != want) {
        const std::string msg = "checkpoint " + checkpoint.string() + " was trained under a different config (" +
                                ck.meta.at("training_hash").get<std::string>().substr(0, 12) + " vs " +
                                want.substr(0, 12) + ")";
        if (!allow_mismatch) throw ConfigError(msg + "; pass --ignore-hash to use it anyway");
        spdlog::warn("{}", msg);
    }
    Trainer t(cfg.generator, cfg.discriminator, cfg.train_config());
    t.load_checkpoint(ck);
    if (use_best) t.restore_best();
    return t;
}

ExperimentResult run_experiment(const RunConfig& cfg, const fs::path& out) {
    using clock = std::chrono::steady_clock;
    const auto secs = [](clock::time_point a) { return std::chrono::duration<double>(clock::now() - a).count(); };
    json timing;
    const std::string hash = config_hash(cfg);
    fs::create_directories(out);
    write_json(out / "config.json", to_json(cfg));

    auto t0 = clock::now();
    const Dataset all = load_dataset(cfg);
    const DataSplits splits = split_data(cfg, all);
    spdlog::info("data: {} train, {} val, {} test", splits.train.size(), splits.val.size(), splits.test.size());
    timing["data_seconds"] = secs(t0);

    const json meta = checkpoint_meta(cfg, all.id);
    t0 = clock::now();
    Trainer gan(cfg.generator, cfg.discriminator, cfg.train_config());
    gan.diagnostics_path = out / "gan" / "diverged.cfgn";
    const FitResult gan_fit = gan.fit(splits.train, &splits.val, {out / "gan", hash, meta});
    timing["gan_seconds"] = secs(t0);

    std::optional<Trainer> plain;
    if (cfg.baseline.enabled) {
        t0 = clock::now();
        TrainConfig pc = cfg.train_config();
        pc.adversarial = false;
        if (cfg.baseline.steps >= 0) pc.steps = cfg.baseline.steps;
        plain.emplace(cfg.generator, cfg.discriminator, pc);
        plain->fit(splits.train, &splits.val, {out / "plain", hash, meta});
        timing["plain_seconds"] = secs(t0);
    }

    t0 = clock::now();
    const EvalSet test = make_eval_set(splits.test, cfg.generator.image_size);
    const Provenance prov{hash, cfg.seed, sha256_file(out / "gan" / "final.cfgn"), splits.test.id};
    ExperimentResult res;
    res.summary = evaluate_models(gan.generator(), gan.discriminator(), test, cfg, prov, out / "eval");
    timing["eval_seconds"] = secs(t0);

    t0 = clock::now();
    std::vector<SweepSet> sweeps;
    res.pgd_adversarial = sweep_discriminator(gan.discriminator(), test, cfg, "pgd_targeted");
    res.noise_adversarial = sweep_discriminator(gan.discriminator(), test, cfg, "gaussian_noise");
    sweeps.push_back({"pgd_targeted", "adversarial", res.pgd_adversarial});
    sweeps.push_back({"gaussian_noise", "adversarial", res.noise_adversarial});
    if (plain) {
        res.pgd_plain = sweep_discriminator(plain->discriminator(), test, cfg, "pgd_targeted");
        sweeps.push_back({"pgd_targeted", "plain", res.pgd_plain});
        sweeps.push_back({"gaussian_noise", "plain", sweep_discriminator(plain->discriminator(), test, cfg, "gaussian_noise")});
    }
    write_sweeps(sweeps, cfg, prov, out / "attack");
    timing["attack_seconds"] = secs(t0);

    t0 = clock::now();
    const std::int64_t panels = std::min<std::int64_t>(cfg.evaluation.panels, test.images.dim(0));
    std::vector<std::string> names(test.ids.begin(), test.ids.begin() + panels);
    write_explanations(gan.generator(), gan.discriminator(), test.images.slice_rows(0, panels), names, cfg,
                       out / "explain");
    timing["explain_seconds"] = secs(t0);

    json& m = res.metrics;
    m["provenance"] = prov.to_json();
    m["train"] = {{"steps", gan.step()}, {"g_updates", gan.g_updates()}, {"d_updates", gan.d_updates()},
                  {"best_val_f1", gan_fit.best_val_f1}, {"best_step", gan_fit.best_step},
                  {"evaluated_weights", "final"}};
    m["discriminator"] = metrics_json(res.summary.d_metrics);
    m["generator_class_branch"] = metrics_json(res.summary.g_metrics);
    m["saliency_iou"] = curve_json(res.summary.saliency_iou);
    m["gradcam_iou"] = curve_json(res.summary.gradcam_iou);
    m["fid"] = {{"full", res.summary.fid.full}, {"und", res.summary.fid.und}, {"dam", res.summary.fid.dam}};
    m["pearson"] = {{"discriminator_path", pearson_json(res.summary.pearson_d)},
                    {"generator_path", pearson_json(res.summary.pearson_g)}};
    m["robustness"] = {{"pgd_adversarial", sweep_json(res.pgd_adversarial)},
                       {"pgd_plain", sweep_json(res.pgd_plain)},
                       {"noise_adversarial", sweep_json(res.noise_adversarial)}};
    if (plain) m["plain_discriminator"] = metrics_json(eval::classification_metrics(
        predict_classes(eval::discriminator_probs(plain->discriminator(), test.images, cfg.evaluation.batch_size)),
        test.labels));
    write_json(out / "metrics.json", m);
    write_json(out / "timing.json", timing);
    return res;
}

}  // namespace cfgan
