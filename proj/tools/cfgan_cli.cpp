// cfgan: synth | train | eval | attack | explain | run

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "cfgan/errors.hpp"
#include "cfgan/experiment.hpp"
#include "cfgan/hash.hpp"
#include "cfgan/image.hpp"

namespace fs = std::filesystem;
using namespace cfgan;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct Common {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::vector<std::string> overrides;
    long long seed = -1;
    bool force = false;
    bool ignore_hash = false;
};

RunConfig resolve(const Common& c) {
    json doc = json::object();
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw ConfigError("cannot read config file " + c.config);
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + c.config + " is not valid JSON: " + e.what());
        }
    }
    for (const auto& o : c.overrides) apply_override(doc, o);
    if (c.seed >= 0) doc["seed"] = static_cast<std::uint64_t>(c.seed);
    if (!c.out.empty()) doc["output_dir"] = c.out;
    return config_from_json(doc);
}

// Refuses to write into a non-empty directory unless forced.
fs::path prepare_out(const RunConfig& cfg, bool force) {
    const fs::path out = cfg.output_dir;
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!force) throw ConfigError("output directory " + out.string() + " is not empty; pass --force to overwrite");
        fs::remove_all(out);
    }
    fs::create_directories(out);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

int cmd_synth(const Common& c) {
    RunConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg, c.force);
    const Dataset data = make_synthetic_dataset(cfg.data.synthetic);
    const json extra{{"config_hash", config_hash(cfg)}, {"seed", cfg.data.synthetic.seed}};
    write_dataset(data, out, extra.dump());
    spdlog::info("wrote {} images ({} damaged) to {}", data.size(), data.count(1), out.string());
    return kOk;
}

int cmd_train(const Common& c, const std::string& resume) {
    RunConfig cfg = resolve(c);
    const fs::path out = resume.empty() ? prepare_out(cfg, c.force) : fs::path(cfg.output_dir);
    fs::create_directories(out);
    write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
    const Dataset all = load_dataset(cfg);
    const DataSplits splits = split_data(cfg, all);

    Trainer trainer = resume.empty() ? Trainer(cfg.generator, cfg.discriminator, cfg.train_config())
                                     : trainer_from_checkpoint(cfg, resume, false, c.ignore_hash);
    trainer.diagnostics_path = out / "diverged.cfgn";
    if (!resume.empty()) spdlog::info("resuming from step {}", trainer.step());
    const FitResult r = trainer.fit(splits.train, &splits.val, {out, config_hash(cfg), checkpoint_meta(cfg, all.id)});
    spdlog::info("done: {} steps, best val F1 {:.4f} at step {}", r.steps_run, r.best_val_f1, r.best_step);
    return kOk;
}

struct Loaded {
    RunConfig cfg;
    Trainer trainer;
    EvalSet test;
    Provenance prov;
};

Loaded load_for_eval(const Common& c, bool use_best) {
    if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    RunConfig cfg = resolve(c);
    Trainer t = trainer_from_checkpoint(cfg, c.checkpoint, use_best, c.ignore_hash);
    const Dataset all = load_dataset(cfg);
    const DataSplits splits = split_data(cfg, all);
    EvalSet test = make_eval_set(splits.test, cfg.generator.image_size);
    Provenance prov{config_hash(cfg), cfg.seed, sha256_file(c.checkpoint), splits.test.id};
    return {std::move(cfg), std::move(t), std::move(test), std::move(prov)};
}

int cmd_eval(const Common& c, bool use_best) {
    Loaded l = load_for_eval(c, use_best);
    const fs::path out = prepare_out(l.cfg, c.force);
    const EvalSummary s = evaluate_models(l.trainer.generator(), l.trainer.discriminator(), l.test, l.cfg, l.prov, out);
    spdlog::info("D: acc {:.4f} F1 {:.4f}; FID full {:.4f}", s.d_metrics.accuracy, s.d_metrics.f1, s.fid.full);
    if (s.saliency_iou)
        spdlog::info("max IoU: counterfactual {:.4f}, GradCAM {:.4f}", s.saliency_iou->max_iou, s.gradcam_iou->max_iou);
    return kOk;
}

int cmd_attack(const Common& c, bool use_best, const std::string& kind, const std::vector<double>& strengths,
               int iterations, const std::string& path) {
    Loaded l = load_for_eval(c, use_best);
    if (iterations > 0) l.cfg.attack.iterations = iterations;
    if (!strengths.empty()) {
        if (kind != "pgd_targeted") l.cfg.attack.noise_strengths = strengths;
        if (kind != "gaussian_noise") l.cfg.attack.pgd_strengths = strengths;
    }
    l.cfg.finalize();
    const fs::path out = prepare_out(l.cfg, c.force);
    std::vector<SweepSet> sweeps;
    for (const std::string k : {"pgd_targeted", "gaussian_noise"}) {
        if (kind != "both" && kind != k) continue;
        if (path != "generator")
            sweeps.push_back({k, "discriminator", sweep_discriminator(l.trainer.discriminator(), l.test, l.cfg, k)});
        if (path != "discriminator")
            sweeps.push_back({k, "generator", sweep_generator(l.trainer.generator(), l.test, l.cfg, k)});
    }
    write_sweeps(sweeps, l.cfg, l.prov, out);
    for (const auto& s : sweeps)
        for (const auto& p : s.points)
            spdlog::info("{} {} strength {:g}: F1 {:.4f}", s.kind, s.path_name, p.strength, p.f1);
    return kOk;
}

int cmd_explain(const Common& c, bool use_best, const std::vector<std::string>& inputs) {
    if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    RunConfig cfg = resolve(c);
    Trainer t = trainer_from_checkpoint(cfg, c.checkpoint, use_best, c.ignore_hash);
    const fs::path out = prepare_out(cfg, c.force);
    std::vector<Tensor> rows;
    std::vector<std::string> names;
    for (const auto& in : inputs) {
        try {
            LabeledImage li;
            li.image = image::read_image(in, cfg.generator.image_channels);
            li = center_crop(li, cfg.generator.image_size);
            const Tensor& im = li.image;
            rows.push_back(to_model_range(im).reshaped({1, im.dim(0), im.dim(1), im.dim(2)}));
            names.push_back(fs::path(in).stem().string());
        } catch (const std::exception& e) {
            spdlog::warn("skipping {}: {}", in, e.what());
        }
    }
    if (rows.empty()) throw DataError("no readable input images");
    write_explanations(t.generator(), t.discriminator(), concat_rows(rows), names, cfg, out);
    spdlog::info("wrote {} panels to {}", names.size(), out.string());
    return kOk;
}

int cmd_run(const Common& c) {
    RunConfig cfg = resolve(c);
    const fs::path out = prepare_out(cfg, c.force);
    const ExperimentResult r = run_experiment(cfg, out);
    std::cout << r.metrics.dump(2) << '\n';
    return kOk;
}

void add_common(CLI::App* sub, Common& c, bool needs_checkpoint) {
    sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", c.seed, "Run seed (overrides seed)");
    sub->add_option("--set", c.overrides, "Config override key.path=value (repeatable)");
    sub->add_flag("--force", c.force, "Overwrite a non-empty output directory");
    if (needs_checkpoint) {
        sub->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
        sub->add_flag("--ignore-hash", c.ignore_hash, "Accept a checkpoint trained under a different config");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual GAN: synthesis, training, evaluation, attacks and explanations"};
    app.require_subcommand(1);
    Common c;
    std::string resume, kind = "both", path = "both";
    std::vector<double> strengths;
    std::vector<std::string> inputs;
    int iterations = 0;
    bool use_best = false;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset to disk");
    add_common(synth, c, false);
    auto* train = app.add_subcommand("train", "Train G and D");
    add_common(train, c, false);
    train->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    train->add_flag("--ignore-hash", c.ignore_hash, "Accept a resume checkpoint trained under a different config");
    auto* evaluate = app.add_subcommand("eval", "Metrics report for a checkpoint");
    add_common(evaluate, c, true);
    auto* attack = app.add_subcommand("attack", "Robustness sweeps for a checkpoint");
    add_common(attack, c, true);
    attack->add_option("--kind", kind, "pgd_targeted | gaussian_noise | both")
        ->check(CLI::IsMember({"pgd_targeted", "gaussian_noise", "both"}));
    attack->add_option("--strengths", strengths, "Strength grid (ascending)");
    attack->add_option("--iterations", iterations, "PGD iterations");
    attack->add_option("--path", path, "discriminator | generator | both")
        ->check(CLI::IsMember({"discriminator", "generator", "both"}));
    auto* explain = app.add_subcommand("explain", "Counterfactual panels for input images");
    add_common(explain, c, true);
    explain->add_option("inputs", inputs, "Input images")->required();
    auto* run = app.add_subcommand("run", "Train, evaluate and attack in one go");
    add_common(run, c, false);
    for (auto* sub : {evaluate, attack, explain})
        sub->add_flag("--best", use_best, "Use the best-validation weights stored in the checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*synth) return cmd_synth(c);
        if (*train) return cmd_train(c, resume);
        if (*evaluate) return cmd_eval(c, use_best);
        if (*attack) return cmd_attack(c, use_best, kind, strengths, iterations, path);
        if (*explain) return cmd_explain(c, use_best, inputs);
        if (*run) return cmd_run(c);
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kConfig;
    } catch (const DataError& e) {
        spdlog::error("data error: {}", e.what());
        return kData;
    } catch (const DivergenceError& e) {
        spdlog::error("training diverged: {}", e.what());
        return kDiverged;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kOther;
    }
    return kOther;
}
