#include "cfgan/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cfgan/errors.hpp"
#include "cfgan/hash.hpp"

namespace cfgan {
using nlohmann::json;

namespace nn {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps)
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticDataConfig, count, defect_rate, canvas_size, channels,
                                                thickness_min, thickness_max, intensity_min, intensity_max, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FolderLayout, class_dirs, mask_dir, source_regex, channels, extensions)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitSpec, train, val, test, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, crop_min, brightness, hue, blur_sigma_max, flips,
                                                rotations)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataSection, source, root, synthetic, layout, split, augment,
                                                augmentation)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, backbone, base_channels, depth, latent_dim,
                                                noise_channels, class_hidden, dropout, use_vq, codebook_size,
                                                codebook_dim, commitment, attention_window, attention_heads, output,
                                                image_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiscriminatorConfig, backbone, base_channels, pooling, attention_dim,
                                                attention_window, attention_heads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda1, lambda2, lambda3, lambda_c, cycles,
                                                cycle_fake_sign_alternates, generator_objective)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttackSection, pgd_strengths, noise_strengths, iterations, epsilon,
                                                batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSection, quantiles, batch_size, embedder_dim, embedder_seed,
                                                panels)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BaselineSection, enabled, steps)

// Seed, weights and augmentation live in their own sections, so the train section omits them.
struct TrainSection {
    std::int64_t steps = 2000;
    std::int64_t batch_size = 16;
    std::int64_t d_updates_per_g_update = 2;
    std::int64_t d_warmup_steps = 0;
    nn::AdamConfig g_optim;
    nn::AdamConfig d_optim;
    std::int64_t checkpoint_every = 0;
    std::int64_t eval_every = 250;
    std::int64_t collapse_patience = 100;
    double collapse_std = 1e-4;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainSection, steps, batch_size, d_updates_per_g_update, d_warmup_steps, g_optim,
                                                d_optim, checkpoint_every, eval_every, collapse_patience,
                                                collapse_std)

namespace {

TrainSection section_of(const TrainConfig& t) {
    return {t.steps,      t.batch_size,       t.d_updates_per_g_update, t.d_warmup_steps, t.g_optim,
            t.d_optim,    t.checkpoint_every, t.eval_every,             t.collapse_patience, t.collapse_std};
}

void check_keys(const json& doc, const json& known, const std::string& path) {
    for (const auto& [key, value] : doc.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!known.contains(key)) throw ConfigError("unknown config key '" + where + "'");
        // class_dirs is a user-keyed map
        if (value.is_object() && known.at(key).is_object() && where != "data.layout.class_dirs")
            check_keys(value, known.at(key), where);
    }
}

}  // namespace

void RunConfig::finalize() {
    const std::int64_t channels = data.source == "folder" ? data.layout.channels : data.synthetic.channels;
    generator.image_channels = channels;
    discriminator.image_channels = channels;
    discriminator.image_size = generator.image_size;
    data.augmentation.working_size = generator.image_size;
    try {
        if (data.source != "synthetic" && data.source != "folder")
            throw std::invalid_argument("data.source must be synthetic or folder, got " + data.source);
        if (data.source == "folder" && data.root.empty()) throw std::invalid_argument("data.root is required for folder data");
        if (data.split.train <= 0 || data.split.val < 0 || data.split.test <= 0 ||
            std::abs(data.split.train + data.split.val + data.split.test - 1.0) > 1e-9)
            throw std::invalid_argument("data.split ratios must be positive and sum to 1");
        if (data.source == "synthetic") data.synthetic.validate();
        data.augmentation.validate();
        generator.validate();
        discriminator.validate();
        train_config().validate();
        if (attack.iterations < 1) throw std::invalid_argument("attack.iterations must be >= 1");
        if (attack.batch_size < 1 || evaluation.batch_size < 1) throw std::invalid_argument("batch sizes must be >= 1");
        for (const auto* grid : {&attack.pgd_strengths, &attack.noise_strengths}) {
            if (grid->empty()) throw std::invalid_argument("attack strength grids must be nonempty");
            if (!std::is_sorted(grid->begin(), grid->end()) || grid->front() < 0)
                throw std::invalid_argument("attack strength grids must be ascending and >= 0");
        }
        if (evaluation.quantiles.empty()) throw std::invalid_argument("evaluation.quantiles must be nonempty");
        for (double q : evaluation.quantiles)
            if (q < 0.0 || q >= 1.0) throw std::invalid_argument("evaluation.quantiles must lie in [0, 1)");
        if (evaluation.embedder_dim < 1) throw std::invalid_argument("evaluation.embedder_dim must be >= 1");
        if (baseline.steps < -1) throw std::invalid_argument("baseline.steps must be >= -1");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.weights = loss;
    t.augment = data.augment;
    t.augmentation = data.augmentation;
    t.augmentation.working_size = generator.image_size;
    return t;
}

json to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["data"] = cfg.data;
    j["generator"] = cfg.generator;
    j["discriminator"] = cfg.discriminator;
    j["loss"] = cfg.loss;
    j["train"] = section_of(cfg.train);
    j["attack"] = cfg.attack;
    j["evaluation"] = cfg.evaluation;
    j["baseline"] = cfg.baseline;
    return j;
}

RunConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    check_keys(doc, to_json(RunConfig{}), "");
    RunConfig cfg;
    try {
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.output_dir = doc.value("output_dir", cfg.output_dir);
        if (doc.contains("data")) cfg.data = doc.at("data").get<DataSection>();
        if (doc.contains("generator")) cfg.generator = doc.at("generator").get<GeneratorConfig>();
        if (doc.contains("discriminator")) cfg.discriminator = doc.at("discriminator").get<DiscriminatorConfig>();
        if (doc.contains("loss")) cfg.loss = doc.at("loss").get<LossWeights>();
        if (doc.contains("train")) {
            const auto t = doc.at("train").get<TrainSection>();
            cfg.train.steps = t.steps;
            cfg.train.batch_size = t.batch_size;
            cfg.train.d_updates_per_g_update = t.d_updates_per_g_update;
            cfg.train.d_warmup_steps = t.d_warmup_steps;
            cfg.train.g_optim = t.g_optim;
            cfg.train.d_optim = t.d_optim;
            cfg.train.checkpoint_every = t.checkpoint_every;
            cfg.train.eval_every = t.eval_every;
            cfg.train.collapse_patience = t.collapse_patience;
            cfg.train.collapse_std = t.collapse_std;
        }
        if (doc.contains("attack")) cfg.attack = doc.at("attack").get<AttackSection>();
        if (doc.contains("evaluation")) cfg.evaluation = doc.at("evaluation").get<EvalSection>();
        if (doc.contains("baseline")) cfg.baseline = doc.at("baseline").get<BaselineSection>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.finalize();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ConfigError("override path " + path + " crosses a non-object");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

std::string config_hash(const RunConfig& cfg) {
    json j = to_json(cfg);
    j.erase("output_dir");
    return sha256_hex(j.dump());
}

std::string training_hash(const RunConfig& cfg) {
    json j = to_json(cfg);
    for (const char* key : {"output_dir", "attack", "evaluation"}) j.erase(key);
    return sha256_hex(j.dump());
}

}  // namespace cfgan
