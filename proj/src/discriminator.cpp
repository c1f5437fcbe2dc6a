#include "cfgan/discriminator.hpp"

#include <stdexcept>

namespace cfgan {

void DiscriminatorConfig::validate() const {
    if (backbone != "resnet_tiny" && backbone != "resnet_mid" && backbone != "attention" && backbone != "hybrid")
        throw std::invalid_argument("discriminator.backbone must be resnet_tiny, resnet_mid, attention or hybrid, got " +
                                    backbone);
    if (image_channels < 1) throw std::invalid_argument("discriminator.image_channels must be >= 1");
    if (image_size < 8 || image_size % 8) throw std::invalid_argument("discriminator.image_size must be divisible by 8");
    if (pooling != "avg" && pooling != "avg_max")
        throw std::invalid_argument("discriminator.pooling must be avg or avg_max, got " + pooling);
    if (base_channels < 1) throw std::invalid_argument("discriminator.base_channels must be >= 1");
    if (attention_dim < 1 || attention_heads < 1 || attention_dim % attention_heads)
        throw std::invalid_argument("discriminator.attention_dim must be divisible by attention_heads");
}

Discriminator::Discriminator(DiscriminatorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::int64_t b = cfg_.base_channels;
    std::int64_t features = 0;
    if (has_resnet()) {
        stem_ = nn::Conv2d(cfg_.image_channels, b, 3, 1, 1, rng);
        if (cfg_.backbone == "resnet_mid") {
            blocks_.emplace_back(b, b, 2, rng);
            blocks_.emplace_back(b, b, 1, rng);
            blocks_.emplace_back(b, 2 * b, 2, rng);
            blocks_.emplace_back(2 * b, 2 * b, 1, rng);
            blocks_.emplace_back(2 * b, 4 * b, 2, rng);
            blocks_.emplace_back(4 * b, 4 * b, 1, rng);
        } else {
            blocks_.emplace_back(b, b, 2, rng);
            blocks_.emplace_back(b, 2 * b, 2, rng);
            blocks_.emplace_back(2 * b, 4 * b, 2, rng);
        }
        features += pool_width() * 4 * b;
    }
    if (has_attention()) {
        const std::int64_t a = cfg_.attention_dim;
        patch_embed_ = nn::Conv2d(cfg_.image_channels, a, 4, 4, 0, rng);
        attn_low_.emplace_back(a, cfg_.attention_window, cfg_.attention_heads, false, rng);
        attn_low_.emplace_back(a, cfg_.attention_window, cfg_.attention_heads, true, rng);
        merge_ = nn::Conv2d(a, 2 * a, 2, 2, 0, rng);
        attn_high_.emplace_back(2 * a, cfg_.attention_window, cfg_.attention_heads, false, rng);
        attn_high_.emplace_back(2 * a, cfg_.attention_window, cfg_.attention_heads, true, rng);
        features += pool_width() * 2 * a;
    }
    fc_ = nn::Linear(features, 3, rng);
}

Var Discriminator::resnet_branch(const Var& x) const {
    Var h = ops::leaky_relu(stem_(x));
    for (const auto& block : blocks_) h = block(h);
    return h;
}

Var Discriminator::attention_branch(const Var& x) const {
    Var h = patch_embed_(x);
    for (const auto& block : attn_low_) h = block(h);
    h = merge_(h);
    for (const auto& block : attn_high_) h = block(h);
    return h;
}

std::vector<Var> Discriminator::spatial_features(const Var& x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg_.image_channels || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
        throw std::invalid_argument("Discriminator: expected [N, " + std::to_string(cfg_.image_channels) + ", " +
                                    std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) +
                                    "], got " + shape_str(s));
    std::vector<Var> maps;
    if (has_resnet()) maps.push_back(resnet_branch(x));
    if (has_attention()) maps.push_back(attention_branch(x));
    return maps;
}

Var Discriminator::pooled(const std::vector<Var>& maps) const {
    std::vector<Var> parts;
    for (const auto& m : maps) {
        parts.push_back(ops::global_avg_pool(m));
        if (cfg_.pooling == "avg_max") parts.push_back(ops::global_max_pool(m));
    }
    return parts.size() == 1 ? parts[0] : ops::concat(parts, 1);
}

Var Discriminator::head(const std::vector<Var>& maps) const { return fc_(pooled(maps)); }

void Discriminator::collect(const std::string& prefix, std::vector<nn::NamedParameter>& out) const {
    stem_.collect(prefix + "stem.", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + "block" + std::to_string(i + 1) + ".", out);
    patch_embed_.collect(prefix + "patch.", out);
    for (std::size_t i = 0; i < attn_low_.size(); ++i) attn_low_[i].collect(prefix + "attn_low" + std::to_string(i + 1) + ".", out);
    merge_.collect(prefix + "merge.", out);
    for (std::size_t i = 0; i < attn_high_.size(); ++i)
        attn_high_[i].collect(prefix + "attn_high" + std::to_string(i + 1) + ".", out);
    fc_.collect(prefix + "fc.", out);
}

int predict_class(double p0, double p1) { return p1 > p0 ? 1 : 0; }

std::vector<int> predict_classes(const Tensor& triples) {
    if (triples.rank() != 2 || triples.dim(1) < 2) throw std::invalid_argument("predict_classes: expected [N, >=2]");
    std::vector<int> out;
    const std::int64_t k = triples.dim(1);
    for (std::int64_t n = 0; n < triples.dim(0); ++n) out.push_back(predict_class(triples[n * k], triples[n * k + 1]));
    return out;
}

}  // namespace cfgan
