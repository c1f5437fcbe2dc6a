#include "cfgan/generator.hpp"

#include <stdexcept>

namespace cfgan {

void GeneratorConfig::validate() const {
    if (backbone != "cnn_unet" && backbone != "attention_unet")
        throw std::invalid_argument("generator.backbone must be cnn_unet or attention_unet, got " + backbone);
    if (image_channels < 1) throw std::invalid_argument("generator.image_channels must be >= 1");
    if (depth < 1) throw std::invalid_argument("generator.depth must be >= 1");
    if (image_size < 8 || image_size % (std::int64_t{1} << depth))
        throw std::invalid_argument("generator.image_size must be divisible by 2^depth");
    if (base_channels < 1) throw std::invalid_argument("generator.base_channels must be >= 1");
    if (latent_dim < 1) throw std::invalid_argument("generator.latent_dim must be >= 1");
    if (noise_channels < 0) throw std::invalid_argument("generator.noise_channels must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("generator.dropout must be in [0, 1)");
    if (use_vq && codebook_size < 2) throw std::invalid_argument("generator.codebook_size must be >= 2");
    if (output != "tanh" && output != "residual")
        throw std::invalid_argument("generator.output must be tanh or residual, got " + output);
    if (backbone == "attention_unet" && base_channels % attention_heads)
        throw std::invalid_argument("generator.base_channels must be divisible by attention_heads");
}

bool Generator::attention_at(std::int64_t level) const {
    return cfg_.backbone == "attention_unet" && level >= 1;
}

Generator::Generator(GeneratorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::int64_t b = cfg_.base_channels;
    for (std::int64_t i = 0; i <= cfg_.depth; ++i) channels_.push_back(b << std::min<std::int64_t>(i, 2));

    stem_ = nn::Conv2d(cfg_.image_channels, b, 3, 1, 1, rng);
    down_.resize(static_cast<std::size_t>(cfg_.depth));
    enc_conv_.resize(down_.size());
    enc_attention_.resize(down_.size());
    for (std::int64_t i = 1; i <= cfg_.depth; ++i) {
        const auto k = static_cast<std::size_t>(i - 1);
        down_[k] = nn::Conv2d(channels_[k], channels_[k + 1], 3, 2, 1, rng);
        if (attention_at(i))
            enc_attention_[k] = nn::WindowAttentionBlock(channels_[k + 1], cfg_.attention_window,
                                                         cfg_.attention_heads, i % 2 == 0, rng);
        else
            enc_conv_[k] = nn::ConvBlock(channels_[k + 1], channels_[k + 1], rng);
    }

    const std::int64_t bottom = channels_.back();
    if (cfg_.use_vq) {
        vq_in_ = nn::Conv2d(bottom, cfg_.codebook_dim, 1, 1, 0, rng);
        vq_ = nn::VectorQuantizer(cfg_.codebook_size, cfg_.codebook_dim, cfg_.commitment, rng);
        vq_out_ = nn::Conv2d(cfg_.codebook_dim, bottom, 1, 1, 0, rng);
    }

    std::int64_t pooled = 0;
    for (std::int64_t level = cfg_.depth; level >= 1; --level) {
        const std::int64_t in = channels_[static_cast<std::size_t>(level)];
        const std::int64_t out = channels_[static_cast<std::size_t>(level - 1)];
        const std::int64_t res = cfg_.image_size >> (level - 1);
        Stage s;
        s.up = nn::Conv2d(in, out, 3, 1, 1, rng);
        s.fuse = nn::Conv2d(2 * out, out, 3, 1, 1, rng);
        if (cfg_.backbone == "attention_unet")
            s.attention = nn::WindowAttentionBlock(out, cfg_.attention_window, cfg_.attention_heads, level % 2 == 1, rng);
        s.noise = nn::NoiseInjection(out, cfg_.noise_channels, cfg_.latent_dim, res, res, rng);
        s.pool = nn::WeightedAveragePool(out, rng);
        stages_.push_back(std::move(s));
        pooled += out;
    }
    fc1_ = nn::Linear(pooled, cfg_.class_hidden, rng);
    fc2_ = nn::Linear(cfg_.class_hidden, 2, rng);
    head_ = nn::Conv2d(b, cfg_.image_channels, 3, 1, 1, rng);
    // A zero head makes the residual generator start as the identity map.
    if (cfg_.output == "residual") {
        head_.weight.mutable_value().fill(0.0);
        head_.bias.mutable_value().fill(0.0);
    }
}

Tensor Generator::sample_latent(std::int64_t n, Rng& rng) const {
    return nn::normal_tensor({n, cfg_.latent_dim}, rng);
}

GeneratorOutput Generator::forward(const Var& x, const Var& z, Rng& rng) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg_.image_channels || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
        throw std::invalid_argument("Generator: expected [N, " + std::to_string(cfg_.image_channels) + ", " +
                                    std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) +
                                    "], got " + shape_str(s));
    if (z.value().rank() != 2 || z.dim(0) != s[0] || z.dim(1) != cfg_.latent_dim)
        throw std::invalid_argument("Generator: latent shape " + shape_str(z.shape()) + " does not match batch");

    GeneratorOutput out;
    Var h = ops::leaky_relu(stem_(x));
    std::vector<Var> skips{h};
    for (std::int64_t i = 1; i <= cfg_.depth; ++i) {
        const auto k = static_cast<std::size_t>(i - 1);
        h = ops::leaky_relu(down_[k](h));
        h = attention_at(i) ? enc_attention_[k](h) : enc_conv_[k](h);
        if (i < cfg_.depth) skips.push_back(h);
    }

    if (cfg_.use_vq) {
        auto q = vq_(vq_in_(h));
        out.vq_loss = q.loss;
        out.vq_indices = std::move(q.indices);
        h = ops::leaky_relu(vq_out_(q.quantized));
    }

    std::vector<Var> pooled;
    for (std::size_t j = 0; j < stages_.size(); ++j) {
        const Stage& st = stages_[j];
        Var u = ops::leaky_relu(st.up(ops::upsample_nearest2x(h)));
        u = ops::leaky_relu(st.fuse(ops::concat({u, skips[skips.size() - 1 - j]}, 1)));
        if (st.attention.parameter_count() > 0) u = st.attention(u);
        u = ops::dropout(u, cfg_.dropout, rng);
        u = st.noise(u, z);
        pooled.push_back(st.pool(u));
        h = u;
    }
    out.class_probs = ops::softmax(fc2_(ops::leaky_relu(fc1_(ops::concat(pooled, 1)))));

    Var head = head_(h);
    if (cfg_.output == "residual") {
        Var xc = ops::clamp(x, -0.999, 0.999);
        Var atanh_x = 0.5 * (ops::log(ops::add_scalar(xc, 1.0)) - ops::log(ops::add_scalar(-xc, 1.0)));
        head = head + atanh_x;
    }
    out.image = ops::tanh(head);
    return out;
}

void Generator::collect(const std::string& prefix, std::vector<nn::NamedParameter>& out) const {
    stem_.collect(prefix + "stem.", out);
    for (std::size_t k = 0; k < down_.size(); ++k) {
        const std::string p = prefix + "enc" + std::to_string(k + 1) + ".";
        down_[k].collect(p + "down.", out);
        enc_conv_[k].collect(p + "block.", out);
        enc_attention_[k].collect(p + "attn.", out);
    }
    if (cfg_.use_vq) {
        vq_in_.collect(prefix + "vq.in.", out);
        vq_.collect(prefix + "vq.", out);
        vq_out_.collect(prefix + "vq.out.", out);
    }
    for (std::size_t j = 0; j < stages_.size(); ++j) {
        const std::string p = prefix + "dec" + std::to_string(j + 1) + ".";
        stages_[j].up.collect(p + "up.", out);
        stages_[j].fuse.collect(p + "fuse.", out);
        stages_[j].attention.collect(p + "attn.", out);
        stages_[j].noise.collect(p + "noise.", out);
        stages_[j].pool.collect(p + "pool.", out);
    }
    fc1_.collect(prefix + "cls.fc1.", out);
    fc2_.collect(prefix + "cls.fc2.", out);
    head_.collect(prefix + "head.", out);
}

}  // namespace cfgan
