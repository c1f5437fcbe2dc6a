#pragma once

// UNet-shaped counterfactual generator G(x, z) = (x_hat, y_hat).

#include <string>
#include <vector>

#include "cfgan/layers.hpp"

namespace cfgan {

struct GeneratorConfig {
    std::string backbone = "cnn_unet";  // cnn_unet | attention_unet
    std::int64_t image_channels = 3;
    std::int64_t image_size = 64;
    std::int64_t base_channels = 8;
    std::int64_t depth = 3;
    std::int64_t latent_dim = 64;
    std::int64_t noise_channels = 8;  // per decoder stage; 0 disables injection
    std::int64_t class_hidden = 32;
    double dropout = 0.5;
    bool use_vq = false;
    std::int64_t codebook_size = 512;
    std::int64_t codebook_dim = 16;
    double commitment = 0.25;
    std::int64_t attention_window = 8;
    std::int64_t attention_heads = 2;
    // "tanh": x_hat = tanh(head). "residual": x_hat = tanh(atanh(x) + head), with the head
    // initialised to zero so G starts as the identity.
    std::string output = "tanh";

    void validate() const;
};

struct GeneratorOutput {
    Var image;        // [N, C, H, W] in [-1, 1]
    Var class_probs;  // [N, 2]
    Var vq_loss;      // scalar, undefined without a VQ bottleneck
    std::vector<std::int64_t> vq_indices;
};

class Generator : public nn::Module {
public:
    Generator() = default;
    Generator(GeneratorConfig cfg, Rng& init_rng);

    // z: [N, latent_dim]. `rng` drives dropout.
    GeneratorOutput forward(const Var& x, const Var& z, Rng& rng) const;
    Var classify(const Var& x, const Var& z, Rng& rng) const { return forward(x, z, rng).class_probs; }

    Tensor sample_latent(std::int64_t n, Rng& rng) const;

    const GeneratorConfig& config() const { return cfg_; }
    void collect(const std::string& prefix, std::vector<nn::NamedParameter>& out) const override;

private:
    struct Stage {
        nn::Conv2d up, fuse;
        nn::WindowAttentionBlock attention;
        nn::NoiseInjection noise;
        nn::WeightedAveragePool pool;
    };

    bool attention_at(std::int64_t level) const;

    GeneratorConfig cfg_;
    std::vector<std::int64_t> channels_;
    nn::Conv2d stem_;
    std::vector<nn::Conv2d> down_;
    std::vector<nn::ConvBlock> enc_conv_;
    std::vector<nn::WindowAttentionBlock> enc_attention_;
    nn::Conv2d vq_in_, vq_out_;
    nn::VectorQuantizer vq_;
    std::vector<Stage> stages_;
    nn::Linear fc1_, fc2_;
    nn::Conv2d head_;
};

}  // namespace cfgan
