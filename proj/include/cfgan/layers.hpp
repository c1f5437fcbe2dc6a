#pragma once

// Building blocks shared by the generator and discriminator backbones.

#include <vector>

#include "cfgan/nn.hpp"

namespace cfgan::nn {

// conv3x3 -> leaky relu -> conv3x3 -> leaky relu
class ConvBlock : public Module {
public:
    ConvBlock() = default;
    ConvBlock(std::int64_t in, std::int64_t out, Rng& rng);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

private:
    Conv2d conv1_, conv2_;
};

// Pre-activation-free residual block; the shortcut is avg-pool + 1x1 conv when shapes change.
class ResidualBlock : public Module {
public:
    ResidualBlock() = default;
    ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

private:
    Conv2d conv1_, conv2_, shortcut_;
    std::int64_t stride_ = 1;
    bool project_ = false;
};

// Transformer block over non-overlapping square windows of an NCHW map,
// optionally with a cyclic half-window shift.
class WindowAttentionBlock : public Module {
public:
    WindowAttentionBlock() = default;
    WindowAttentionBlock(std::int64_t channels, std::int64_t window, std::int64_t heads, bool shifted, Rng& rng);
    Var operator()(const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

private:
    LayerNorm norm1_, norm2_;
    Linear q_, k_, v_, proj_, fc1_, fc2_;
    std::int64_t channels_ = 0, window_ = 8, heads_ = 1;
    bool shifted_ = false;
};

// [N, C, H, W] -> [N * (H/w) * (W/w), w*w, C], and back.
Var window_partition(const Var& x, std::int64_t window);
Var window_merge(const Var& tokens, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t window);
// Cyclic shift of the spatial axes by (dy, dx).
Var roll2d(const Var& x, std::int64_t dy, std::int64_t dx);

// u <- W1 * concat(u, reshape(W0 * z)): z [N, d] is projected to `noise_channels`
// planes of the stage resolution, concatenated, and mixed back to C channels by a
// 1x1 convolution.
class NoiseInjection : public Module {
public:
    NoiseInjection() = default;
    NoiseInjection(std::int64_t channels, std::int64_t noise_channels, std::int64_t latent_dim, std::int64_t height,
                   std::int64_t width, Rng& rng);
    Var operator()(const Var& u, const Var& z) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

    std::int64_t noise_channels() const { return noise_channels_; }
    Linear& project() { return project_; }
    Conv2d& mix() { return mix_; }

private:
    Linear project_;
    Conv2d mix_;
    std::int64_t channels_ = 0, noise_channels_ = 0, latent_dim_ = 1, height_ = 1, width_ = 1;
};

// out[n, c] = sum_p s[n,c,p] * w[n,c,p] / (sum_p w[n,c,p] + eps)
Var weighted_average_pool(const Var& scores, const Var& weights, double eps = 1e-8);

// Score head and softplus-activated weight head (both 1x1 convs) feeding weighted_average_pool.
class WeightedAveragePool : public Module {
public:
    WeightedAveragePool() = default;
    WeightedAveragePool(std::int64_t channels, Rng& rng);
    Var operator()(const Var& u) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

private:
    Conv2d score_, weight_;
};

struct QuantizeResult {
    Var quantized;                      // same shape as the latent; gradient passes straight through
    Var loss;                           // codebook term + commitment * commitment term
    std::vector<std::int64_t> indices;  // per spatial position, row-major over (n, h, w)
};

// Nearest codebook row per spatial vector of latent [N, D, H, W]; ties go to the lowest index.
QuantizeResult vector_quantize(const Var& latent, const Var& codebook, double commitment = 0.25);

class VectorQuantizer : public Module {
public:
    VectorQuantizer() = default;
    VectorQuantizer(std::int64_t codebook_size, std::int64_t dim, double commitment, Rng& rng);
    QuantizeResult operator()(const Var& latent) const { return vector_quantize(latent, codebook, commitment_); }
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const override;

    Var codebook;

private:
    double commitment_ = 0.25;
};

}  // namespace cfgan::nn
