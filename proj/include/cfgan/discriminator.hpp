#pragma once

// Discriminator-classifier D(x) = [p0, p1, p_fake].

#include <string>
#include <vector>

#include "cfgan/layers.hpp"

namespace cfgan {

struct DiscriminatorConfig {
    std::string backbone = "resnet_tiny";  // resnet_tiny | resnet_mid | attention | hybrid
    std::int64_t image_channels = 3;
    std::int64_t image_size = 64;
    std::int64_t base_channels = 16;
    // "avg": global average of the last map. "avg_max": average and maximum concatenated,
    // which lets thin, sparse defects reach the head without being diluted.
    std::string pooling = "avg_max";
    std::int64_t attention_dim = 32;
    std::int64_t attention_window = 4;
    std::int64_t attention_heads = 2;

    void validate() const;
};

class Discriminator : public nn::Module {
public:
    Discriminator() = default;
    Discriminator(DiscriminatorConfig cfg, Rng& init_rng);

    // Last spatial map of each branch (one for single backbones, two for the hybrid).
    std::vector<Var> spatial_features(const Var& x) const;
    // Pooled and concatenated branch features, the penultimate layer.
    Var pooled(const std::vector<Var>& maps) const;
    Var head(const std::vector<Var>& maps) const;

    Var logits(const Var& x) const { return head(spatial_features(x)); }
    // [N, 3] softmax triple.
    Var probs(const Var& x) const { return ops::softmax(logits(x)); }
    Var penultimate(const Var& x) const { return pooled(spatial_features(x)); }

    // Branch whose map GradCAM reads.
    std::size_t gradcam_branch() const { return 0; }

    const DiscriminatorConfig& config() const { return cfg_; }
    void collect(const std::string& prefix, std::vector<nn::NamedParameter>& out) const override;

private:
    Var resnet_branch(const Var& x) const;
    Var attention_branch(const Var& x) const;
    std::int64_t pool_width() const { return cfg_.pooling == "avg_max" ? 2 : 1; }
    bool has_resnet() const { return cfg_.backbone != "attention"; }
    bool has_attention() const { return cfg_.backbone == "attention" || cfg_.backbone == "hybrid"; }

    DiscriminatorConfig cfg_;
    nn::Conv2d stem_;
    std::vector<nn::ResidualBlock> blocks_;
    nn::Conv2d patch_embed_, merge_;
    std::vector<nn::WindowAttentionBlock> attn_low_, attn_high_;
    nn::Linear fc_;
};

// argmax over (p0, p1); ties go to class 0.
int predict_class(double p0, double p1);
std::vector<int> predict_classes(const Tensor& triples);

}  // namespace cfgan
