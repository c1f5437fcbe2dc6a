#include "cfgan/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cfgan::nn {

ConvBlock::ConvBlock(std::int64_t in, std::int64_t out, Rng& rng)
    : conv1_(in, out, 3, 1, 1, rng), conv2_(out, out, 3, 1, 1, rng) {}

Var ConvBlock::operator()(const Var& x) const {
    return ops::leaky_relu(conv2_(ops::leaky_relu(conv1_(x))));
}

void ConvBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    conv1_.collect(prefix + "conv1.", out);
    conv2_.collect(prefix + "conv2.", out);
}

ResidualBlock::ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng)
    : conv1_(in, out, 3, stride, 1, rng), conv2_(out, out, 3, 1, 1, rng), stride_(stride),
      project_(stride != 1 || in != out) {
    if (stride != 1 && stride != 2) throw std::invalid_argument("ResidualBlock: stride must be 1 or 2");
    if (project_) shortcut_ = Conv2d(in, out, 1, 1, 0, rng);
}

Var ResidualBlock::operator()(const Var& x) const {
    Var main = conv2_(ops::leaky_relu(conv1_(x)));
    Var skip = x;
    if (stride_ == 2) skip = ops::avg_pool2x2(skip);
    if (project_) skip = shortcut_(skip);
    return ops::leaky_relu(main + skip);
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    conv1_.collect(prefix + "conv1.", out);
    conv2_.collect(prefix + "conv2.", out);
    if (project_) shortcut_.collect(prefix + "shortcut.", out);
}

Var window_partition(const Var& x, std::int64_t window) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % window || w % window) throw std::invalid_argument("window_partition: size not divisible by window");
    const std::int64_t nh = h / window, nw = w / window;
    Var t = ops::reshape(x, {n, c, nh, window, nw, window});
    t = ops::permute(t, {0, 2, 4, 3, 5, 1});
    return ops::reshape(t, {n * nh * nw, window * window, c});
}

Var window_merge(const Var& tokens, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                 std::int64_t window) {
    const std::int64_t nh = h / window, nw = w / window;
    Var t = ops::reshape(tokens, {n, nh, nw, window, window, c});
    t = ops::permute(t, {0, 5, 1, 3, 2, 4});
    return ops::reshape(t, {n, c, h, w});
}

Var roll2d(const Var& x, std::int64_t dy, std::int64_t dx) {
    const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<std::int64_t> index(static_cast<std::size_t>(x.numel()));
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t y = 0; y < h; ++y) {
            const std::int64_t sy = ((y - dy) % h + h) % h;
            for (std::int64_t xx = 0; xx < w; ++xx) {
                const std::int64_t sx = ((xx - dx) % w + w) % w;
                index[static_cast<std::size_t>((p * h + y) * w + xx)] = (p * h + sy) * w + sx;
            }
        }
    return ops::gather(x, std::move(index), x.shape());
}

WindowAttentionBlock::WindowAttentionBlock(std::int64_t channels, std::int64_t window, std::int64_t heads,
                                           bool shifted, Rng& rng)
    : norm1_(channels), norm2_(channels), q_(channels, channels, rng), k_(channels, channels, rng),
      v_(channels, channels, rng), proj_(channels, channels, rng), fc1_(channels, 2 * channels, rng),
      fc2_(2 * channels, channels, rng), channels_(channels), window_(window), heads_(heads), shifted_(shifted) {
    if (heads < 1 || channels % heads) throw std::invalid_argument("WindowAttentionBlock: channels % heads != 0");
}

Var WindowAttentionBlock::operator()(const Var& x) const {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != channels_) throw std::invalid_argument("WindowAttentionBlock: channel mismatch");
    const std::int64_t win = std::min({window_, h, w});
    const std::int64_t shift = (shifted_ && win < h) ? win / 2 : 0;
    Var xs = shift ? roll2d(x, -shift, -shift) : x;

    Var tok = window_partition(xs, win);
    const std::int64_t b = tok.dim(0), t = tok.dim(1), dh = c / heads_;
    Var rows = ops::reshape(tok, {b * t, c});

    auto split_heads = [&](const Var& m) {
        Var r = ops::reshape(m, {b, t, heads_, dh});
        r = ops::permute(r, {0, 2, 1, 3});
        return ops::reshape(r, {b * heads_, t, dh});
    };
    Var y = norm1_(rows);
    Var q = split_heads(q_(y));
    Var k = split_heads(k_(y));
    Var v = split_heads(v_(y));
    Var scores = ops::scale(ops::batched_matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = ops::reshape(ops::softmax(ops::reshape(scores, {b * heads_ * t, t})), {b * heads_, t, t});
    Var ctx = ops::batched_matmul(attn, v);
    ctx = ops::permute(ops::reshape(ctx, {b, heads_, t, dh}), {0, 2, 1, 3});
    rows = rows + proj_(ops::reshape(ctx, {b * t, c}));
    rows = rows + fc2_(ops::gelu(fc1_(norm2_(rows))));

    Var out = window_merge(ops::reshape(rows, {b, t, c}), n, c, h, w, win);
    return shift ? roll2d(out, shift, shift) : out;
}

void WindowAttentionBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    norm1_.collect(prefix + "norm1.", out);
    q_.collect(prefix + "q.", out);
    k_.collect(prefix + "k.", out);
    v_.collect(prefix + "v.", out);
    proj_.collect(prefix + "proj.", out);
    norm2_.collect(prefix + "norm2.", out);
    fc1_.collect(prefix + "fc1.", out);
    fc2_.collect(prefix + "fc2.", out);
}

NoiseInjection::NoiseInjection(std::int64_t channels, std::int64_t noise_channels, std::int64_t latent_dim,
                               std::int64_t height, std::int64_t width, Rng& rng)
    : channels_(channels), noise_channels_(noise_channels), latent_dim_(latent_dim), height_(height), width_(width) {
    if (latent_dim < 1) throw std::invalid_argument("NoiseInjection: latent_dim must be >= 1");
    if (noise_channels < 0) throw std::invalid_argument("NoiseInjection: noise_channels must be >= 0");
    if (noise_channels > 0) project_ = Linear(latent_dim, noise_channels * height * width, rng);
    // Starts as the identity on the feature channels plus a random read of the noise planes.
    const std::int64_t in = channels + noise_channels;
    Tensor w({channels, in, 1, 1});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::int64_t o = 0; o < channels; ++o) {
        w[o * in + o] = 1.0;
        for (std::int64_t j = channels; j < in; ++j) w[o * in + j] = dist(rng);
    }
    mix_.weight = Var(std::move(w), true);
    mix_.bias = Var(Tensor({channels}, 0.0), true);
    mix_.stride = 1;
    mix_.padding = 0;
}

Var NoiseInjection::operator()(const Var& u, const Var& z) const {
    if (u.value().rank() != 4 || u.dim(1) != channels_ || u.dim(2) != height_ || u.dim(3) != width_)
        throw std::invalid_argument("NoiseInjection: feature map shape " + shape_str(u.shape()) + " unexpected");
    if (noise_channels_ == 0) return mix_(u);
    if (z.value().rank() != 2 || z.dim(0) != u.dim(0) || z.dim(1) != latent_dim_)
        throw std::invalid_argument("NoiseInjection: latent shape " + shape_str(z.shape()) + " unexpected");
    Var noise = ops::reshape(project_(z), {u.dim(0), noise_channels_, height_, width_});
    return mix_(ops::concat({u, noise}, 1));
}

void NoiseInjection::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    if (noise_channels_ > 0) project_.collect(prefix + "project.", out);
    mix_.collect(prefix + "mix.", out);
}

Var weighted_average_pool(const Var& scores, const Var& weights, double eps) {
    if (scores.shape() != weights.shape()) throw std::invalid_argument("weighted_average_pool: shape mismatch");
    Var num = ops::spatial_sum(scores * weights);
    Var den = ops::add_scalar(ops::spatial_sum(weights), eps);
    return ops::div(num, den);
}

WeightedAveragePool::WeightedAveragePool(std::int64_t channels, Rng& rng)
    : score_(channels, channels, 1, 1, 0, rng), weight_(channels, channels, 1, 1, 0, rng) {}

Var WeightedAveragePool::operator()(const Var& u) const {
    return weighted_average_pool(score_(u), ops::softplus(weight_(u)));
}

void WeightedAveragePool::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    score_.collect(prefix + "score.", out);
    weight_.collect(prefix + "weight.", out);
}

QuantizeResult vector_quantize(const Var& latent, const Var& codebook, double commitment) {
    if (!codebook.defined() || codebook.value().rank() != 2 || codebook.dim(0) == 0)
        throw std::invalid_argument("vector_quantize: empty codebook");
    if (latent.value().rank() != 4 || latent.dim(1) != codebook.dim(1))
        throw std::invalid_argument("vector_quantize: latent channels " + shape_str(latent.shape()) +
                                    " do not match codebook dim " + std::to_string(codebook.dim(1)));
    const std::int64_t n = latent.dim(0), d = latent.dim(1), h = latent.dim(2), w = latent.dim(3);
    const std::int64_t k = codebook.dim(0);
    Var tokens = ops::reshape(ops::permute(latent, {0, 2, 3, 1}), {n * h * w, d});

    QuantizeResult r;
    r.indices.resize(static_cast<std::size_t>(n * h * w));
    const auto& tv = tokens.value();
    const auto& cb = codebook.value();
    for (std::int64_t t = 0; t < n * h * w; ++t) {
        double best = std::numeric_limits<double>::infinity();
        std::int64_t arg = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            double dist = 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
                const double diff = tv[t * d + c] - cb[j * d + c];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        r.indices[static_cast<std::size_t>(t)] = arg;
    }
    Var selected = ops::embedding(codebook, r.indices);
    Var codebook_term = ops::mean(ops::square(selected - tokens.detach()));
    Var commit_term = ops::mean(ops::square(tokens - selected.detach()));
    r.loss = codebook_term + ops::scale(commit_term, commitment);
    Var q = ops::straight_through(tokens, selected.value());
    r.quantized = ops::permute(ops::reshape(q, {n, h, w, d}), {0, 3, 1, 2});
    return r;
}

VectorQuantizer::VectorQuantizer(std::int64_t codebook_size, std::int64_t dim, double commitment, Rng& rng)
    : commitment_(commitment) {
    if (codebook_size < 2) throw std::invalid_argument("VectorQuantizer: codebook needs at least 2 entries");
    const double bound = 1.0 / static_cast<double>(codebook_size);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t({codebook_size, dim});
    for (auto& v : t.data()) v = dist(rng);
    codebook = Var(std::move(t), true);
}

void VectorQuantizer::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    out.push_back({prefix + "codebook", codebook});
}

}  // namespace cfgan::nn
