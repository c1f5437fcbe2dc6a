// Direct-loop serial kernels. Slow on purpose: no im2col, no blocking.

#include "cfgan/kernels.hpp"

namespace cfgan::kernels::reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
    const std::int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t o = 0; o < g.out_channels; ++o)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (std::int64_t c = 0; c < g.in_channels; ++c)
                        for (std::int64_t ky = 0; ky < k; ++ky)
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t iy = y * g.stride - g.padding + ky;
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                acc += weight[((o * g.in_channels + c) * k + ky) * k + kx] *
                                       input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                            }
                    output[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
                }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
    const std::int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t o = 0; o < g.out_channels; ++o)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    const double gy = grad_output[((n * g.out_channels + o) * oh + y) * ow + x];
                    for (std::int64_t c = 0; c < g.in_channels; ++c)
                        for (std::int64_t ky = 0; ky < k; ++ky)
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t iy = y * g.stride - g.padding + ky;
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                grad_input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] +=
                                    gy * weight[((o * g.in_channels + c) * k + ky) * k + kx];
                            }
                }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
    const std::int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t o = 0; o < g.out_channels; ++o)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    const double gy = grad_output[((n * g.out_channels + o) * oh + y) * ow + x];
                    if (!grad_bias.empty()) grad_bias[o] += gy;
                    for (std::int64_t c = 0; c < g.in_channels; ++c)
                        for (std::int64_t ky = 0; ky < k; ++ky)
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t iy = y * g.stride - g.padding + ky;
                                const std::int64_t ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                grad_weight[((o * g.in_channels + c) * k + ky) * k + kx] +=
                                    gy * input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                            }
                }
}

void linear_forward(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                    std::span<const double> w, std::span<const double> b, std::span<double> y) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (std::int64_t i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
            y[r * out + o] = acc;
        }
}

void linear_backward_input(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> grad_y,
                           std::span<const double> w, std::span<double> grad_x) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t o = 0; o < out; ++o)
            for (std::int64_t i = 0; i < in; ++i) grad_x[r * in + i] += grad_y[r * out + o] * w[o * in + i];
}

void linear_backward_weight(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                            std::span<const double> grad_y, std::span<double> grad_w, std::span<double> grad_b) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t o = 0; o < out; ++o) {
            if (!grad_b.empty()) grad_b[o] += grad_y[r * out + o];
            for (std::int64_t i = 0; i < in; ++i) grad_w[o * in + i] += grad_y[r * out + o] * x[r * in + i];
        }
}

void batched_matmul(std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n, std::span<const double> a,
                    bool trans_a, std::span<const double> bm, bool trans_b, std::span<double> c, bool accumulate) {
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* pa = a.data() + b * m * k;
        const double* pb = bm.data() + b * k * n;
        double* pc = c.data() + b * m * n;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < k; ++t) {
                    const double av = trans_a ? pa[t * m + i] : pa[i * k + t];
                    const double bv = trans_b ? pb[j * k + t] : pb[t * n + j];
                    acc += av * bv;
                }
                pc[i * n + j] = accumulate ? pc[i * n + j] + acc : acc;
            }
    }
}

void upsample_nearest2x_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                                std::span<double> out) {
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t y = 0; y < 2 * h; ++y)
            for (std::int64_t x = 0; x < 2 * w; ++x)
                out[(p * 2 * h + y) * 2 * w + x] = in[(p * h + y / 2) * w + x / 2];
}

void avg_pool2x2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                         std::span<double> out) {
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t y = 0; y < h / 2; ++y)
            for (std::int64_t x = 0; x < w / 2; ++x) {
                double s = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) s += in[(p * h + 2 * y + dy) * w + 2 * x + dx];
                out[(p * (h / 2) + y) * (w / 2) + x] = 0.25 * s;
            }
}

}  // namespace cfgan::kernels::reference
