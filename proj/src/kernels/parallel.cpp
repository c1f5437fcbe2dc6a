#include "cfgan/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfgan::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Fixed partition size for row-blocked GEMMs; independent of the thread count.
constexpr std::int64_t kRowBlock = 64;

bool is_pointwise(const Conv2dGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// Output columns [lo, hi) read in-bounds input for kernel offset k; the rest see padding.
void valid_range(std::int64_t out, std::int64_t in, std::int64_t stride, std::int64_t pad, std::int64_t k,
                 std::int64_t& lo, std::int64_t& hi) {
    lo = std::max<std::int64_t>(0, (pad - k + stride - 1) / stride);
    hi = std::min<std::int64_t>(out, (in - 1 + pad - k) / stride + 1);
    if (in - 1 + pad - k < 0) hi = 0;
    hi = std::max(hi, lo);
}

// Columns for output rows [ra, rb): col is [C*k*k, (rb - ra) * ow].
void im2col(const Conv2dGeometry& g, const double* img, double* col, std::int64_t ra, std::int64_t rb) {
    const std::int64_t ow = g.out_w(), k = g.kernel, s = g.stride, n = (rb - ra) * ow;
    for (std::int64_t c = 0; c < g.in_channels; ++c) {
        const double* plane = img + c * g.in_h * g.in_w;
        for (std::int64_t ky = 0; ky < k; ++ky) {
            std::int64_t y0, y1;
            valid_range(g.out_h(), g.in_h, s, g.padding, ky, y0, y1);
            for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t x0, x1;
                valid_range(ow, g.in_w, s, g.padding, kx, x0, x1);
                y0 = std::clamp(y0, ra, rb);
                y1 = std::clamp(y1, y0, rb);
                double* row = col + ((c * k + ky) * k + kx) * n - ra * ow;
                std::fill(row + ra * ow, row + y0 * ow, 0.0);
                std::fill(row + y1 * ow, row + rb * ow, 0.0);
                for (std::int64_t y = y0; y < y1; ++y) {
                    const double* src = plane + (y * s - g.padding + ky) * g.in_w - g.padding + kx;
                    double* dst = row + y * ow;
                    std::fill(dst, dst + x0, 0.0);
                    std::fill(dst + x1, dst + ow, 0.0);
                    if (s == 1) {
                        std::copy(src + x0, src + x1, dst + x0);
                    } else {
                        for (std::int64_t x = x0; x < x1; ++x) dst[x] = src[x * s];
                    }
                }
            }
        }
    }
}

void col2im_add(const Conv2dGeometry& g, const double* col, double* img, std::int64_t ra, std::int64_t rb) {
    const std::int64_t ow = g.out_w(), k = g.kernel, s = g.stride, n = (rb - ra) * ow;
    for (std::int64_t c = 0; c < g.in_channels; ++c) {
        double* plane = img + c * g.in_h * g.in_w;
        for (std::int64_t ky = 0; ky < k; ++ky) {
            std::int64_t y0, y1;
            valid_range(g.out_h(), g.in_h, s, g.padding, ky, y0, y1);
            for (std::int64_t kx = 0; kx < k; ++kx) {
                std::int64_t x0, x1;
                valid_range(ow, g.in_w, s, g.padding, kx, x0, x1);
                y0 = std::clamp(y0, ra, rb);
                y1 = std::clamp(y1, y0, rb);
                const double* row = col + ((c * k + ky) * k + kx) * n - ra * ow;
                for (std::int64_t y = y0; y < y1; ++y) {
                    double* dst = plane + (y * s - g.padding + ky) * g.in_w - g.padding + kx;
                    const double* src = row + y * ow;
                    for (std::int64_t x = x0; x < x1; ++x) dst[x * s] += src[x];
                }
            }
        }
    }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

using Stride = Eigen::OuterStride<>;
using StridedMap = Eigen::Map<RowMat, 0, Stride>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Stride>;

// Output rows per tile, so one column tile stays near 256 KB.
std::int64_t tile_rows(const Conv2dGeometry& g) {
    const std::int64_t ckk = g.in_channels * g.kernel * g.kernel;
    return std::clamp<std::int64_t>(32768 / std::max<std::int64_t>(1, ckk * g.out_w()), 1, g.out_h());
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
    const std::int64_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::int64_t oh = g.out_h(), ow = g.out_w(), hw = oh * ow;
    const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
    const bool pointwise = is_pointwise(g);
    const std::int64_t tr = tile_rows(g);
    ConstMapMat w(weight.data(), g.out_channels, ckk);

#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(ckk * tr * ow));
#pragma omp for schedule(static)
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const double* src = input.data() + n * in_plane;
            double* dst = output.data() + n * g.out_channels * hw;
            if (pointwise) {
                MapMat(dst, g.out_channels, hw).noalias() = w * ConstMapMat(src, ckk, hw);
            } else {
                for (std::int64_t ra = 0; ra < oh; ra += tr) {
                    const std::int64_t rb = std::min(oh, ra + tr), cols = (rb - ra) * ow;
                    im2col(g, src, col.data(), ra, rb);
                    StridedMap out(dst + ra * ow, g.out_channels, cols, Stride(hw));
                    out.noalias() = w * ConstMapMat(col.data(), ckk, cols);
                }
            }
            if (!bias.empty()) {
                MapMat out(dst, g.out_channels, hw);
                for (std::int64_t o = 0; o < g.out_channels; ++o) out.row(o).array() += bias[o];
            }
        }
    }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
    const std::int64_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::int64_t oh = g.out_h(), ow = g.out_w(), hw = oh * ow;
    const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
    const bool pointwise = is_pointwise(g);
    const std::int64_t tr = tile_rows(g);
    ConstMapMat w(weight.data(), g.out_channels, ckk);

#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(ckk * tr * ow));
#pragma omp for schedule(static)
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const double* dy = grad_output.data() + n * g.out_channels * hw;
            double* dst = grad_input.data() + n * in_plane;
            if (pointwise) {
                MapMat(dst, ckk, hw).noalias() += w.transpose() * ConstMapMat(dy, g.out_channels, hw);
                continue;
            }
            for (std::int64_t ra = 0; ra < oh; ra += tr) {
                const std::int64_t rb = std::min(oh, ra + tr), cols = (rb - ra) * ow;
                MapMat c(col.data(), ckk, cols);
                c.noalias() = w.transpose() * ConstStridedMap(dy + ra * ow, g.out_channels, cols, Stride(hw));
                col2im_add(g, col.data(), dst, ra, rb);
            }
        }
    }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
    const std::int64_t ckk = g.in_channels * g.kernel * g.kernel;
    const std::int64_t oh = g.out_h(), ow = g.out_w(), hw = oh * ow;
    const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
    const std::int64_t wsize = g.out_channels * ckk;
    const bool pointwise = is_pointwise(g);
    const std::int64_t tr = tile_rows(g);

    // One partial per sample, summed in sample order below.
    std::vector<double> partial(static_cast<std::size_t>(g.batch * wsize));
    std::vector<double> partial_bias(grad_bias.empty() ? 0 : static_cast<std::size_t>(g.batch * g.out_channels));

#pragma omp parallel
    {
        std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(ckk * tr * ow));
#pragma omp for schedule(static)
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const double* src = input.data() + n * in_plane;
            const double* dyp = grad_output.data() + n * g.out_channels * hw;
            MapMat dw(partial.data() + n * wsize, g.out_channels, ckk);
            if (pointwise) {
                dw.noalias() = ConstMapMat(dyp, g.out_channels, hw) * ConstMapMat(src, ckk, hw).transpose();
            } else {
                dw.setZero();
                for (std::int64_t ra = 0; ra < oh; ra += tr) {
                    const std::int64_t rb = std::min(oh, ra + tr), cols = (rb - ra) * ow;
                    im2col(g, src, col.data(), ra, rb);
                    dw.noalias() += ConstStridedMap(dyp + ra * ow, g.out_channels, cols, Stride(hw)) *
                                    ConstMapMat(col.data(), ckk, cols).transpose();
                }
            }
            if (!grad_bias.empty()) {
                // Plain loop: Eigen's vectorised sum peels by address, so its rounding would follow the heap layout.
                for (std::int64_t o = 0; o < g.out_channels; ++o) {
                    const double* row = dyp + o * hw;
                    double acc = 0.0;
                    for (std::int64_t p = 0; p < hw; ++p) acc += row[p];
                    partial_bias[static_cast<std::size_t>(n * g.out_channels + o)] = acc;
                }
            }
        }
    }
    for (std::int64_t n = 0; n < g.batch; ++n) {
        const double* p = partial.data() + n * wsize;
        for (std::int64_t i = 0; i < wsize; ++i) grad_weight[i] += p[i];
        if (!grad_bias.empty()) {
            for (std::int64_t o = 0; o < g.out_channels; ++o)
                grad_bias[o] += partial_bias[static_cast<std::size_t>(n * g.out_channels + o)];
        }
    }
}

void linear_forward(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                    std::span<const double> w, std::span<const double> b, std::span<double> y) {
    ConstMapMat wm(w.data(), out, in);
    const std::int64_t blocks = (rows + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const std::int64_t r0 = blk * kRowBlock;
        const std::int64_t nr = std::min(kRowBlock, rows - r0);
        ConstMapMat xm(x.data() + r0 * in, nr, in);
        MapMat ym(y.data() + r0 * out, nr, out);
        ym.noalias() = xm * wm.transpose();
        if (!b.empty()) {
            for (std::int64_t r = 0; r < nr; ++r)
                for (std::int64_t o = 0; o < out; ++o) ym(r, o) += b[o];
        }
    }
}

void linear_backward_input(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> grad_y,
                           std::span<const double> w, std::span<double> grad_x) {
    ConstMapMat wm(w.data(), out, in);
    const std::int64_t blocks = (rows + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const std::int64_t r0 = blk * kRowBlock;
        const std::int64_t nr = std::min(kRowBlock, rows - r0);
        ConstMapMat dy(grad_y.data() + r0 * out, nr, out);
        MapMat dx(grad_x.data() + r0 * in, nr, in);
        dx.noalias() += dy * wm;
    }
}

void linear_backward_weight(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                            std::span<const double> grad_y, std::span<double> grad_w, std::span<double> grad_b) {
    ConstMapMat xm(x.data(), rows, in);
    ConstMapMat dy(grad_y.data(), rows, out);
    const std::int64_t blocks = (out + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const std::int64_t o0 = blk * kRowBlock;
        const std::int64_t no = std::min(kRowBlock, out - o0);
        MapMat dw(grad_w.data() + o0 * in, no, in);
        dw.noalias() += dy.middleCols(o0, no).transpose() * xm;
        if (!grad_b.empty()) {
            for (std::int64_t o = o0; o < o0 + no; ++o) {
                double s = 0.0;
                for (std::int64_t r = 0; r < rows; ++r) s += grad_y[r * out + o];
                grad_b[o] += s;
            }
        }
    }
}

void batched_matmul(std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n, std::span<const double> a,
                    bool trans_a, std::span<const double> bm, bool trans_b, std::span<double> c, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < batch; ++i) {
        const double* pa = a.data() + i * m * k;
        const double* pb = bm.data() + i * k * n;
        MapMat cm(c.data() + i * m * n, m, n);
        if (!accumulate) cm.setZero();
        if (!trans_a && !trans_b) {
            cm.noalias() += ConstMapMat(pa, m, k) * ConstMapMat(pb, k, n);
        } else if (!trans_a && trans_b) {
            cm.noalias() += ConstMapMat(pa, m, k) * ConstMapMat(pb, n, k).transpose();
        } else if (trans_a && !trans_b) {
            cm.noalias() += ConstMapMat(pa, k, m).transpose() * ConstMapMat(pb, k, n);
        } else {
            cm.noalias() += ConstMapMat(pa, k, m).transpose() * ConstMapMat(pb, n, k).transpose();
        }
    }
}

void upsample_nearest2x_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                                std::span<double> out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = in.data() + p * h * w;
        double* dst = out.data() + p * 4 * h * w;
        for (std::int64_t y = 0; y < 2 * h; ++y) {
            const double* s = src + (y / 2) * w;
            double* d = dst + y * 2 * w;
            for (std::int64_t x = 0; x < w; ++x) {
                d[2 * x] = s[x];
                d[2 * x + 1] = s[x];
            }
        }
    }
}

void upsample_nearest2x_backward(std::int64_t planes, std::int64_t h, std::int64_t w,
                                 std::span<const double> grad_out, std::span<double> grad_in) {
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* g = grad_out.data() + p * 4 * h * w;
        double* d = grad_in.data() + p * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            const double* r0 = g + (2 * y) * 2 * w;
            const double* r1 = r0 + 2 * w;
            for (std::int64_t x = 0; x < w; ++x)
                d[y * w + x] += (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
        }
    }
}

void avg_pool2x2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                         std::span<double> out) {
    const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* s = in.data() + p * h * w;
        double* d = out.data() + p * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
            const double* r0 = s + 2 * y * w;
            const double* r1 = r0 + w;
            for (std::int64_t x = 0; x < ow; ++x)
                d[y * ow + x] = 0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
        }
    }
}

void avg_pool2x2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> grad_out,
                          std::span<double> grad_in) {
    const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* g = grad_out.data() + p * oh * ow;
        double* d = grad_in.data() + p * h * w;
        for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t x = 0; x < ow; ++x) {
                const double v = 0.25 * g[y * ow + x];
                d[2 * y * w + 2 * x] += v;
                d[2 * y * w + 2 * x + 1] += v;
                d[(2 * y + 1) * w + 2 * x] += v;
                d[(2 * y + 1) * w + 2 * x + 1] += v;
            }
        }
    }
}

}  // namespace cfgan::kernels
