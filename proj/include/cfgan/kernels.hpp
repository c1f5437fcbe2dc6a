#pragma once

// Dense compute kernels used by the autograd ops.
//
// cfgan::kernels holds the OpenMP-parallel versions (im2col + GEMM). Every
// parallel loop writes disjoint outputs, and cross-sample reductions are summed
// in sample order afterwards, so results are bit-identical for any thread count.
// cfgan::kernels::reference holds direct-loop serial versions of the same
// contracts; they exist for tests and benchmarks only.
//
// All backward kernels accumulate (+=) into their gradient outputs.

#include <cstdint>
#include <span>

namespace cfgan::kernels {

struct Conv2dGeometry {
    std::int64_t batch = 1;
    std::int64_t in_channels = 1;
    std::int64_t in_h = 1;
    std::int64_t in_w = 1;
    std::int64_t out_channels = 1;
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 1;

    std::int64_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
    std::int64_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
    std::int64_t input_size() const { return batch * in_channels * in_h * in_w; }
    std::int64_t output_size() const { return batch * out_channels * out_h() * out_w(); }
    std::int64_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// out[N,Cout,Ho,Wo] = conv(in[N,Cin,H,W], weight[Cout,Cin,k,k]) + bias[Cout]; bias may be empty.
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);

// y[rows,out] = x[rows,in] * w[out,in]^T + b[out]; b may be empty.
void linear_forward(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                    std::span<const double> w, std::span<const double> b, std::span<double> y);
void linear_backward_input(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> grad_y,
                           std::span<const double> w, std::span<double> grad_x);
void linear_backward_weight(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                            std::span<const double> grad_y, std::span<double> grad_w, std::span<double> grad_b);

// c[b] = op(a[b]) * op(bm[b]) for each batch entry; op transposes when flagged.
// a is [batch, m, k] (or [batch, k, m] when trans_a), bm is [batch, k, n] (or [batch, n, k]).
// c is overwritten unless accumulate is set.
void batched_matmul(std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n, std::span<const double> a,
                    bool trans_a, std::span<const double> bm, bool trans_b, std::span<double> c,
                    bool accumulate = false);

// Nearest-neighbour x2 upsampling and 2x2 average pooling over [planes, H, W].
void upsample_nearest2x_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                                std::span<double> out);
void upsample_nearest2x_backward(std::int64_t planes, std::int64_t h, std::int64_t w,
                                 std::span<const double> grad_out, std::span<double> grad_in);
void avg_pool2x2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                         std::span<double> out);
void avg_pool2x2_backward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> grad_out,
                          std::span<double> grad_in);

int max_threads();

namespace reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);
void linear_forward(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                    std::span<const double> w, std::span<const double> b, std::span<double> y);
void linear_backward_input(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> grad_y,
                           std::span<const double> w, std::span<double> grad_x);
void linear_backward_weight(std::int64_t rows, std::int64_t in, std::int64_t out, std::span<const double> x,
                            std::span<const double> grad_y, std::span<double> grad_w, std::span<double> grad_b);
void batched_matmul(std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n, std::span<const double> a,
                    bool trans_a, std::span<const double> bm, bool trans_b, std::span<double> c,
                    bool accumulate = false);
void upsample_nearest2x_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                                std::span<double> out);
void avg_pool2x2_forward(std::int64_t planes, std::int64_t h, std::int64_t w, std::span<const double> in,
                         std::span<double> out);

}  // namespace reference

}  // namespace cfgan::kernels
