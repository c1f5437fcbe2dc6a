#pragma once

// Image helpers over CHW tensors with values in [0, 1]; masks are [H, W] tensors of 0/1.

#include <filesystem>
#include <string>
#include <vector>

#include "cfgan/tensor.hpp"

namespace cfgan::image {

// Throws std::runtime_error when the file cannot be decoded.
Tensor read_image(const std::filesystem::path& path, std::int64_t channels = 3);
Tensor read_mask(const std::filesystem::path& path);

void write_image(const std::filesystem::path& path, const Tensor& chw);
void write_mask(const std::filesystem::path& path, const Tensor& mask);
// [H, W] in [0, 1] written as 8-bit grayscale.
void write_gray(const std::filesystem::path& path, const Tensor& hw);

Tensor resize_bilinear(const Tensor& chw, std::int64_t height, std::int64_t width);
Tensor resize_nearest(const Tensor& hw, std::int64_t height, std::int64_t width);
// Bilinear resize of a single [H, W] plane.
Tensor resize_plane(const Tensor& hw, std::int64_t height, std::int64_t width);
Tensor gaussian_blur(const Tensor& chw, double sigma);
// Rotates hue by `shift` turns (1.0 = 360 degrees); RGB only.
Tensor shift_hue(const Tensor& chw, double shift);

// Geometric helpers, valid for [C, H, W] and [H, W].
Tensor crop(const Tensor& t, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);
Tensor flip_horizontal(const Tensor& t);
Tensor flip_vertical(const Tensor& t);
// Counter-clockwise rotation by k quarter turns.
Tensor rot90(const Tensor& t, int k);

// [H, W] plane replicated to C channels.
Tensor gray_to_chw(const Tensor& hw, std::int64_t channels);
// Horizontal strip of equally sized CHW images separated by `gap` white columns.
Tensor hstack(const std::vector<Tensor>& images, std::int64_t gap = 2);

}  // namespace cfgan::image
