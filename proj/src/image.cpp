#include "cfgan/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace cfgan::image {
namespace {

struct Planes {
    std::int64_t c, h, w;
};

Planes planes_of(const Tensor& t) {
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
    throw std::invalid_argument("image: expected [C, H, W] or [H, W], got " + shape_str(t.shape()));
}

Shape shape_like(const Tensor& t, std::int64_t h, std::int64_t w) {
    return t.rank() == 3 ? Shape{t.dim(0), h, w} : Shape{h, w};
}

cv::Mat to_mat(const Tensor& chw) {
    const auto [c, h, w] = planes_of(chw);
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_64FC(static_cast<int>(c)));
    for (std::int64_t y = 0; y < h; ++y) {
        auto* row = m.ptr<double>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t k = 0; k < c; ++k) row[x * c + k] = chw[(k * h + y) * w + x];
    }
    return m;
}

Tensor from_mat(const cv::Mat& src, bool planar) {
    cv::Mat m;
    src.convertTo(m, CV_64F);
    const std::int64_t c = m.channels(), h = m.rows, w = m.cols;
    Tensor t(planar ? Shape{c, h, w} : Shape{h, w});
    for (std::int64_t y = 0; y < h; ++y) {
        const auto* row = m.ptr<double>(static_cast<int>(y));
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t k = 0; k < c; ++k) t[(k * h + y) * w + x] = row[x * c + k];
    }
    return t;
}

cv::Mat to_u8(const Tensor& t) {
    cv::Mat m = to_mat(t), out;
    m.convertTo(out, CV_8U, 255.0);
    if (out.channels() == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
    return out;
}

void write_u8(const std::filesystem::path& path, const cv::Mat& m) {
    if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write image " + path.string());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path, std::int64_t channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("read_image: channels must be 1 or 3");
    cv::Mat m = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot decode image " + path.string());
    if (channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    cv::Mat f;
    m.convertTo(f, CV_64F, 1.0 / 255.0);
    return from_mat(f, true);
}

Tensor read_mask(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("cannot decode mask " + path.string());
    Tensor t = from_mat(m, false);
    for (auto& v : t.data()) v = v > 127.0 ? 1.0 : 0.0;
    return t;
}

void write_image(const std::filesystem::path& path, const Tensor& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw std::invalid_argument("write_image: expected [1|3, H, W]");
    write_u8(path, to_u8(chw));
}

void write_mask(const std::filesystem::path& path, const Tensor& mask) {
    if (mask.rank() != 2) throw std::invalid_argument("write_mask: expected [H, W]");
    write_u8(path, to_u8(mask));
}

void write_gray(const std::filesystem::path& path, const Tensor& hw) {
    if (hw.rank() != 2) throw std::invalid_argument("write_gray: expected [H, W]");
    write_u8(path, to_u8(hw));
}

Tensor resize_bilinear(const Tensor& chw, std::int64_t height, std::int64_t width) {
    if (chw.rank() != 3) throw std::invalid_argument("resize_bilinear: expected [C, H, W]");
    if (chw.dim(1) == height && chw.dim(2) == width) return chw;
    cv::Mat out;
    cv::resize(to_mat(chw), out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_LINEAR);
    return from_mat(out, true);
}

Tensor resize_plane(const Tensor& hw, std::int64_t height, std::int64_t width) {
    if (hw.rank() != 2) throw std::invalid_argument("resize_plane: expected [H, W]");
    if (hw.dim(0) == height && hw.dim(1) == width) return hw;
    cv::Mat out;
    cv::resize(to_mat(hw), out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_LINEAR);
    return from_mat(out, false);
}

Tensor resize_nearest(const Tensor& hw, std::int64_t height, std::int64_t width) {
    if (hw.rank() != 2) throw std::invalid_argument("resize_nearest: expected [H, W]");
    if (hw.dim(0) == height && hw.dim(1) == width) return hw;
    cv::Mat out;
    cv::resize(to_mat(hw), out, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_NEAREST);
    return from_mat(out, false);
}

Tensor gaussian_blur(const Tensor& chw, double sigma) {
    if (sigma <= 0.0) return chw;
    cv::Mat out;
    cv::GaussianBlur(to_mat(chw), out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT_101);
    return from_mat(out, chw.rank() == 3);
}

Tensor shift_hue(const Tensor& chw, double shift) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw std::invalid_argument("shift_hue: expected [3, H, W]");
    if (shift == 0.0) return chw;
    cv::Mat f, hsv;
    to_mat(chw).convertTo(f, CV_32F);
    cv::cvtColor(f, hsv, cv::COLOR_RGB2HSV);
    const float delta = static_cast<float>(shift * 360.0);
    for (int y = 0; y < hsv.rows; ++y) {
        auto* row = hsv.ptr<float>(y);
        for (int x = 0; x < hsv.cols; ++x) {
            float h = std::fmod(row[3 * x] + delta, 360.0f);
            row[3 * x] = h < 0.0f ? h + 360.0f : h;
        }
    }
    cv::cvtColor(hsv, f, cv::COLOR_HSV2RGB);
    Tensor out = from_mat(f, true);
    for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Tensor crop(const Tensor& t, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
    const auto [c, h, w] = planes_of(t);
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > h || left + width > w)
        throw std::invalid_argument("crop: window outside the image");
    Tensor out(shape_like(t, height, width));
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x)
                out[(k * height + y) * width + x] = t[(k * h + top + y) * w + left + x];
    return out;
}

Tensor flip_horizontal(const Tensor& t) {
    const auto [c, h, w] = planes_of(t);
    Tensor out(t.shape());
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = t[(k * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor flip_vertical(const Tensor& t) {
    const auto [c, h, w] = planes_of(t);
    Tensor out(t.shape());
    for (std::int64_t k = 0; k < c; ++k)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = t[(k * h + (h - 1 - y)) * w + x];
    return out;
}

Tensor rot90(const Tensor& t, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return t;
    const auto [c, h, w] = planes_of(t);
    // one counter-clockwise quarter turn: out[r][col] = in[col][w - 1 - r]
    Tensor out(shape_like(t, w, h));
    for (std::int64_t p = 0; p < c; ++p)
        for (std::int64_t r = 0; r < w; ++r)
            for (std::int64_t col = 0; col < h; ++col) out[(p * w + r) * h + col] = t[(p * h + col) * w + (w - 1 - r)];
    return rot90(out, k - 1);
}

Tensor gray_to_chw(const Tensor& hw, std::int64_t channels) {
    if (hw.rank() != 2) throw std::invalid_argument("gray_to_chw: expected [H, W]");
    Tensor out({channels, hw.dim(0), hw.dim(1)});
    for (std::int64_t k = 0; k < channels; ++k)
        std::copy(hw.data().begin(), hw.data().end(), out.data().begin() + k * hw.numel());
    return out;
}

Tensor hstack(const std::vector<Tensor>& images, std::int64_t gap) {
    if (images.empty()) throw std::invalid_argument("hstack: no images");
    const Shape& s = images[0].shape();
    if (s.size() != 3) throw std::invalid_argument("hstack: expected [C, H, W]");
    const std::int64_t c = s[0], h = s[1], w = s[2];
    const auto n = static_cast<std::int64_t>(images.size());
    const std::int64_t total = n * w + (n - 1) * gap;
    Tensor out({c, h, total}, 1.0);
    for (std::int64_t i = 0; i < n; ++i) {
        if (images[static_cast<std::size_t>(i)].shape() != s) throw std::invalid_argument("hstack: shape mismatch");
        const Tensor& im = images[static_cast<std::size_t>(i)];
        for (std::int64_t k = 0; k < c; ++k)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) out[(k * h + y) * total + i * (w + gap) + x] = im[(k * h + y) * w + x];
    }
    return out;
}

}  // namespace cfgan::image
