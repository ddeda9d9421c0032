// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/common.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace diver {

/// Linear RGB float image, row-major, 3 floats per pixel.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(int w, int h, float fill = 0.f) : width(w), height(h), rgb(std::size_t(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return std::size_t(width) * height; }
    float *at(int x, int y) { return rgb.data() + (std::size_t(y) * width + x) * 3; }
    const float *at(int x, int y) const { return rgb.data() + (std::size_t(y) * width + x) * 3; }
};

/// Box-filter downsampling by an integer factor (dimensions must divide).
Image downsample(const Image &img, int factor);

/// 8-bit RGB PNG encoding; values are clamped to [0,1] and rounded.
std::vector<std::uint8_t> encode_png(const Image &img);
void write_png(const std::filesystem::path &path, const Image &img);
Image read_png(const std::filesystem::path &path);

/// Raw little-endian float32 dump (width*height values), used for transmittance.
void write_float_sidecar(const std::filesystem::path &path, std::span<const float> values);

/// PSNR in dB on [0,1] float images; +inf for identical images.
double psnr(const Image &a, const Image &b);
/// PSNR restricted to pixels where mask != 0.
double psnr_masked(const Image &a, const Image &b, std::span<const std::uint8_t> mask);

/// SSIM on 8-bit quantized images: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// averaged over channels.
double ssim(const Image &a, const Image &b);

} // namespace diver
