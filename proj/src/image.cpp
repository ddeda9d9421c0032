// SPDX-License-Identifier: Apache-2.0
#include "diver/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>

namespace diver {

namespace {

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.f, 1.f);
    return std::uint8_t(std::lround(c * 255.f));
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto *out = static_cast<std::vector<std::uint8_t> *>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_error_throw(png_structp, png_const_charp msg) { throw Error(std::string("libpng: ") + msg); }
void png_warning_ignore(png_structp, png_const_charp) {}

} // namespace

Image downsample(const Image &img, int factor) {
    if (factor < 1 || img.width % factor || img.height % factor)
        throw DimensionError("downsample: image size must be divisible by the factor");
    Image out(img.width / factor, img.height / factor);
    const float norm = 1.f / float(factor * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            float acc[3] = {0, 0, 0};
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) {
                    const float *p = img.at(x * factor + dx, y * factor + dy);
                    for (int c = 0; c < 3; ++c)
                        acc[c] += p[c];
                }
            float *q = out.at(x, y);
            for (int c = 0; c < 3; ++c)
                q[c] = acc[c] * norm;
        }
    return out;
}

std::vector<std::uint8_t> encode_png(const Image &img) {
    if (img.width <= 0 || img.height <= 0)
        throw DimensionError("encode_png: empty image");
    std::vector<std::uint8_t> bytes;
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> row(std::size_t(img.width) * 3);
    try {
        png_set_write_fn(png, &bytes, png_write_to_vector, png_flush_noop);
        png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < img.height; ++y) {
            const float *src = img.at(0, y);
            for (std::size_t i = 0; i < row.size(); ++i)
                row[i] = to_byte(src[i]);
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return bytes;
}

void write_png(const std::filesystem::path &path, const Image &img) {
    const auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    if (!f)
        throw Error("failed writing " + path.string());
}

Image read_png(const std::filesystem::path &path) {
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
    if (!fp)
        throw Error("cannot open " + path.string());
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, png_warning_ignore);
    png_infop info = png_create_info_struct(png);
    Image img;
    try {
        png_init_io(png, fp.get());
        png_read_info(png, info);
        png_set_strip_16(png);
        png_set_palette_to_rgb(png);
        png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
        const int w = int(png_get_image_width(png, info));
        const int h = int(png_get_image_height(png, info));
        img = Image(w, h);
        std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
        for (int y = 0; y < h; ++y) {
            png_read_row(png, row.data(), nullptr);
            float *dst = img.at(0, y);
            for (int i = 0; i < w * 3; ++i)
                dst[i] = float(row[i]) / 255.f;
        }
    } catch (const Error &e) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path.string() + ": " + e.what());
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_float_sidecar(const std::filesystem::path &path, std::span<const float> values) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    for (float v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        const char le[4] = {char(bits), char(bits >> 8), char(bits >> 16), char(bits >> 24)};
        f.write(le, 4);
    }
}

double psnr(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionError("psnr: image sizes differ");
    double se = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = double(a.rgb[i]) - double(b.rgb[i]);
        se += d * d;
    }
    const double mse = se / double(a.rgb.size());
    if (mse == 0)
        return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double psnr_masked(const Image &a, const Image &b, std::span<const std::uint8_t> mask) {
    if (a.width != b.width || a.height != b.height || mask.size() != a.pixel_count())
        throw DimensionError("psnr_masked: size mismatch");
    double se = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p])
            continue;
        for (int c = 0; c < 3; ++c) {
            const double d = double(a.rgb[p * 3 + c]) - double(b.rgb[p * 3 + c]);
            se += d * d;
        }
        n += 3;
    }
    if (n == 0 || se == 0)
        return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(se / double(n));
}

double ssim(const Image &a, const Image &b) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionError("ssim: image sizes differ");
    constexpr int kRadius = 5;
    constexpr double kSigma = 1.5, kL = 255.0;
    constexpr double C1 = (0.01 * kL) * (0.01 * kL), C2 = (0.03 * kL) * (0.03 * kL);
    double g[2 * kRadius + 1], gsum = 0;
    for (int i = -kRadius; i <= kRadius; ++i)
        gsum += g[i + kRadius] = std::exp(-(i * i) / (2 * kSigma * kSigma));
    for (double &v : g)
        v /= gsum;

    const int W = a.width, H = a.height;
    // Valid-region SSIM; images smaller than the window fall back to one global window.
    double total = 0;
    std::size_t count = 0;
    for (int c = 0; c < 3; ++c) {
        auto pa = [&](int x, int y) { return double(to_byte(a.at(x, y)[c])); };
        auto pb = [&](int x, int y) { return double(to_byte(b.at(x, y)[c])); };
        if (W < 2 * kRadius + 1 || H < 2 * kRadius + 1) {
            double ma = 0, mb = 0, n = double(W) * H;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    ma += pa(x, y);
                    mb += pb(x, y);
                }
            ma /= n;
            mb /= n;
            double va = 0, vb = 0, cov = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    va += (pa(x, y) - ma) * (pa(x, y) - ma);
                    vb += (pb(x, y) - mb) * (pb(x, y) - mb);
                    cov += (pa(x, y) - ma) * (pb(x, y) - mb);
                }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2 * ma * mb + C1) * (2 * cov + C2)) /
                     ((ma * ma + mb * mb + C1) * (va + vb + C2));
            ++count;
            continue;
        }
        for (int y = kRadius; y < H - kRadius; ++y)
            for (int x = kRadius; x < W - kRadius; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -kRadius; dy <= kRadius; ++dy)
                    for (int dx = -kRadius; dx <= kRadius; ++dx) {
                        const double w = g[dy + kRadius] * g[dx + kRadius];
                        const double va = pa(x + dx, y + dy), vb = pb(x + dx, y + dy);
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + C1) * (2 * cov + C2)) /
                         ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
                ++count;
            }
    }
    return total / double(count);
}

} // namespace diver
