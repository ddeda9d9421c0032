// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/common.hpp"
#include "diver/grid.hpp"

#include <span>
#include <vector>

namespace diver {

/// Decoder sizes. 32 and 64 refer to the hidden width.
enum class DecoderVariant : std::uint8_t { Diver32 = 0, Diver64 = 1 };

/// Positional-encoding bands applied to the view direction.
inline constexpr int kDecoderDirBands = 4;

/// Length of pos_encode(v, n_bands) for a 3-vector.
constexpr int encoded_size(int n_bands) { return 3 * (1 + 2 * n_bands); }

/// (v, sin(2^l pi v), cos(2^l pi v) for l = 0..n_bands-1); per band the three sines
/// precede the three cosines.
void pos_encode(const Vec3 &v, int n_bands, std::span<Real> out);
std::vector<Real> pos_encode(const Vec3 &v, int n_bands);

struct DecoderShape {
    int feature_dim = 32;
    int hidden = 32;
    int dir_bands = kDecoderDirBands;

    constexpr bool operator==(const DecoderShape &) const = default;
    int encoded_dir_dim() const { return encoded_size(dir_bands); }
    std::size_t parameter_count() const;
    static DecoderShape for_variant(DecoderVariant variant, int feature_dim);
    DecoderVariant variant() const;
};

/// Read-only view of one affine layer: weight is row-major out x in.
struct LayerRef {
    const Real *weight;
    const Real *bias;
    int in;
    int out;
};

/// Five affine layers stored back to back in one parameter vector:
///   L1: F -> H (ReLU)          L2: H -> H (ReLU)
///   L3: H -> 1+H  (row 0 is the density logit, rows 1..H are h3, no activation)
///   L4: [gamma(d), h3] -> H (ReLU)
///   L5: H -> 3 (sigmoid)
/// Density is softplus of the L3 row 0 output.
class DecoderWeights {
  public:
    DecoderWeights() = default;
    explicit DecoderWeights(DecoderShape shape);

    const DecoderShape &shape() const { return shape_; }
    std::span<const Real> params() const { return params_; }
    std::span<Real> params() { return params_; }

    /// Layer l in 1..5.
    LayerRef layer(int l) const;
    std::size_t weight_offset(int l) const { return offsets_[2 * (l - 1)]; }
    std::size_t bias_offset(int l) const { return offsets_[2 * (l - 1) + 1]; }
    int layer_in(int l) const;
    int layer_out(int l) const;

  private:
    DecoderShape shape_{};
    std::vector<Real> params_;
    std::array<std::size_t, 10> offsets_{};
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from a seeded stream.
DecoderWeights init_decoder(DecoderShape shape, std::uint64_t seed);

struct DecoderOutput {
    Real sigma = 0;
    Rgb color{};
};

/// Intermediate activations kept for the backward pass.
struct DecoderTape {
    std::vector<Real> feature, encoded_dir, e1, e2, s3, e4;
    Real sigma_logit = 0;
    Rgb color_logit{};
    DecoderOutput out;
};

DecoderOutput forward(const DecoderWeights &w, std::span<const Real> feature, const Vec3 &dir);
DecoderOutput forward(const DecoderWeights &w, std::span<const Real> feature,
                      std::span<const Real> encoded_dir, DecoderTape *tape = nullptr);

/// Accumulates d(loss)/d(params) into grad_params and writes d(loss)/d(feature) into
/// grad_feature, given upstream gradients on sigma and color.
void backward(const DecoderWeights &w, const DecoderTape &tape, Real d_sigma, const Rgb &d_color,
              std::span<Real> grad_params, std::span<Real> grad_feature);

struct DecoderGradients {
    std::vector<Real> params;
    std::vector<Real> feature;
};

DecoderGradients backward(const DecoderWeights &w, std::span<const Real> feature, const Vec3 &dir,
                          Real d_sigma, const Rgb &d_color);

/// Inference form: W1 moves into the feature pool, the h3 half of L3 composes with L4.
struct FusedDecoderWeights {
    DecoderShape shape;
    std::vector<Real> w1;       // H x F, for premultiply_features
    std::vector<Real> b1;       // H
    std::vector<Real> w2, b2;   // H x H, H
    std::vector<Real> w3_sigma; // H
    Real b3_sigma = 0;
    std::vector<Real> w4_dir;   // H x E
    std::vector<Real> w4_fused; // H x H  (W4^h W3^h)
    std::vector<Real> b4_fused; // H      (W4^h b3^h + b4)
    std::vector<Real> w5, b5;   // 3 x H, 3
};

FusedDecoderWeights fuse(const DecoderWeights &w);

/// Full fused forward on a raw feature (applies W1 itself).
DecoderOutput forward_fused(const FusedDecoderWeights &fw, std::span<const Real> feature,
                            const Vec3 &dir);

/// Replaces every pool feature f by W1 f; the result has feature width H.
FeatureGrid premultiply_features(const FeatureGrid &grid, std::span<const Real> w1, int out_dim);

/// Two-stage plain decoder evaluation for the renderer: density first, color on demand.
class DecoderEvaluator {
  public:
    explicit DecoderEvaluator(const DecoderWeights &w);
    void set_direction(const Vec3 &dir);
    Real density(std::span<const Real> feature);
    Rgb color();

  private:
    const DecoderWeights *w_;
    std::vector<Real> enc_, h1_, h2_, s3_, in4_, h4_;
};

/// Two-stage fused evaluation. density() takes sum_k X_k W1 f_k (bias not yet added).
class FusedEvaluator {
  public:
    explicit FusedEvaluator(const FusedDecoderWeights &fw);
    void set_direction(const Vec3 &dir);
    Real density(std::span<const Real> premultiplied_feature);
    Rgb color();

  private:
    const FusedDecoderWeights *fw_;
    std::vector<Real> enc_, dir_term_, h1_, h2_, h4_;
};

Real softplus(Real x);
Real sigmoid(Real x);

} // namespace diver
