// SPDX-License-Identifier: Apache-2.0
#include "diver/decoder.hpp"

#include "diver/random.hpp"

#include <algorithm>
#include <string>

namespace diver {

namespace {

// y = W x + b for a row-major W (out x in).
inline void affine(const Real *w, const Real *b, const Real *x, Real *y, int in, int out) {
    for (int r = 0; r < out; ++r) {
        const Real *row = w + std::size_t(r) * in;
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (int c = 0; c < in; ++c)
            acc += row[c] * x[c];
        y[r] = acc + (b ? b[r] : Real(0));
    }
}

inline void affine(const LayerRef &l, const Real *x, Real *y) {
    affine(l.weight, l.bias, x, y, l.in, l.out);
}

inline void relu_into(const Real *e, Real *h, int n) {
    for (int i = 0; i < n; ++i)
        h[i] = e[i] > 0 ? e[i] : Real(0);
}

// dx += W^T dy ; dW += dy x^T ; db += dy
inline void affine_backward(const Real *w, const Real *x, const Real *dy, Real *dx, Real *dw,
                            Real *db, int in, int out) {
    for (int r = 0; r < out; ++r) {
        const Real g = dy[r];
        if (g == 0)
            continue;
        const Real *row = w + std::size_t(r) * in;
        Real *drow = dw + std::size_t(r) * in;
        if (dx)
            for (int c = 0; c < in; ++c)
                dx[c] += row[c] * g;
        for (int c = 0; c < in; ++c)
            drow[c] += g * x[c];
        db[r] += g;
    }
}

} // namespace

Real softplus(Real x) { return x > 30 ? x : std::log1p(std::exp(x)); }

Real sigmoid(Real x) {
    if (x >= 0)
        return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

void pos_encode(const Vec3 &v, int n_bands, std::span<Real> out) {
    if (n_bands < 0 || out.size() != std::size_t(encoded_size(n_bands)))
        throw DimensionError("pos_encode: output span has wrong length");
    out[0] = v.x;
    out[1] = v.y;
    out[2] = v.z;
    double freq = kPi;
    for (int l = 0; l < n_bands; ++l) {
        Real *band = out.data() + 3 + 6 * l;
        for (int j = 0; j < 3; ++j) {
            band[j] = std::sin(freq * v[j]);
            band[3 + j] = std::cos(freq * v[j]);
        }
        freq *= 2.0;
    }
}

std::vector<Real> pos_encode(const Vec3 &v, int n_bands) {
    std::vector<Real> out(encoded_size(n_bands));
    pos_encode(v, n_bands, out);
    return out;
}

std::size_t DecoderShape::parameter_count() const {
    const std::size_t F = feature_dim, H = hidden, E = encoded_dir_dim();
    return (F * H + H) + (H * H + H) + (H * (H + 1) + H + 1) + ((E + H) * H + H) + (H * 3 + 3);
}

DecoderShape DecoderShape::for_variant(DecoderVariant variant, int feature_dim) {
    switch (variant) {
    case DecoderVariant::Diver32:
        return {feature_dim, 32, kDecoderDirBands};
    case DecoderVariant::Diver64:
        return {feature_dim, 64, kDecoderDirBands};
    }
    throw ValidationError("unknown decoder variant");
}

DecoderVariant DecoderShape::variant() const {
    if (hidden == 32 && dir_bands == kDecoderDirBands)
        return DecoderVariant::Diver32;
    if (hidden == 64 && dir_bands == kDecoderDirBands)
        return DecoderVariant::Diver64;
    throw ValidationError("decoder shape with hidden width " + std::to_string(hidden) +
                          " has no serializable variant");
}

int DecoderWeights::layer_in(int l) const {
    const int F = shape_.feature_dim, H = shape_.hidden, E = shape_.encoded_dir_dim();
    switch (l) {
    case 1: return F;
    case 2: return H;
    case 3: return H;
    case 4: return E + H;
    case 5: return H;
    }
    throw std::logic_error("decoder layer index must be 1..5");
}

int DecoderWeights::layer_out(int l) const {
    const int H = shape_.hidden;
    switch (l) {
    case 1: return H;
    case 2: return H;
    case 3: return H + 1;
    case 4: return H;
    case 5: return 3;
    }
    throw std::logic_error("decoder layer index must be 1..5");
}

DecoderWeights::DecoderWeights(DecoderShape shape) : shape_(shape) {
    if (shape.feature_dim < 1 || shape.hidden < 1 || shape.dir_bands < 0)
        throw ValidationError("invalid decoder shape");
    std::size_t off = 0;
    for (int l = 1; l <= 5; ++l) {
        offsets_[2 * (l - 1)] = off;
        off += std::size_t(layer_in(l)) * layer_out(l);
        offsets_[2 * (l - 1) + 1] = off;
        off += layer_out(l);
    }
    params_.assign(off, Real(0));
}

LayerRef DecoderWeights::layer(int l) const {
    return {params_.data() + weight_offset(l), params_.data() + bias_offset(l), layer_in(l),
            layer_out(l)};
}

DecoderWeights init_decoder(DecoderShape shape, std::uint64_t seed) {
    DecoderWeights w(shape);
    CounterRng rng(seed, 0xDEC0DE);
    auto p = w.params();
    for (int l = 1; l <= 5; ++l) {
        const Real bound = Real(1) / std::sqrt(Real(w.layer_in(l)));
        const std::size_t begin = w.weight_offset(l);
        const std::size_t end = w.bias_offset(l) + w.layer_out(l);
        for (std::size_t i = begin; i < end; ++i)
            p[i] = bound * (2 * rng.uniform() - 1);
    }
    return w;
}

DecoderOutput forward(const DecoderWeights &w, std::span<const Real> feature, const Vec3 &dir) {
    const auto enc = pos_encode(dir, w.shape().dir_bands);
    return forward(w, feature, enc, nullptr);
}

DecoderOutput forward(const DecoderWeights &w, std::span<const Real> feature,
                      std::span<const Real> encoded_dir, DecoderTape *tape) {
    const int F = w.shape().feature_dim, H = w.shape().hidden, E = w.shape().encoded_dir_dim();
    if (feature.size() != std::size_t(F))
        throw DimensionError("decoder forward: feature has " + std::to_string(feature.size()) +
                             " entries, expected " + std::to_string(F));
    if (encoded_dir.size() != std::size_t(E))
        throw DimensionError("decoder forward: encoded direction has wrong length");

    DecoderTape local;
    DecoderTape &t = tape ? *tape : local;
    t.feature.assign(feature.begin(), feature.end());
    t.encoded_dir.assign(encoded_dir.begin(), encoded_dir.end());
    t.e1.resize(H);
    t.e2.resize(H);
    t.s3.resize(H + 1);
    t.e4.resize(H);
    std::vector<Real> h(H), in4(E + H);

    affine(w.layer(1), feature.data(), t.e1.data());
    relu_into(t.e1.data(), h.data(), H);
    affine(w.layer(2), h.data(), t.e2.data());
    relu_into(t.e2.data(), h.data(), H);
    affine(w.layer(3), h.data(), t.s3.data());
    std::copy(encoded_dir.begin(), encoded_dir.end(), in4.begin());
    std::copy(t.s3.begin() + 1, t.s3.end(), in4.begin() + E);
    affine(w.layer(4), in4.data(), t.e4.data());
    relu_into(t.e4.data(), h.data(), H);
    Real logits[3];
    affine(w.layer(5), h.data(), logits);

    t.sigma_logit = t.s3[0];
    t.out.sigma = softplus(t.s3[0]);
    for (int c = 0; c < 3; ++c) {
        t.color_logit[c] = logits[c];
        t.out.color[c] = sigmoid(logits[c]);
    }
    return t.out;
}

void backward(const DecoderWeights &w, const DecoderTape &t, Real d_sigma, const Rgb &d_color,
              std::span<Real> grad_params, std::span<Real> grad_feature) {
    const int F = w.shape().feature_dim, H = w.shape().hidden, E = w.shape().encoded_dir_dim();
    if (grad_params.size() != w.params().size() || grad_feature.size() != std::size_t(F))
        throw DimensionError("decoder backward: gradient buffers have wrong size");
    Real *g = grad_params.data();

    // Rebuild the post-activation inputs of each layer.
    std::vector<Real> h1(H), h2(H), h4(H), in4(E + H);
    relu_into(t.e1.data(), h1.data(), H);
    relu_into(t.e2.data(), h2.data(), H);
    relu_into(t.e4.data(), h4.data(), H);
    std::copy(t.encoded_dir.begin(), t.encoded_dir.end(), in4.begin());
    std::copy(t.s3.begin() + 1, t.s3.end(), in4.begin() + E);

    Real d_logit[3];
    for (int c = 0; c < 3; ++c) {
        const Real s = t.out.color[c];
        d_logit[c] = d_color[c] * s * (1 - s);
    }
    std::vector<Real> dh4(H, 0), de4(H), din4(E + H, 0), ds3(H + 1, 0), dh2(H, 0), de2(H),
        dh1(H, 0), de1(H);

    auto L5 = w.layer(5);
    affine_backward(L5.weight, h4.data(), d_logit, dh4.data(), g + w.weight_offset(5),
                    g + w.bias_offset(5), H, 3);
    for (int i = 0; i < H; ++i)
        de4[i] = t.e4[i] > 0 ? dh4[i] : Real(0);
    auto L4 = w.layer(4);
    affine_backward(L4.weight, in4.data(), de4.data(), din4.data(), g + w.weight_offset(4),
                    g + w.bias_offset(4), E + H, H);
    ds3[0] = d_sigma * sigmoid(t.sigma_logit);
    std::copy(din4.begin() + E, din4.end(), ds3.begin() + 1);
    auto L3 = w.layer(3);
    affine_backward(L3.weight, h2.data(), ds3.data(), dh2.data(), g + w.weight_offset(3),
                    g + w.bias_offset(3), H, H + 1);
    for (int i = 0; i < H; ++i)
        de2[i] = t.e2[i] > 0 ? dh2[i] : Real(0);
    auto L2 = w.layer(2);
    affine_backward(L2.weight, h1.data(), de2.data(), dh1.data(), g + w.weight_offset(2),
                    g + w.bias_offset(2), H, H);
    for (int i = 0; i < H; ++i)
        de1[i] = t.e1[i] > 0 ? dh1[i] : Real(0);
    auto L1 = w.layer(1);
    std::fill(grad_feature.begin(), grad_feature.end(), Real(0));
    affine_backward(L1.weight, t.feature.data(), de1.data(), grad_feature.data(),
                    g + w.weight_offset(1), g + w.bias_offset(1), F, H);
}

DecoderGradients backward(const DecoderWeights &w, std::span<const Real> feature, const Vec3 &dir,
                          Real d_sigma, const Rgb &d_color) {
    DecoderTape tape;
    const auto enc = pos_encode(dir, w.shape().dir_bands);
    forward(w, feature, enc, &tape);
    DecoderGradients grads{std::vector<Real>(w.params().size(), 0),
                           std::vector<Real>(w.shape().feature_dim, 0)};
    backward(w, tape, d_sigma, d_color, grads.params, grads.feature);
    return grads;
}

FusedDecoderWeights fuse(const DecoderWeights &w) {
    const int F = w.shape().feature_dim, H = w.shape().hidden, E = w.shape().encoded_dir_dim();
    FusedDecoderWeights fw;
    fw.shape = w.shape();
    const auto L1 = w.layer(1), L2 = w.layer(2), L3 = w.layer(3), L4 = w.layer(4),
               L5 = w.layer(5);
    fw.w1.assign(L1.weight, L1.weight + std::size_t(H) * F);
    fw.b1.assign(L1.bias, L1.bias + H);
    fw.w2.assign(L2.weight, L2.weight + std::size_t(H) * H);
    fw.b2.assign(L2.bias, L2.bias + H);
    fw.w3_sigma.assign(L3.weight, L3.weight + H);
    fw.b3_sigma = L3.bias[0];

    // L4 columns: [gamma(d) | h3]. W4' = W4^h W3^h, b4' = W4^h b3^h + b4.
    const int in4 = E + H;
    fw.w4_dir.resize(std::size_t(H) * E);
    fw.w4_fused.assign(std::size_t(H) * H, Real(0));
    fw.b4_fused.resize(H);
    const Real *w3h = L3.weight + H; // rows 1..H of L3
    const Real *b3h = L3.bias + 1;
    for (int r = 0; r < H; ++r) {
        const Real *row4 = L4.weight + std::size_t(r) * in4;
        std::copy(row4, row4 + E, fw.w4_dir.begin() + std::size_t(r) * E);
        const Real *w4h = row4 + E;
        Real bias = L4.bias[r];
        for (int j = 0; j < H; ++j) {
            const Real a = w4h[j];
            bias += a * b3h[j];
            const Real *w3row = w3h + std::size_t(j) * H;
            Real *dst = fw.w4_fused.data() + std::size_t(r) * H;
            for (int c = 0; c < H; ++c)
                dst[c] += a * w3row[c];
        }
        fw.b4_fused[r] = bias;
    }
    fw.w5.assign(L5.weight, L5.weight + std::size_t(3) * H);
    fw.b5.assign(L5.bias, L5.bias + 3);
    return fw;
}

DecoderOutput forward_fused(const FusedDecoderWeights &fw, std::span<const Real> feature,
                            const Vec3 &dir) {
    const int F = fw.shape.feature_dim, H = fw.shape.hidden;
    if (feature.size() != std::size_t(F))
        throw DimensionError("forward_fused: feature has wrong length");
    std::vector<Real> pre(H);
    affine(fw.w1.data(), nullptr, feature.data(), pre.data(), F, H);
    FusedEvaluator eval(fw);
    eval.set_direction(dir);
    DecoderOutput out;
    out.sigma = eval.density(pre);
    out.color = eval.color();
    return out;
}

FeatureGrid premultiply_features(const FeatureGrid &grid, std::span<const Real> w1, int out_dim) {
    const int F = grid.feature_dim();
    if (w1.size() != std::size_t(out_dim) * F)
        throw DimensionError("premultiply_features: W1 is not " + std::to_string(out_dim) + "x" +
                             std::to_string(F));
    const std::size_t n = grid.active_vertex_count();
    std::vector<Real> pool(n * out_dim);
    for (std::size_t s = 0; s < n; ++s)
        affine(w1.data(), nullptr, grid.feature(std::uint32_t(s)).data(), pool.data() + s * out_dim,
               F, out_dim);
    FeatureGrid out = grid;
    out.replace_pool(out_dim, std::move(pool));
    return out;
}

DecoderEvaluator::DecoderEvaluator(const DecoderWeights &w)
    : w_(&w), enc_(w.shape().encoded_dir_dim()), h1_(w.shape().hidden), h2_(w.shape().hidden),
      s3_(w.shape().hidden + 1), in4_(w.shape().encoded_dir_dim() + w.shape().hidden),
      h4_(w.shape().hidden) {}

void DecoderEvaluator::set_direction(const Vec3 &dir) { pos_encode(dir, w_->shape().dir_bands, enc_); }

Real DecoderEvaluator::density(std::span<const Real> feature) {
    const int H = w_->shape().hidden;
    if (feature.size() != std::size_t(w_->shape().feature_dim))
        throw DimensionError("decoder density: feature has wrong length");
    affine(w_->layer(1), feature.data(), h1_.data());
    relu_into(h1_.data(), h1_.data(), H);
    affine(w_->layer(2), h1_.data(), h2_.data());
    relu_into(h2_.data(), h2_.data(), H);
    affine(w_->layer(3), h2_.data(), s3_.data());
    return softplus(s3_[0]);
}

Rgb DecoderEvaluator::color() {
    const int H = w_->shape().hidden, E = w_->shape().encoded_dir_dim();
    std::copy(enc_.begin(), enc_.end(), in4_.begin());
    std::copy(s3_.begin() + 1, s3_.end(), in4_.begin() + E);
    affine(w_->layer(4), in4_.data(), h4_.data());
    relu_into(h4_.data(), h4_.data(), H);
    Real logits[3];
    affine(w_->layer(5), h4_.data(), logits);
    return {sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])};
}

FusedEvaluator::FusedEvaluator(const FusedDecoderWeights &fw)
    : fw_(&fw), enc_(fw.shape.encoded_dir_dim()), dir_term_(fw.shape.hidden),
      h1_(fw.shape.hidden), h2_(fw.shape.hidden), h4_(fw.shape.hidden) {}

void FusedEvaluator::set_direction(const Vec3 &dir) {
    pos_encode(dir, fw_->shape.dir_bands, enc_);
    affine(fw_->w4_dir.data(), fw_->b4_fused.data(), enc_.data(), dir_term_.data(),
           fw_->shape.encoded_dir_dim(), fw_->shape.hidden);
}

Real FusedEvaluator::density(std::span<const Real> pre) {
    const int H = fw_->shape.hidden;
    if (pre.size() != std::size_t(H))
        throw DimensionError("fused density: premultiplied feature has wrong length");
    for (int i = 0; i < H; ++i) {
        const Real e = pre[i] + fw_->b1[i];
        h1_[i] = e > 0 ? e : Real(0);
    }
    affine(fw_->w2.data(), fw_->b2.data(), h1_.data(), h2_.data(), H, H);
    relu_into(h2_.data(), h2_.data(), H);
    Real s = fw_->b3_sigma;
    for (int i = 0; i < H; ++i)
        s += fw_->w3_sigma[i] * h2_[i];
    return softplus(s);
}

Rgb FusedEvaluator::color() {
    const int H = fw_->shape.hidden;
    affine(fw_->w4_fused.data(), nullptr, h2_.data(), h4_.data(), H, H);
    for (int i = 0; i < H; ++i) {
        const Real e = h4_[i] + dir_term_[i];
        h4_[i] = e > 0 ? e : Real(0);
    }
    Real logits[3];
    affine(fw_->w5.data(), fw_->b5.data(), h4_.data(), logits, H, 3);
    return {sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])};
}

} // namespace diver
