// SPDX-License-Identifier: Apache-2.0
#include "diver/decoder.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace diver {
namespace {

std::vector<Real> affine(const LayerRef &l, const std::vector<Real> &x) {
    std::vector<Real> y(l.out);
    for (int o = 0; o < l.out; ++o) {
        Real s = l.bias[o];
        for (int i = 0; i < l.in; ++i)
            s += l.weight[std::size_t(o) * l.in + i] * x[i];
        y[o] = s;
    }
    return y;
}

std::vector<Real> relu(std::vector<Real> v) {
    for (auto &x : v)
        x = std::max<Real>(0, x);
    return v;
}

// Straight-line evaluation of the five-layer stack.
DecoderOutput naive_forward(const DecoderWeights &w, const std::vector<Real> &f, const Vec3 &d) {
    const auto h1 = relu(affine(w.layer(1), f));
    const auto h2 = relu(affine(w.layer(2), h1));
    const auto s3 = affine(w.layer(3), h2);
    std::vector<Real> in4 = pos_encode(d, w.shape().dir_bands);
    in4.insert(in4.end(), s3.begin() + 1, s3.end());
    const auto h4 = relu(affine(w.layer(4), in4));
    const auto c = affine(w.layer(5), h4);
    DecoderOutput o;
    o.sigma = std::log1p(std::exp(s3[0]));
    for (int i = 0; i < 3; ++i)
        o.color[i] = 1 / (1 + std::exp(-c[i]));
    return o;
}

TEST(PosEncode, LayoutAndValues) {
    const Vec3 v{0.25, -0.5, 1.0};
    const auto e = pos_encode(v, 2);
    ASSERT_EQ(e.size(), std::size_t(encoded_size(2)));
    EXPECT_EQ(e[0], 0.25);
    EXPECT_EQ(e[1], -0.5);
    EXPECT_EQ(e[2], 1.0);
    for (int l = 0; l < 2; ++l)
        for (int a = 0; a < 3; ++a) {
            const double arg = std::pow(2.0, l) * kPi * v[a];
            EXPECT_NEAR(e[3 + 6 * l + a], std::sin(arg), 1e-15);
            EXPECT_NEAR(e[3 + 6 * l + 3 + a], std::cos(arg), 1e-15);
        }
}

TEST(DecoderShape, ParameterCounts) {
    const DecoderShape s32 = DecoderShape::for_variant(DecoderVariant::Diver32, 32);
    const int F = 32, H = 32, E = encoded_size(kDecoderDirBands);
    const std::size_t expect = std::size_t(F * H + H) + (H * H + H) + ((1 + H) * H + 1 + H) +
                               ((E + H) * H + H) + (3 * H + 3);
    EXPECT_EQ(s32.parameter_count(), expect);
    EXPECT_EQ(DecoderWeights(s32).params().size(), expect);
    EXPECT_EQ(s32.variant(), DecoderVariant::Diver32);
    EXPECT_EQ(DecoderShape::for_variant(DecoderVariant::Diver64, 32).hidden, 64);
    EXPECT_THROW((DecoderShape{4, 8, kDecoderDirBands}.variant()), ValidationError);
}

TEST(Decoder, MatchesStraightLineEvaluation) {
    const DecoderShape shape{12, 16, kDecoderDirBands};
    const DecoderWeights w = init_decoder(shape, 5);
    CounterRng rng(6);
    for (int i = 0; i < 200; ++i) {
        std::vector<Real> f(shape.feature_dim);
        for (auto &x : f)
            x = 2 * rng.normal();
        const Vec3 d = test::random_direction(rng);
        const DecoderOutput a = forward(w, f, d);
        const DecoderOutput b = naive_forward(w, f, d);
        EXPECT_NEAR(a.sigma, b.sigma, 1e-12);
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(a.color[c], b.color[c], 1e-12);
        EXPECT_GE(a.sigma, 0);
    }
}

TEST(Decoder, InitIsSeededAndBounded) {
    const DecoderShape shape{8, 16, kDecoderDirBands};
    const DecoderWeights a = init_decoder(shape, 9), b = init_decoder(shape, 9), c = init_decoder(shape, 10);
    EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
    EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
    for (int l = 1; l <= 5; ++l) {
        const double bound = 1 / std::sqrt(double(a.layer_in(l)));
        const LayerRef r = a.layer(l);
        for (int i = 0; i < r.in * r.out; ++i)
            EXPECT_LE(std::abs(r.weight[i]), bound);
    }
}

TEST(Decoder, GradientsMatchCentralDifferences) {
    const DecoderShape shape{5, 8, kDecoderDirBands};
    DecoderWeights w = init_decoder(shape, 21);
    CounterRng rng(22);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<Real> f(shape.feature_dim);
        for (auto &x : f)
            x = rng.normal();
        const Vec3 d = test::random_direction(rng);
        const Real ds = rng.normal();
        const Rgb dc{rng.normal(), rng.normal(), rng.normal()};
        auto loss = [&] {
            const auto o = forward(w, f, d);
            return ds * o.sigma + dc[0] * o.color[0] + dc[1] * o.color[1] + dc[2] * o.color[2];
        };
        const auto g = backward(w, f, d, ds, dc);
        const double h = 1e-6;
        auto check = [&](Real &x, Real analytic) {
            const Real keep = x;
            x = keep + h;
            const double up = loss();
            x = keep - h;
            const double dn = loss();
            x = keep;
            const double num = (up - dn) / (2 * h);
            EXPECT_LE(std::abs(num - analytic), 1e-6 * std::max({1e-3, std::abs(num), std::abs(analytic)}));
        };
        auto p = w.params();
        for (std::size_t i = 0; i < p.size(); ++i)
            check(p[i], g.params[i]);
        for (std::size_t i = 0; i < f.size(); ++i)
            check(f[i], g.feature[i]);
    }
}

TEST(Fusion, FusedForwardMatchesPlain) {
    for (auto variant : {DecoderVariant::Diver32, DecoderVariant::Diver64}) {
        const DecoderShape shape = DecoderShape::for_variant(variant, 32);
        const DecoderWeights w = init_decoder(shape, 31);
        const FusedDecoderWeights fw = fuse(w);
        CounterRng rng(32);
        for (int i = 0; i < 1000; ++i) {
            std::vector<Real> f(shape.feature_dim);
            for (auto &x : f)
                x = 3 * rng.normal();
            const Vec3 d = test::random_direction(rng);
            const auto a = forward(w, f, d);
            const auto b = forward_fused(fw, f, d);
            ASSERT_NEAR(a.sigma, b.sigma, 1e-5);
            for (int c = 0; c < 3; ++c)
                ASSERT_NEAR(a.color[c], b.color[c], 1e-5);
        }
    }
}

TEST(Fusion, ComposedLayerIdentity) {
    const DecoderShape shape{6, 8, kDecoderDirBands};
    const DecoderWeights w = init_decoder(shape, 41);
    const FusedDecoderWeights fw = fuse(w);
    const int H = shape.hidden, E = shape.encoded_dir_dim();
    const LayerRef l3 = w.layer(3), l4 = w.layer(4);
    for (int o = 0; o < H; ++o) {
        Real b = l4.bias[o];
        for (int j = 0; j < H; ++j) {
            Real m = 0;
            for (int k = 0; k < H; ++k)
                m += l4.weight[std::size_t(o) * l4.in + E + k] * l3.weight[std::size_t(1 + k) * l3.in + j];
            EXPECT_NEAR(fw.w4_fused[std::size_t(o) * H + j], m, 1e-14);
            b += l4.weight[std::size_t(o) * l4.in + E + j] * l3.bias[1 + j];
        }
        EXPECT_NEAR(fw.b4_fused[o], b, 1e-14);
    }
}

TEST(Fusion, PremultiplyIsLinearInFeatures) {
    const DecoderShape shape{4, 8, kDecoderDirBands};
    const DecoderWeights w = init_decoder(shape, 51);
    const FusedDecoderWeights fw = fuse(w);
    const std::vector<Int3> occ{{0, 0, 0}, {1, 0, 0}};
    const FeatureGrid g = build_grid({2, 1, 1}, 4, occ, [](const Int3 &p, std::span<Real> f) {
        for (std::size_t i = 0; i < f.size(); ++i)
            f[i] = p[0] - 0.5 * p[1] + 0.25 * p[2] * double(i);
    });
    const FeatureGrid pg = premultiply_features(g, fw.w1, shape.hidden);
    EXPECT_EQ(pg.feature_dim(), shape.hidden);
    EXPECT_EQ(pg.active_vertex_count(), g.active_vertex_count());
    for (std::uint32_t s = 0; s < g.active_vertex_count(); ++s)
        for (int o = 0; o < shape.hidden; ++o) {
            Real e = 0;
            for (int i = 0; i < 4; ++i)
                e += fw.w1[std::size_t(o) * 4 + i] * g.feature(s)[i];
            EXPECT_NEAR(pg.feature(s)[o], e, 1e-14);
        }
}

TEST(Evaluators, TwoStageMatchesForward) {
    const DecoderShape shape = DecoderShape::for_variant(DecoderVariant::Diver32, 16);
    const DecoderWeights w = init_decoder(shape, 61);
    const FusedDecoderWeights fw = fuse(w);
    DecoderEvaluator plain(w);
    FusedEvaluator fused(fw);
    CounterRng rng(62);
    for (int i = 0; i < 100; ++i) {
        std::vector<Real> f(shape.feature_dim), pf(shape.hidden, 0);
        for (auto &x : f)
            x = rng.normal();
        for (int o = 0; o < shape.hidden; ++o)
            for (int k = 0; k < shape.feature_dim; ++k)
                pf[o] += fw.w1[std::size_t(o) * shape.feature_dim + k] * f[k];
        const Vec3 d = test::random_direction(rng);
        const auto ref = forward(w, f, d);
        plain.set_direction(d);
        fused.set_direction(d);
        EXPECT_NEAR(plain.density(f), ref.sigma, 1e-12);
        EXPECT_NEAR(fused.density(pf), ref.sigma, 1e-12);
        const Rgb a = plain.color(), b = fused.color();
        for (int c = 0; c < 3; ++c) {
            EXPECT_NEAR(a[c], ref.color[c], 1e-12);
            EXPECT_NEAR(b[c], ref.color[c], 1e-12);
        }
    }
}

TEST(Activations, StableAtExtremes) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_EQ(softplus(1000.0), 1000.0);
    EXPECT_GE(softplus(-1000.0), 0.0);
    EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_GE(sigmoid(-1000.0), 0.0);
}

} // namespace
} // namespace diver
