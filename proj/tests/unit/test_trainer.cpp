// SPDX-License-Identifier: Apache-2.0
#include "diver/renderer.hpp"
#include "diver/toy_scene.hpp"
#include "diver/trainer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace diver {
namespace {

const TrainSet &tiny_set() {
    static const TrainSet set = toy_train_set(2, 16, 1);
    return set;
}

Scene tiny_scene(std::uint64_t seed) {
    return make_dense_scene({4, 4, 4}, toy_transform(4), 8, DecoderVariant::Diver32, 0.1, seed);
}

TEST(Losses, KnownValues) {
    const std::vector<Real> r{0.5, 0.25}, t{0.0, 0.5};
    std::vector<Real> g(2);
    EXPECT_DOUBLE_EQ(photometric_loss(r, t, g), 0.25 + 0.0625);
    EXPECT_DOUBLE_EQ(g[0], 1.0);
    EXPECT_DOUBLE_EQ(g[1], -0.5);
    EXPECT_THROW(photometric_loss(r, std::vector<Real>(3)), DimensionError);

    const std::vector<Real> s{0.0, 1.0};
    std::vector<Real> gs(2);
    EXPECT_NEAR(sparsity_loss(s, 2.0, gs), 2.0 * std::log(3.0), 1e-15);
    EXPECT_EQ(gs[0], 0.0);
    EXPECT_NEAR(gs[1], 2.0 * 4.0 / 3.0, 1e-15);
    const std::vector<Real> neg{-0.1};
    EXPECT_THROW(sparsity_loss(neg, 1.0), ValidationError);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.batch_rays = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.learning_rate = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(TrainingForward, MatchesRendererWithoutTermination) {
    const Scene s = make_random_scene({5, 5, 5}, {6, 8, kDecoderDirBands}, 0.5, 1.0, 3);
    RenderConfig cfg;
    cfg.tau_t = 0;
    cfg.fused = false;
    CounterRng rng(4);
    for (int i = 0; i < 50; ++i) {
        const Vec3 dir = test::random_direction(rng);
        const Ray ray{Vec3{2.5, 2.5, 2.5} - dir * 10.0, dir};
        const Rgb a = training_forward(s, ray);
        const Rgb b = render_ray(s, ray, cfg).rgb;
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(a[c], b[c], 1e-12);
    }
}

// Photometric gradient checked against differences of the forward pass alone.
TEST(BackpropRay, PhotometricGradientMatchesForwardDifferences) {
    for (bool tanh_mode : {false, true}) {
        Scene s = make_random_scene({3, 3, 3}, {4, 8, kDecoderDirBands}, 0.7, 0.8, 5);
        s.tanh_features = tanh_mode;
        const Ray ray{{-2, 1.3, 1.6}, normalize(Vec3{1, 0.2, -0.1})};
        const Rgb target{0.2, 0.7, 0.4};
        auto loss = [&] {
            const Rgb c = training_forward(s, ray);
            double l = 0;
            for (int k = 0; k < 3; ++k)
                l += (c[k] - target[k]) * (c[k] - target[k]);
            return l;
        };
        const RayGradients g = backprop_ray(s, ray, target, 0.0);
        EXPECT_NEAR(g.loss, loss(), 1e-14);
        ASSERT_FALSE(g.features.empty());
        const double h = 1e-6;
        auto fd = [&](Real &x) {
            const Real keep = x;
            x = keep + h;
            const double up = loss();
            x = keep - h;
            const double dn = loss();
            x = keep;
            return (up - dn) / (2 * h);
        };
        for (const auto &[slot, grad] : g.features) {
            auto f = s.grid.feature(slot);
            for (std::size_t i = 0; i < f.size(); ++i) {
                const double n = fd(f[i]);
                EXPECT_NEAR(grad[i], n, 1e-6 * std::max({1e-3, std::abs(n), std::abs(grad[i])}));
            }
        }
        auto p = s.decoder.params();
        for (std::size_t i = 0; i < p.size(); i += 3) {
            const double n = fd(p[i]);
            EXPECT_NEAR(g.decoder[i], n, 1e-6 * std::max({1e-3, std::abs(n), std::abs(g.decoder[i])}));
        }
    }
}

TEST(BackpropRay, SparsityGradientMatchesDifferences) {
    Scene s = make_random_scene({3, 3, 3}, {4, 8, kDecoderDirBands}, 0.7, 0.8, 6);
    const Ray ray{{-2, 1.6, 1.2}, normalize(Vec3{1, -0.1, 0.15})};
    const Rgb target{0.5, 0.5, 0.5};
    const double lambda = 0.3;
    const RayGradients g = backprop_ray(s, ray, target, lambda);
    const double h = 1e-6;
    for (const auto &[slot, grad] : g.features) {
        auto f = s.grid.feature(slot);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const Real keep = f[i];
            f[i] = keep + h;
            const double up = backprop_ray(s, ray, target, lambda).loss;
            f[i] = keep - h;
            const double dn = backprop_ray(s, ray, target, lambda).loss;
            f[i] = keep;
            const double n = (up - dn) / (2 * h);
            EXPECT_NEAR(grad[i], n, 1e-6 * std::max({1e-3, std::abs(n), std::abs(grad[i])}));
        }
    }
}

TEST(ImplicitField, BackwardMatchesDifferences) {
    ImplicitInitConfig cfg;
    cfg.n_bands = 3;
    cfg.hidden = 8;
    ImplicitField field({4, 4, 4}, 3, cfg, 7);
    const Int3 v{1, 2, 3};
    const std::vector<Real> go{0.3, -1.2, 0.7};
    std::vector<Real> grad(field.parameter_count(), 0);
    field.backward(v, go, grad);
    auto p = field.params();
    std::vector<Real> out(3);
    auto loss = [&] {
        field.feature(v, out);
        return go[0] * out[0] + go[1] * out[1] + go[2] * out[2];
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Real keep = p[i];
        p[i] = keep + h;
        const double up = loss();
        p[i] = keep - h;
        const double dn = loss();
        p[i] = keep;
        const double n = (up - dn) / (2 * h);
        EXPECT_NEAR(grad[i], n, 1e-6 * std::max({1e-3, std::abs(n), std::abs(grad[i])}));
    }
}

TEST(TrainExplicit, ReducesLossAndIsDeterministic) {
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.batch_rays = 128;
    cfg.learning_rate = 3e-3;
    cfg.threads = 1;
    Scene a = tiny_scene(1), b = tiny_scene(1), c = tiny_scene(1);
    const auto ha = train_explicit(a, tiny_set(), cfg);
    ASSERT_EQ(ha.loss.size(), 100u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += ha.loss[i];
        last += ha.loss[90 + i];
    }
    EXPECT_LT(last, 0.5 * first);
    train_explicit(b, tiny_set(), cfg);
    cfg.threads = 3;
    train_explicit(c, tiny_set(), cfg);
    EXPECT_TRUE(std::equal(a.grid.pool().begin(), a.grid.pool().end(), b.grid.pool().begin()));
    EXPECT_TRUE(std::equal(a.grid.pool().begin(), a.grid.pool().end(), c.grid.pool().begin()));
    EXPECT_TRUE(std::equal(a.decoder.params().begin(), a.decoder.params().end(), c.decoder.params().begin()));
}

TEST(TrainExplicit, StochasticIntegratorAlsoLearns) {
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.batch_rays = 128;
    cfg.learning_rate = 3e-3;
    cfg.integrator = IntegratorKind::Stochastic;
    Scene s = tiny_scene(2);
    const auto h = train_explicit(s, tiny_set(), cfg);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += h.loss[i];
        last += h.loss[90 + i];
    }
    EXPECT_LT(last, 0.5 * first);
}

TEST(TrainExplicit, CallbackAndFiniteCheck) {
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_rays = 16;
    int calls = 0;
    cfg.on_step = [&](int, double l) {
        EXPECT_TRUE(std::isfinite(l));
        ++calls;
    };
    Scene s = tiny_scene(3);
    train_explicit(s, tiny_set(), cfg);
    EXPECT_EQ(calls, 3);
    Scene bad = tiny_scene(3);
    std::fill(bad.grid.pool().begin(), bad.grid.pool().end(), std::numeric_limits<double>::quiet_NaN());
    cfg.on_step = {};
    EXPECT_THROW(train_explicit(bad, tiny_set(), cfg), NumericError);
}

TEST(Pipeline, SmallRunProducesValidScene) {
    PipelineConfig pc;
    pc.fine_dims = {8, 8, 8};
    pc.transform = toy_transform(8);
    pc.feature_dim = 8;
    pc.coarse_factor = 2;
    pc.coarse_steps = 20;
    pc.fine_steps = 20;
    pc.implicit.steps = 5;
    pc.batch_rays = 64;
    const TrainSet set = toy_train_set(2, 16, 1);
    const PipelineResult r = coarse_to_fine(set, pc);
    EXPECT_NO_THROW(r.scene.validate());
    EXPECT_EQ(r.scene.grid.dims(), (GridDims{8, 8, 8}));
    EXPECT_LE(r.fine_occupied_after_cull, r.fine_occupied_before_cull);
    EXPECT_EQ(r.fine_history.loss.size(), 20u);
    EXPECT_EQ(r.coarse.grid.dims(), (GridDims{4, 4, 4}));
}

} // namespace
} // namespace diver
