// SPDX-License-Identifier: Apache-2.0
#include "diver/mc_reference.hpp"
#include "diver/toy_scene.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace diver {
namespace {

TEST(Integrands, AnalyticMoments) {
    const auto f = integrand_power(2);
    EXPECT_NEAR(*f.I, 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(*f.I2, 1.0 / 5.0, 1e-15);
    EXPECT_EQ(f.f(0.5), 0.25);
    const auto c = integrand_constant(3);
    EXPECT_EQ(*c.I, 3.0);
    EXPECT_EQ(*c.I2, 9.0);
}

TEST(Densities, InverseCdfMapsUniform) {
    const auto p = density_linear();
    EXPECT_NEAR(p.inverse_cdf(0.25), 0.5, 1e-15);
    EXPECT_NEAR(p.pdf(0.5), 1.0, 1e-15);
    EXPECT_EQ(density_uniform().pdf(0.3), 1.0);
}

TEST(McUniform, Reproducible) {
    const auto f = integrand_power(1);
    EXPECT_EQ(mc_uniform(f, 64, 9, 3), mc_uniform(f, 64, 9, 3));
    EXPECT_NE(mc_uniform(f, 64, 9, 3), mc_uniform(f, 64, 9, 4));
}

TEST(McUniform, ConstantIsExact) { EXPECT_DOUBLE_EQ(mc_uniform(integrand_constant(2.5), 7, 1), 2.5); }

TEST(McReplicate, IndependentOfThreadCount) {
    const auto f = integrand_power(3);
    const auto a = mc_replicate(f, 8, 20000, 5, Estimator::Uniform, nullptr, 1);
    const auto b = mc_replicate(f, 8, 20000, 5, Estimator::Uniform, nullptr, 3);
    EXPECT_EQ(a.sample_mean, b.sample_mean);
    EXPECT_EQ(a.sample_variance, b.sample_variance);
}

TEST(VarianceLaw, LinearIntegrand) {
    const auto r = variance_law_check(integrand_power(1), 16, 100000, 1);
    EXPECT_NEAR(r.predicted_variance, 1.0 / 192.0, 1e-15);
    EXPECT_LE(std::abs(r.stats.sample_variance - r.predicted_variance) / r.predicted_variance, 0.05);
    EXPECT_LE(std::abs(r.stats.sample_mean - 0.5), r.mean_tolerance);
    EXPECT_TRUE(r.pass);
}

TEST(VarianceLaw, DoublingSamplesHalvesVariance) {
    for (int p : {1, 2}) {
        const auto f = integrand_power(p);
        const auto a = mc_replicate(f, 8, 40000, 2, Estimator::Uniform);
        const auto b = mc_replicate(f, 16, 40000, 3, Estimator::Uniform);
        EXPECT_NEAR(a.sample_variance / b.sample_variance, 2.0, 0.2) << "p=" << p;
    }
    // Importance sampling with P(t) = 2t on f(t) = t^2: C' = int t^3/2 - 1/9 = 1/8 - 1/9.
    const auto P = density_linear();
    const auto f = integrand_power(2);
    const auto a = mc_replicate(f, 8, 40000, 4, Estimator::Importance, &P);
    const auto b = mc_replicate(f, 16, 40000, 5, Estimator::Importance, &P);
    EXPECT_NEAR(a.sample_variance / b.sample_variance, 2.0, 0.2);
    EXPECT_NEAR(a.sample_variance, (1.0 / 8 - 1.0 / 9) / 8, 0.05 * (1.0 / 8 - 1.0 / 9) / 8);
}

TEST(VarianceLaw, PerfectImportanceHasZeroVariance) {
    const auto r = importance_variance_check(integrand_power(1), density_linear(), 0.25, 16, 100000, 1);
    EXPECT_EQ(r.predicted_variance, 0.0);
    EXPECT_EQ(r.stats.sample_variance, 0.0);
    EXPECT_EQ(r.stats.sample_mean, 0.5);
    EXPECT_TRUE(r.pass);
}

TEST(VarianceLaw, RequiresEnoughReplications) {
    EXPECT_THROW(variance_law_check(integrand_power(1), 16, 999, 1), ValidationError);
}

TEST(McImportance, ZeroDensityWithMassThrows) {
    ImportanceDensity bad{[](double) { return 0.0; }, [](double u) { return u; }, "zero"};
    EXPECT_THROW(mc_importance(integrand_constant(1), bad, 4, 1), NumericError);
}

TEST(StochasticRecords, OnlyOccupiedAndScaled) {
    const std::vector<Int3> occ{{1, 0, 0}};
    const Scene s = make_fixture_scene({3, 1, 1}, occ, {});
    CounterRng rng(7);
    const Ray ray{{-1, 0.5, 0.5}, {1, 0, 0}};
    const auto rec = stochastic_records(s.grid, s.transform, ray, 30, rng);
    EXPECT_EQ(rec.size(), 10u);
    for (const auto &r : rec) {
        EXPECT_EQ(r.voxel, (Int3{1, 0, 0}));
        EXPECT_NEAR(r.scale, 0.1, 1e-12);
        double sum = 0;
        for (double w : r.weights)
            sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(StochasticRecords, IntervalVariantOnePerHit) {
    const Scene s = make_random_scene({5, 5, 5}, {4, 8, kDecoderDirBands}, 0.5, 1, 8);
    CounterRng rng(9), rng2(9);
    const Ray ray{{-3, 2.2, 2.7}, normalize(Vec3{1, 0.1, -0.05})};
    const auto hits = traverse(s.grid, s.transform, ray.origin, ray.direction);
    const auto rec = stochastic_interval_records(s.grid, s.transform, ray, rng);
    ASSERT_EQ(rec.size(), hits.size());
    for (std::size_t i = 0; i < rec.size(); ++i) {
        EXPECT_EQ(rec[i].voxel, hits[i].voxel);
        EXPECT_NEAR(rec[i].scale, hits[i].t_out - hits[i].t_in, 1e-12);
    }
    const auto again = stochastic_interval_records(s.grid, s.transform, ray, rng2);
    EXPECT_EQ(again.front().weights, rec.front().weights);
}

TEST(McRender, EmptySceneIsBackground) {
    const Scene s = make_fixture_scene({2, 2, 2}, {}, {});
    const auto r = mc_render_ray(s, {{-1, 1, 1}, {1, 0, 0}}, 16, 1);
    EXPECT_EQ(r.rgb, (Rgb{1, 1, 1}));
    EXPECT_EQ(r.transmittance, 1.0);
}

TEST(McRender, ConvergesOnConstantVoxel) {
    // Axis-aligned rays cross the voxel over exactly one voxel length, where decoding the
    // integrated feature and summing pointwise densities describe the same medium.
    const std::vector<Int3> occ{{0, 0, 0}};
    const Scene s = make_fixture_scene({1, 1, 1}, occ, [](const Int3 &, std::span<Real> f) {
        f[0] = 0.3;
        f[1] = 1.0;
        f[2] = -1.0;
        f[3] = 0.5;
    });
    RenderConfig cfg;
    cfg.tau_t = 0;
    CounterRng pick(8, 0);
    for (int i = 0; i < 20; ++i) {
        const Vec3 o{-2.0, 0.05 + 0.9 * pick.uniform(), 0.05 + 0.9 * pick.uniform()};
        const Ray ray{o, {1, 0, 0}};
        const auto det = render_ray(s, ray, cfg);
        const auto mc = mc_render_ray(s, ray, 4096, 3, 0, cfg);
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(mc.rgb[c], det.rgb[c], 0.01 * det.rgb[c]);
    }
}

TEST(McRender, ObliqueChordsDifferFromIntegratedDecoding) {
    // The closed-form path decodes the normalized feature integral, so its interval
    // density does not scale with the chord length; the sampled path does.
    const std::vector<Int3> occ{{0, 0, 0}};
    const Scene s = make_fixture_scene({1, 1, 1}, occ, [](const Int3 &, std::span<Real> f) {
        f[0] = 0.3;
        f[1] = 1.0;
        f[2] = -1.0;
        f[3] = 0.5;
    });
    RenderConfig cfg;
    cfg.tau_t = 0;
    const Ray ray{{-1, -1, 0.5}, normalize(Vec3{1, 1, 0})};
    const auto det = render_ray(s, ray, cfg);
    const auto mc = mc_render_ray(s, ray, 4096, 3, 0, cfg);
    const double L = std::sqrt(2.0);
    const double sigma_mc = std::log1p(std::exp(0.3)) * L;
    EXPECT_NEAR(mc.transmittance, std::exp(-sigma_mc), 1e-9);
    EXPECT_NEAR(det.transmittance, std::exp(-std::log1p(std::exp(0.3))), 1e-9);
}

TEST(McRender, SeedReproducible) {
    const Scene s = make_random_scene({4, 4, 4}, {4, 8, kDecoderDirBands}, 0.5, 1, 10);
    const CameraPose p = look_at({9, 3, 2}, {2, 2, 2}, {0, 0, 1}, 8, 8, 40);
    RenderConfig one, three;
    one.threads = 1;
    three.threads = 3;
    EXPECT_EQ(mc_render_image(s, p, 32, 5, one).image.rgb, mc_render_image(s, p, 32, 5, three).image.rgb);
    EXPECT_NE(mc_render_image(s, p, 32, 5, one).image.rgb, mc_render_image(s, p, 32, 6, one).image.rgb);
    EXPECT_THROW(mc_render_ray(s, {{0, 0, 0}, {1, 0, 0}}, 1, 0), ValidationError);
}

} // namespace
} // namespace diver
