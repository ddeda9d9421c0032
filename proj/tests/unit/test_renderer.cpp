// SPDX-License-Identifier: Apache-2.0
#include "diver/renderer.hpp"
#include "diver/toy_scene.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace diver {
namespace {

Ray random_ray_into(CounterRng &rng, const GridDims &d, double scale = 1.0) {
    const Vec3 target{d.nx * rng.uniform() * scale, d.ny * rng.uniform() * scale, d.nz * rng.uniform() * scale};
    const Vec3 dir = test::random_direction(rng);
    return {target - dir * (3.0 * (d.nx + d.ny + d.nz) * scale), dir};
}

struct SlabHit {
    Int3 voxel;
    double t0, t1;
};

// Every occupied voxel the ray passes through, by brute-force slab tests.
std::vector<SlabHit> brute_force_hits(const FeatureGrid &g, const Ray &ray) {
    std::vector<SlabHit> out;
    const GridDims d = g.dims();
    for (std::size_t i = 0; i < d.voxel_count(); ++i) {
        if (!g.occupancy().test(i))
            continue;
        const Int3 v = d.voxel_coord(i);
        double t0 = 0, t1 = 1e300;
        for (int a = 0; a < 3; ++a) {
            const double o = ray.origin[a], dd = ray.direction[a];
            if (std::abs(dd) < 1e-15) {
                if (o < v[a] || o > v[a] + 1)
                    t1 = -1;
                continue;
            }
            double n = (v[a] - o) / dd, f = (v[a] + 1 - o) / dd;
            if (n > f)
                std::swap(n, f);
            t0 = std::max(t0, n);
            t1 = std::min(t1, f);
        }
        if (t1 - t0 > 1e-7)
            out.push_back({v, t0, t1});
    }
    std::sort(out.begin(), out.end(), [](const SlabHit &a, const SlabHit &b) { return a.t0 < b.t0; });
    return out;
}

TEST(Camera, CenterRayIsOpticalAxis) {
    const CameraPose p = look_at({3, 0, 0}, {0, 0, 0}, {0, 0, 1}, 64, 64, 45);
    // Pixel centers straddle the principal point; average two neighbors.
    const Ray a = generate_ray(p, 31, 31), b = generate_ray(p, 32, 32);
    const Vec3 mid = normalize(a.direction + b.direction);
    EXPECT_NEAR(mid.x, -1.0, 1e-12);
    EXPECT_NEAR(std::abs(mid.y) + std::abs(mid.z), 0.0, 1e-12);
    EXPECT_NO_THROW(p.validate());
    CameraPose bad = p;
    bad.rotation(0, 0) += 0.1;
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = p;
    bad.fx = 0;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Traversal, MatchesBruteForce) {
    const GridDims d{9, 7, 8};
    const Scene s = make_random_scene(d, {4, 8, kDecoderDirBands}, 0.25, 1.0, 3);
    CounterRng rng(4);
    for (int i = 0; i < 400; ++i) {
        const Ray ray = random_ray_into(rng, d);
        const auto hits = traverse(s.grid, s.transform, ray.origin, ray.direction);
        const auto ref = brute_force_hits(s.grid, ray);
        std::vector<RayHit> big;
        for (const auto &h : hits)
            if (h.t_out - h.t_in > 1e-7)
                big.push_back(h);
        ASSERT_EQ(big.size(), ref.size()) << "ray " << i;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            EXPECT_EQ(big[k].voxel, ref[k].voxel);
            EXPECT_NEAR(big[k].t_in, ref[k].t0, 1e-9);
            EXPECT_NEAR(big[k].t_out, ref[k].t1, 1e-9);
        }
        for (std::size_t k = 1; k < hits.size(); ++k)
            EXPECT_GE(hits[k].t_in, hits[k - 1].t_out - 1e-9);
    }
}

TEST(Traversal, LocalPointsLieOnSegment) {
    const GridDims d{5, 5, 5};
    const Scene s = make_random_scene(d, {4, 8, kDecoderDirBands}, 0.6, 1.0, 5,
                                      WorldTransform{{-1, 2, 0.5}, 0.3});
    CounterRng rng(6);
    for (int i = 0; i < 200; ++i) {
        const Vec3 target = s.transform.to_world({5 * rng.uniform(), 5 * rng.uniform(), 5 * rng.uniform()});
        const Vec3 dir = test::random_direction(rng);
        const Vec3 origin = target - dir * 10.0;
        for (const auto &h : traverse(s.grid, s.transform, origin, dir)) {
            const Vec3 g0 = s.transform.to_grid(origin + dir * h.t_in);
            const Vec3 g1 = s.transform.to_grid(origin + dir * h.t_out);
            for (int a = 0; a < 3; ++a) {
                EXPECT_NEAR(h.x0[a], g0[a] - h.voxel[a], 1e-9);
                EXPECT_NEAR(h.x1[a], g1[a] - h.voxel[a], 1e-9);
            }
        }
    }
}

TEST(Traversal, AxisAlignedAndMissingRays) {
    const std::vector<Int3> occ{{0, 1, 1}, {2, 1, 1}};
    const Scene s = make_fixture_scene({3, 3, 3}, occ, {});
    const auto hits = traverse(s.grid, s.transform, {-1, 1.5, 1.5}, {1, 0, 0});
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].voxel, (Int3{0, 1, 1}));
    EXPECT_NEAR(hits[0].t_in, 1.0, 1e-12);
    EXPECT_NEAR(hits[1].t_out, 4.0, 1e-12);
    EXPECT_TRUE(traverse(s.grid, s.transform, {-1, 5, 5}, {1, 0, 0}).empty());
    EXPECT_TRUE(traverse(s.grid, s.transform, {-1, 1.5, 1.5}, {-1, 0, 0}).empty());
}

TEST(Composite, KnownValues) {
    const std::vector<Interval> iv{{std::log(2.0), {1, 0, 0}}, {std::log(4.0), {0, 1, 0}}};
    const auto r = composite(iv, 0.0, {0, 0, 1});
    EXPECT_NEAR(r.rgb[0], 0.5, 1e-15);
    EXPECT_NEAR(r.rgb[1], 0.375, 1e-15);
    EXPECT_NEAR(r.rgb[2], 0.125, 1e-15);
    EXPECT_NEAR(r.transmittance, 0.125, 1e-15);
    EXPECT_EQ(composite({}, 0.01, {0.2, 0.3, 0.4}).rgb, (Rgb{0.2, 0.3, 0.4}));
    const std::vector<Interval> neg{{-1.0, {0, 0, 0}}};
    EXPECT_THROW(composite(neg, 0.0, {1, 1, 1}), std::logic_error);
}

TEST(Composite, EarlyTerminationStopsBelowCutoff) {
    const std::vector<Interval> iv{{5.0, {1, 0, 0}}, {5.0, {0, 1, 0}}};
    // The second interval is skipped; the residual transmittance goes to the background.
    const auto r = composite(iv, 0.01, {0, 0, 1});
    EXPECT_NEAR(r.rgb[0], 1 - std::exp(-5.0), 1e-15);
    EXPECT_EQ(r.rgb[1], 0.0);
    EXPECT_NEAR(r.rgb[2], std::exp(-5.0), 1e-15);
    EXPECT_NEAR(r.transmittance, std::exp(-5.0), 1e-15);
    const auto full = composite(iv, 0.0, {0, 0, 1});
    EXPECT_GT(full.rgb[1], 0.0);
}

TEST(Render, EmptySceneIsBackground) {
    const Scene s = make_fixture_scene({4, 4, 4}, {}, {});
    const CameraPose p = look_at({8, 2, 2}, {2, 2, 2}, {0, 0, 1}, 16, 16, 40);
    RenderConfig cfg;
    cfg.white_background = false;
    cfg.background = {0.1, 0.2, 0.3};
    const auto out = render_image(s, p, cfg);
    for (std::size_t i = 0; i < out.image.pixel_count(); ++i) {
        EXPECT_FLOAT_EQ(out.image.rgb[3 * i], 0.1f);
        EXPECT_FLOAT_EQ(out.image.rgb[3 * i + 2], 0.3f);
        EXPECT_EQ(out.transmittance[i], 1.f);
    }
    EXPECT_EQ(out.stats.mlp_calls, 0u);
    EXPECT_EQ(out.stats.rays, 256u);
}

class RandomSceneRender : public ::testing::Test {
  protected:
    Scene scene = make_random_scene(toy_grid_dims(), DecoderShape::for_variant(DecoderVariant::Diver32, 16),
                                    0.3, 1.0, 17, toy_transform());
    CameraPose pose = toy_ring_poses(1, 25.0, 10.0, 32, 32)[0];
};

TEST_F(RandomSceneRender, FusedMatchesPlain) {
    RenderConfig a, b;
    a.fused = false;
    b.fused = true;
    const auto ia = render_image(scene, pose, a).image, ib = render_image(scene, pose, b).image;
    for (std::size_t i = 0; i < ia.rgb.size(); ++i)
        ASSERT_NEAR(ia.rgb[i], ib.rgb[i], 1e-5);
}

TEST_F(RandomSceneRender, ThreadCountDoesNotChangePixels) {
    RenderConfig a, b;
    a.threads = 1;
    b.threads = 3;
    const auto ra = render_image(scene, pose, a), rb = render_image(scene, pose, b);
    EXPECT_EQ(ra.image.rgb, rb.image.rgb);
    EXPECT_EQ(ra.stats.mlp_calls, rb.stats.mlp_calls);
    EXPECT_EQ(ra.stats.color_calls, rb.stats.color_calls);
}

TEST_F(RandomSceneRender, RenderRayMatchesImagePixel) {
    RenderConfig cfg;
    const auto out = render_image(scene, pose, cfg);
    for (int y = 0; y < pose.height; y += 5)
        for (int x = 0; x < pose.width; x += 3) {
            const auto r = render_ray(scene, generate_ray(pose, x, y), cfg);
            for (int c = 0; c < 3; ++c)
                EXPECT_EQ(out.image.at(x, y)[c], float(r.rgb[c]));
        }
}

TEST_F(RandomSceneRender, NoTerminationCountsEveryInterval) {
    RenderConfig cfg;
    cfg.tau_t = 0;
    const auto out = render_image(scene, pose, cfg);
    std::uint64_t intervals = 0;
    for (int y = 0; y < pose.height; ++y)
        for (int x = 0; x < pose.width; ++x) {
            const Ray r = generate_ray(pose, x, y);
            intervals += traverse(scene.grid, scene.transform, r.origin, r.direction).size();
        }
    EXPECT_EQ(out.stats.mlp_calls, intervals);
    EXPECT_EQ(out.stats.color_calls, intervals);
}

TEST_F(RandomSceneRender, ZeroCutoffEqualsFullComposite) {
    RenderConfig cfg;
    cfg.tau_t = 0;
    cfg.fused = false;
    DecoderEvaluator ev(scene.decoder);
    for (int y = 0; y < pose.height; y += 4)
        for (int x = 0; x < pose.width; x += 4) {
            const Ray ray = generate_ray(pose, x, y);
            ev.set_direction(ray.direction);
            std::vector<Interval> iv;
            std::vector<Real> f(scene.grid.feature_dim());
            for (const auto &rec : deterministic_records(scene.grid, scene.transform, ray)) {
                integrate_features(corner_features(scene.grid, rec.voxel), rec.weights, f);
                Interval i;
                i.sigma = ev.density(f);
                i.color = ev.color();
                iv.push_back(i);
            }
            const auto ref = composite(iv, 0.0, cfg.effective_background());
            const auto got = render_ray(scene, ray, cfg);
            EXPECT_EQ(got.rgb, ref.rgb);
            EXPECT_EQ(got.transmittance, ref.transmittance);
        }
}

TEST_F(RandomSceneRender, BlendedWeightsConserve) {
    const SceneRenderer r(scene, false);
    RenderConfig cfg;
    cfg.tau_t = 0;
    for (int y = 0; y < pose.height; y += 2)
        for (int x = 0; x < pose.width; x += 2) {
            const Ray ray = generate_ray(pose, x, y);
            double sum = 0;
            r.visit_blended_weights(ray, [&](const Int3 &, Real w) {
                EXPECT_GE(w, 0);
                sum += w;
            });
            EXPECT_NEAR(sum + r.render_ray(ray, cfg).transmittance, 1.0, 1e-12);
        }
}

TEST_F(RandomSceneRender, MaxBlendedAlphaBounds) {
    const std::vector<CameraPose> poses{pose};
    const auto a = record_max_blended_alpha(scene, poses, 2);
    ASSERT_EQ(a.size(), scene.grid.dims().voxel_count());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_GE(a[i], 0.f);
        EXPECT_LE(a[i], 1.f);
        if (!scene.grid.occupancy().test(i))
            EXPECT_EQ(a[i], 0.f);
    }
    EXPECT_EQ(a, record_max_blended_alpha(scene, poses, 1));
}

TEST(Render, TanhModeUsesMappedFeatures) {
    Scene s = make_random_scene({4, 4, 4}, {4, 8, kDecoderDirBands}, 0.5, 2.0, 23);
    Scene mapped = s;
    mapped.tanh_features = false;
    for (Real &v : mapped.grid.pool())
        v = std::tanh(v);
    s.tanh_features = true;
    const CameraPose p = look_at({9, 3, 2}, {2, 2, 2}, {0, 0, 1}, 16, 16, 40);
    RenderConfig cfg;
    EXPECT_EQ(render_image(s, p, cfg).image.rgb, render_image(mapped, p, cfg).image.rgb);
}

TEST(Render, RejectsBadConfig) {
    RenderConfig cfg;
    cfg.tau_t = 1.0;
    EXPECT_THROW(cfg.validate(), ValidationError);
}

} // namespace
} // namespace diver
