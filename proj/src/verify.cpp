// SPDX-License-Identifier: Apache-2.0
#include "diver/verify.hpp"

#include "diver/decoder.hpp"
#include "diver/integrator.hpp"
#include "diver/mc_reference.hpp"
#include "diver/random.hpp"
#include "diver/renderer.hpp"
#include "diver/toy_scene.hpp"
#include "diver/trainer.hpp"

#include <chrono>
#include <cmath>

namespace diver {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double millis_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Vec3 random_point(CounterRng &rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

Vec3 random_unit(CounterRng &rng) {
    for (;;) {
        const Vec3 v{2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
        const double l = length(v);
        if (l > 0.1 && l <= 1)
            return v / l;
    }
}

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), verify_tol::kGradientFloor});
}

struct GradTally {
    double max_rel = 0;
    std::size_t checked = 0;

    void add(double a, double n) {
        max_rel = std::max(max_rel, rel_error(a, n));
        ++checked;
    }
    bool pass() const { return checked > 0 && max_rel <= verify_tol::kGradientRel; }
    json to_json() const { return {{"checked", checked}, {"max_rel_error", max_rel}, {"pass", pass()}}; }
};

template <class Fn> double central_difference(Real &x, Fn &&loss) {
    const Real keep = x;
    const double h = verify_tol::kGradientStep;
    x = keep + h;
    const double up = loss();
    x = keep - h;
    const double down = loss();
    x = keep;
    return (up - down) / (2 * h);
}

GradTally check_losses(CounterRng &rng) {
    GradTally t;
    std::vector<Real> r(12), y(12), g(12);
    for (auto &v : r)
        v = rng.uniform();
    for (auto &v : y)
        v = rng.uniform();
    photometric_loss(r, y, g);
    for (std::size_t i = 0; i < r.size(); ++i)
        t.add(g[i], central_difference(r[i], [&] { return photometric_loss(r, y); }));

    std::vector<Real> s(10), gs(10);
    for (auto &v : s)
        v = 3 * rng.uniform();
    const double lambda = 0.7;
    sparsity_loss(s, lambda, gs);
    for (std::size_t i = 0; i < s.size(); ++i)
        t.add(gs[i], central_difference(s[i], [&] { return sparsity_loss(s, lambda); }));
    return t;
}

GradTally check_decoder(CounterRng &rng, std::uint64_t seed) {
    GradTally t;
    const DecoderShape shape{6, 8, kDecoderDirBands};
    DecoderWeights w = init_decoder(shape, seed);
    std::vector<Real> f(shape.feature_dim);
    for (auto &v : f)
        v = rng.normal();
    const Vec3 dir = random_unit(rng);
    const Real ds = rng.normal();
    const Rgb dc{rng.normal(), rng.normal(), rng.normal()};
    auto loss = [&] {
        const DecoderOutput o = forward(w, f, dir);
        return ds * o.sigma + dc[0] * o.color[0] + dc[1] * o.color[1] + dc[2] * o.color[2];
    };
    const DecoderGradients g = backward(w, f, dir, ds, dc);
    auto p = w.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        t.add(g.params[i], central_difference(p[i], loss));
    for (std::size_t i = 0; i < f.size(); ++i)
        t.add(g.feature[i], central_difference(f[i], loss));
    return t;
}

Ray ray_into_box(CounterRng &rng, const GridDims &dims) {
    const Vec3 target{dims.nx * rng.uniform(), dims.ny * rng.uniform(), dims.nz * rng.uniform()};
    const Vec3 dir = random_unit(rng);
    return {target - dir * (2.0 * (dims.nx + dims.ny + dims.nz)), dir};
}

GradTally check_ray(CounterRng &rng, std::uint64_t seed, bool tanh_features) {
    GradTally t;
    const GridDims dims{3, 3, 3};
    Scene scene = make_random_scene(dims, DecoderShape{4, 8, kDecoderDirBands}, 0.6, 0.7, seed);
    scene.tanh_features = tanh_features;
    const double lambda = 0.05;
    const Rgb bg{1, 1, 1};
    for (int attempt = 0; attempt < 64; ++attempt) {
        const Ray ray = ray_into_box(rng, dims);
        if (deterministic_records(scene.grid, scene.transform, ray).size() < 2)
            continue;
        const Rgb target{rng.uniform(), rng.uniform(), rng.uniform()};
        auto loss = [&] { return backprop_ray(scene, ray, target, lambda, bg).loss; };
        const RayGradients g = backprop_ray(scene, ray, target, lambda, bg);
        for (const auto &[slot, grad] : g.features) {
            auto f = scene.grid.feature(slot);
            for (std::size_t i = 0; i < f.size(); ++i)
                t.add(grad[i], central_difference(f[i], loss));
        }
        auto p = scene.decoder.params();
        for (std::size_t i = 0; i < p.size(); ++i)
            t.add(g.decoder[i], central_difference(p[i], loss));
        break;
    }
    return t;
}

} // namespace

SuiteResult verify_quadrature(std::uint64_t seed, int n_segments) {
    const auto t0 = Clock::now();
    CounterRng rng(seed, 0xB451);
    double max_diff = 0, max_sum = 0;
    auto check = [&](const Vec3 &a, const Vec3 &b) {
        const BasisWeights x = basis_integral(a, b);
        const BasisWeights q = basis_integral_quadrature(a, b, 64);
        double sum = 0;
        for (int k = 0; k < 8; ++k) {
            max_diff = std::max(max_diff, std::abs(x[k] - q[k]));
            sum += x[k];
        }
        max_sum = std::max(max_sum, std::abs(sum - 1));
    };
    int count = 0;
    for (int i = 0; i < n_segments; ++i, ++count)
        check(random_point(rng), random_point(rng));
    // Axis-aligned, diagonal, face-grazing, edge-grazing and degenerate segments.
    for (int a = 0; a < 3; ++a)
        for (int i = 0; i < 4; ++i, ++count) {
            Vec3 p = random_point(rng), q = p;
            p[a] = 0;
            q[a] = 1;
            check(p, q);
        }
    for (int c = 0; c < 8; ++c, ++count) {
        const Vec3 p{double(c & 1), double(c >> 1 & 1), double(c >> 2 & 1)};
        check(p, Vec3{1, 1, 1} - p);
    }
    for (int i = 0; i < 16; ++i, count += 3) {
        const Vec3 p = random_point(rng);
        check({0, p.y, p.z}, {0, 1 - p.y, p.x});
        check({0, 0, p.z}, {1, 0, p.x});
        check(p, p);
    }
    const BasisWeights d = basis_integral({0, 0, 0}, {1, 1, 1});
    const double known = std::max({std::abs(d[7] - 0.25), std::abs(d[0] - 0.25),
                                   std::abs(d[6] - 1.0 / 12.0)});
    SuiteResult r{"quadrature", false, {}};
    r.pass = max_diff <= verify_tol::kQuadrature && max_sum <= verify_tol::kPartition &&
             known <= verify_tol::kKnownValue;
    r.report = {{"segments", count},
                {"max_abs_diff", max_diff},
                {"max_partition_error", max_sum},
                {"diagonal_known_value_error", known},
                {"millis", millis_since(t0)},
                {"pass", r.pass}};
    return r;
}

SuiteResult verify_gradients(std::uint64_t seed) {
    const auto t0 = Clock::now();
    CounterRng rng(seed, 0x6AD);
    const GradTally losses = check_losses(rng);
    const GradTally dec = check_decoder(rng, seed);
    const GradTally ray = check_ray(rng, seed, false);
    const GradTally ray_tanh = check_ray(rng, seed + 1, true);
    SuiteResult r{"gradients", false, {}};
    r.pass = losses.pass() && dec.pass() && ray.pass() && ray_tanh.pass();
    r.report = {{"losses", losses.to_json()},
                {"decoder", dec.to_json()},
                {"ray", ray.to_json()},
                {"ray_tanh", ray_tanh.to_json()},
                {"tolerance", verify_tol::kGradientRel},
                {"millis", millis_since(t0)},
                {"pass", r.pass}};
    return r;
}

SuiteResult verify_fusion(std::uint64_t seed, int n_inputs, int threads) {
    const auto t0 = Clock::now();
    CounterRng rng(seed, 0xF05E);
    const DecoderShape shape = DecoderShape::for_variant(DecoderVariant::Diver32, 32);
    const DecoderWeights w = init_decoder(shape, seed);
    const FusedDecoderWeights fw = fuse(w);
    std::vector<Real> f(shape.feature_dim);
    double max_decoder = 0;
    for (int i = 0; i < n_inputs; ++i) {
        for (auto &v : f)
            v = rng.normal();
        const Vec3 dir = random_unit(rng);
        const DecoderOutput a = forward(w, f, dir);
        const DecoderOutput b = forward_fused(fw, f, dir);
        max_decoder = std::max(max_decoder, std::abs(a.sigma - b.sigma));
        for (int c = 0; c < 3; ++c)
            max_decoder = std::max(max_decoder, std::abs(a.color[c] - b.color[c]));
    }

    const Scene scene = make_random_scene(toy_grid_dims(), shape, 0.3, 1.0, seed, toy_transform());
    const CameraPose pose = toy_ring_poses(1, 25.0, 10.0, 64, 64)[0];
    RenderConfig plain;
    plain.fused = false;
    plain.tau_t = 0;
    plain.threads = threads;
    RenderConfig fused = plain;
    fused.fused = true;
    const Image a = render_image(scene, pose, plain).image;
    const Image b = render_image(scene, pose, fused).image;
    double max_render = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i)
        max_render = std::max(max_render, double(std::abs(a.rgb[i] - b.rgb[i])));

    SuiteResult r{"fusion", false, {}};
    r.pass = max_decoder <= verify_tol::kFusion && max_render <= verify_tol::kFusion;
    r.report = {{"inputs", n_inputs},
                {"max_decoder_diff", max_decoder},
                {"max_render_diff", max_render},
                {"tolerance", verify_tol::kFusion},
                {"millis", millis_since(t0)},
                {"pass", r.pass}};
    return r;
}

SuiteResult verify_mc(std::uint64_t seed, int threads) {
    const auto t0 = Clock::now();
    const Integrand1D f = integrand_power(1);
    const VarianceReport uni = variance_law_check(f, 16, 100000, seed, threads);
    // int t^2 / (2t) dt = 1/4 = I^2, so the importance estimator has zero variance.
    const VarianceReport imp =
        importance_variance_check(f, density_linear(), 0.25, 16, 100000, seed, threads);
    auto entry = [](const VarianceReport &v) {
        return json{{"estimator", to_string(v.stats.estimator)},
                    {"N", v.stats.n_samples},
                    {"M", v.stats.replications},
                    {"mean", v.stats.sample_mean},
                    {"variance", v.stats.sample_variance},
                    {"predicted_variance", v.predicted_variance},
                    {"pass", v.pass}};
    };
    SuiteResult r{"mc", uni.pass && imp.pass, {}};
    r.report = {{"reports", json::array({entry(uni), entry(imp)})},
                {"variance_rel_tolerance", kVarianceRelTol},
                {"millis", millis_since(t0)},
                {"pass", r.pass}};
    return r;
}

SuiteResult verify_conservation(std::uint64_t seed, int n_rays) {
    const auto t0 = Clock::now();
    CounterRng rng(seed, 0xC045);
    const GridDims dims{8, 8, 8};
    const Scene scene = make_random_scene(dims, DecoderShape{8, 16, kDecoderDirBands}, 0.4, 1.5, seed);
    const SceneRenderer renderer(scene, false);
    RenderConfig cfg;
    cfg.tau_t = 0;
    cfg.fused = false;
    double max_err = 0;
    std::size_t hit_rays = 0;
    for (int i = 0; i < n_rays; ++i) {
        const Ray ray = ray_into_box(rng, dims);
        double sum = 0;
        bool any = false;
        renderer.visit_blended_weights(ray, [&](const Int3 &, Real w) {
            sum += w;
            any = true;
        });
        hit_rays += any;
        const CompositeResult c = renderer.render_ray(ray, cfg);
        max_err = std::max(max_err, std::abs(sum + c.transmittance - 1));
    }
    SuiteResult r{"conservation", max_err <= verify_tol::kConservation, {}};
    r.report = {{"rays", n_rays},
                {"rays_with_hits", hit_rays},
                {"max_error", max_err},
                {"tolerance", verify_tol::kConservation},
                {"millis", millis_since(t0)},
                {"pass", r.pass}};
    return r;
}

const std::vector<std::string> &suite_names() {
    static const std::vector<std::string> names{"quadrature", "gradients", "fusion", "mc",
                                                "conservation"};
    return names;
}

std::vector<SuiteResult> run_suite(const std::string &name, std::uint64_t seed, int threads) {
    if (name == "all") {
        std::vector<SuiteResult> out;
        for (const auto &n : suite_names())
            out.push_back(run_suite(n, seed, threads).front());
        return out;
    }
    if (name == "quadrature")
        return {verify_quadrature(seed)};
    if (name == "gradients")
        return {verify_gradients(seed)};
    if (name == "fusion")
        return {verify_fusion(seed, 1000, threads)};
    if (name == "mc")
        return {verify_mc(seed, threads)};
    if (name == "conservation")
        return {verify_conservation(seed)};
    throw ValidationError("unknown verification suite '" + name + "'");
}

nlohmann::json summarize(const std::vector<SuiteResult> &results) {
    json suites = json::object();
    bool pass = !results.empty();
    for (const auto &r : results) {
        suites[r.name] = r.report;
        pass = pass && r.pass;
    }
    return {{"pass", pass}, {"suites", suites}};
}

} // namespace diver
