// SPDX-License-Identifier: Apache-2.0
#include "diver/mc_reference.hpp"

#include "diver/parallel.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace diver {

Integrand1D integrand_constant(double c) {
    return {[c](double) { return c; }, c, c * c, "const"};
}

Integrand1D integrand_power(int p) {
    return {[p](double t) { return std::pow(t, p); }, 1.0 / (p + 1), 1.0 / (2 * p + 1),
            "t^" + std::to_string(p)};
}

ImportanceDensity density_uniform() {
    return {[](double) { return 1.0; }, [](double u) { return u; }, "uniform"};
}

ImportanceDensity density_linear() {
    return {[](double t) { return 2 * t; }, [](double u) { return std::sqrt(u); }, "2t"};
}

const char *to_string(Estimator e) { return e == Estimator::Uniform ? "uniform" : "importance"; }

double mc_uniform(const Integrand1D &f, int n, std::uint64_t seed, std::uint64_t stream) {
    if (n < 1)
        throw ValidationError("mc_uniform: N must be >= 1");
    CounterRng rng(seed, stream);
    double sum = 0;
    for (int i = 0; i < n; ++i)
        sum += f.f(rng.uniform());
    return sum / n;
}

double mc_importance(const Integrand1D &f, const ImportanceDensity &P, int n, std::uint64_t seed,
                     std::uint64_t stream) {
    if (n < 1)
        throw ValidationError("mc_importance: N must be >= 1");
    CounterRng rng(seed, stream);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        const double t = P.inverse_cdf(rng.uniform());
        const double ft = f.f(t);
        const double pt = P.pdf(t);
        if (pt <= 0) {
            if (ft != 0)
                throw NumericError("mc_importance: P(t) = 0 at t = " + std::to_string(t) +
                                   " where f(t) != 0");
            continue;
        }
        sum += ft / pt;
    }
    return sum / n;
}

McEstimate mc_replicate(const Integrand1D &f, int n, std::size_t m, std::uint64_t seed,
                        Estimator estimator, const ImportanceDensity *P, int threads) {
    if (m < 1)
        throw ValidationError("mc_replicate: M must be >= 1");
    if (estimator == Estimator::Importance && !P)
        throw ValidationError("mc_replicate: importance estimator needs a density");
    std::vector<double> values(m);
    parallel_for(m, 4096, threads, [&](std::size_t b, std::size_t e, int) {
        for (std::size_t r = b; r < e; ++r)
            values[r] = estimator == Estimator::Uniform ? mc_uniform(f, n, seed, r)
                                                        : mc_importance(f, *P, n, seed, r);
    });
    McEstimate out;
    out.estimator = estimator;
    out.n_samples = n;
    out.replications = m;
    out.estimate = values[0];
    double mean = 0;
    for (double v : values)
        mean += v;
    mean /= double(m);
    double ss = 0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    out.sample_mean = mean;
    out.sample_variance = m > 1 ? ss / double(m - 1) : 0.0;
    return out;
}

namespace {

VarianceReport judge(const McEstimate &st, double I, double C, int n, std::size_t m) {
    VarianceReport rep;
    rep.stats = st;
    rep.predicted_mean = I;
    rep.predicted_variance = C / n;
    rep.mean_tolerance = 4 * std::sqrt(std::max(C, 0.0) / (double(n) * double(m)));
    if (rep.predicted_variance == 0) {
        rep.variance_rel_error = st.sample_variance == 0 ? 0 : std::numeric_limits<double>::infinity();
        rep.pass = st.sample_variance == 0 && st.sample_mean == I;
    } else {
        rep.variance_rel_error =
            std::abs(st.sample_variance - rep.predicted_variance) / rep.predicted_variance;
        rep.pass = rep.variance_rel_error <= kVarianceRelTol &&
                   std::abs(st.sample_mean - I) <= rep.mean_tolerance;
    }
    return rep;
}

} // namespace

VarianceReport variance_law_check(const Integrand1D &f, int n, std::size_t m, std::uint64_t seed,
                                  int threads) {
    if (m < 1000)
        throw ValidationError("variance_law_check: M must be >= 1000");
    if (!f.I || !f.I2)
        throw ValidationError("variance_law_check: integrand needs analytic I and I2");
    const double I = *f.I;
    const McEstimate st = mc_replicate(f, n, m, seed, Estimator::Uniform, nullptr, threads);
    return judge(st, I, *f.I2 - I * I, n, m);
}

VarianceReport importance_variance_check(const Integrand1D &f, const ImportanceDensity &P,
                                         double i2p, int n, std::size_t m, std::uint64_t seed,
                                         int threads) {
    if (m < 1000)
        throw ValidationError("importance_variance_check: M must be >= 1000");
    if (!f.I)
        throw ValidationError("importance_variance_check: integrand needs analytic I");
    const double I = *f.I;
    const McEstimate st = mc_replicate(f, n, m, seed, Estimator::Importance, &P, threads);
    return judge(st, I, i2p - I * I, n, m);
}

// ---------------------------------------------------------------------------
// Stochastic rendering

bool grid_ray_bounds(const GridDims &dims, const WorldTransform &transform, const Ray &ray,
                     double &t_near, double &t_far) {
    const Vec3 og = transform.to_grid(ray.origin);
    const Vec3 dg = ray.direction / transform.voxel_size;
    t_near = 0;
    t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        double d = dg[a];
        if (std::abs(d) < 1e-12)
            d = std::signbit(d) ? -1e-12 : 1e-12;
        double n = (0 - og[a]) / d;
        double f = (dims[a] - og[a]) / d;
        if (n > f)
            std::swap(n, f);
        t_near = std::max(t_near, n);
        t_far = std::min(t_far, f);
    }
    return t_near < t_far;
}

namespace {

// Voxel containing grid point p, or nullopt outside the grid.
std::optional<Int3> voxel_at(const GridDims &dims, const Vec3 &p, Vec3 &local) {
    Int3 v;
    for (int a = 0; a < 3; ++a) {
        const double f = std::floor(p[a]);
        v[a] = std::clamp(int(f), 0, dims[a] - 1);
        if (p[a] < 0 || p[a] > dims[a])
            return std::nullopt;
        local[a] = p[a] - v[a];
    }
    local = clamp_local(local);
    return v;
}

} // namespace

std::vector<IntervalRecord> stochastic_records(const FeatureGrid &grid,
                                               const WorldTransform &transform, const Ray &ray,
                                               int n_samples, CounterRng &rng) {
    if (n_samples < 1)
        throw ValidationError("stochastic_records: n_samples must be >= 1");
    std::vector<IntervalRecord> out;
    double t_near, t_far;
    if (!grid_ray_bounds(grid.dims(), transform, ray, t_near, t_far))
        return out;
    const double dt = (t_far - t_near) / n_samples;
    const double delta = dt / transform.voxel_size;
    const Vec3 og = transform.to_grid(ray.origin);
    const Vec3 dg = ray.direction / transform.voxel_size;
    for (int i = 0; i < n_samples; ++i) {
        // The jitter is drawn for every stratum so the stream does not depend on occupancy.
        const double t = t_near + (i + rng.uniform()) * dt;
        Vec3 local;
        const auto v = voxel_at(grid.dims(), og + dg * t, local);
        if (!v || !grid.occupied(*v))
            continue;
        out.push_back({*v, chi_all(local), delta});
    }
    return out;
}

std::vector<IntervalRecord> stochastic_interval_records(const FeatureGrid &grid,
                                                        const WorldTransform &transform,
                                                        const Ray &ray, CounterRng &rng) {
    std::vector<IntervalRecord> out;
    VoxelTraversal walk(grid.occupancy(), grid.octree(), transform, ray.origin, ray.direction);
    while (auto h = walk.next()) {
        const double u = rng.uniform();
        const Vec3 p = h->x0 * (1 - u) + h->x1 * u;
        const double len = (h->t_out - h->t_in) / transform.voxel_size;
        out.push_back({h->voxel, chi_all(clamp_local(p)), len});
    }
    return out;
}

namespace {

CompositeResult composite_records(const Scene &scene, DecoderEvaluator &eval,
                                  std::span<const IntervalRecord> records,
                                  const RenderConfig &config, RenderStats &stats) {
    const int F = scene.grid.feature_dim();
    std::vector<Real> feat(F), corner(F);
    Compositor comp(config.tau_t);
    for (const IntervalRecord &r : records) {
        std::fill(feat.begin(), feat.end(), 0.0);
        const auto slots = scene.grid.corner_slots(r.voxel);
        for (int k = 0; k < 8; ++k) {
            if (r.weights[k] == 0)
                continue;
            const auto f = scene.grid.feature(slots[k]);
            for (int j = 0; j < F; ++j)
                feat[j] += r.weights[k] * (scene.tanh_features ? std::tanh(f[j]) : f[j]);
        }
        const Real sigma = eval.density(feat);
        ++stats.mlp_calls;
        const Real alpha = 1 - std::exp(-sigma * r.scale);
        if (comp.wants_color(alpha)) {
            const Rgb c = eval.color();
            ++stats.color_calls;
            comp.add(alpha, &c);
        } else {
            comp.add(alpha, nullptr);
        }
        if (comp.done())
            break;
    }
    ++stats.rays;
    return {comp.finish(config.effective_background()), comp.transmittance()};
}

} // namespace

CompositeResult mc_render_ray(const Scene &scene, const Ray &ray, int n_samples,
                              std::uint64_t seed, std::uint64_t stream, const RenderConfig &config,
                              RenderStats *stats) {
    if (n_samples < 2)
        throw ValidationError("mc_render_ray: n_samples must be >= 2");
    CounterRng rng(seed, stream);
    const auto records = stochastic_records(scene.grid, scene.transform, ray, n_samples, rng);
    DecoderEvaluator eval(scene.decoder);
    eval.set_direction(ray.direction);
    RenderStats local;
    return composite_records(scene, eval, records, config, stats ? *stats : local);
}

RenderOutput mc_render_image(const Scene &scene, const CameraPose &pose, int n_samples,
                             std::uint64_t seed, const RenderConfig &config) {
    pose.validate();
    config.validate();
    if (n_samples < 2)
        throw ValidationError("mc_render_image: n_samples must be >= 2");
    const auto start = std::chrono::steady_clock::now();
    RenderOutput out;
    out.image = Image(pose.width, pose.height);
    out.transmittance.assign(out.image.pixel_count(), 1.f);
    const int threads = config.threads > 0 ? config.threads : default_thread_count();
    std::vector<RenderStats> per_worker(threads);
    parallel_for(std::size_t(pose.height), 1, threads,
                 [&](std::size_t y0, std::size_t y1, int worker) {
                     DecoderEvaluator eval(scene.decoder);
                     for (std::size_t y = y0; y < y1; ++y)
                         for (int x = 0; x < pose.width; ++x) {
                             const Ray ray = generate_ray(pose, x, int(y));
                             const std::size_t p = y * pose.width + x;
                             CounterRng rng(seed, p);
                             const auto rec = stochastic_records(scene.grid, scene.transform, ray,
                                                                 n_samples, rng);
                             eval.set_direction(ray.direction);
                             const auto r =
                                 composite_records(scene, eval, rec, config, per_worker[worker]);
                             float *px = out.image.at(x, int(y));
                             for (int c = 0; c < 3; ++c)
                                 px[c] = float(r.rgb[c]);
                             out.transmittance[p] = float(r.transmittance);
                         }
                 });
    for (const auto &s : per_worker) {
        out.stats.rays += s.rays;
        out.stats.mlp_calls += s.mlp_calls;
        out.stats.color_calls += s.color_calls;
    }
    out.stats.millis =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace diver
