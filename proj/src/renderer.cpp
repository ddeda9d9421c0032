// SPDX-License-Identifier: Apache-2.0
#include "diver/renderer.hpp"

#include "diver/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

namespace diver {

void CameraPose::validate() const {
    if (!(fx > 0 && fy > 0))
        throw ValidationError("camera focal lengths must be positive");
    if (width < 1 || height < 1)
        throw ValidationError("camera image size must be positive");
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double d = dot(rotation.column(i), rotation.column(j));
            if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-6)
                throw ValidationError("camera rotation is not orthonormal");
        }
}

Ray generate_ray(const CameraPose &pose, int px, int py) {
    const Vec3 cam{(px + 0.5 - pose.cx) / pose.fx, (py + 0.5 - pose.cy) / pose.fy, 1.0};
    return {pose.position, normalize(pose.rotation * cam)};
}

void RenderConfig::validate() const {
    if (!(tau_t >= 0.0 && tau_t < 1.0))
        throw ValidationError("tau_t must lie in [0, 1)");
    if (max_hits_per_pass < 1)
        throw ValidationError("max_hits_per_pass must be >= 1");
}

// ---------------------------------------------------------------------------
// Traversal

VoxelTraversal::VoxelTraversal(const OccupancyMask &occupancy, const OctreePyramid &octree,
                               const WorldTransform &transform, const Vec3 &origin,
                               const Vec3 &direction, double t_start)
    : occ_(&occupancy), oct_(&octree), dims_(occupancy.dims()) {
    og_ = transform.to_grid(origin);
    dg_ = direction / transform.voxel_size;
    for (int a = 0; a < 3; ++a) {
        // Face-tangent rays get a tiny nudge so every slab has a finite crossing time.
        if (std::abs(dg_[a]) < 1e-12)
            dg_[a] = std::signbit(dg_[a]) ? -1e-12 : 1e-12;
        inv_[a] = 1.0 / dg_[a];
        step_[a] = dg_[a] > 0 ? 1 : -1;
    }
    double ta, tb;
    t0_ = t_start;
    t1_ = std::numeric_limits<double>::infinity();
    if (!cell_span({0, 0, 0}, {dims_.nx, dims_.ny, dims_.nz}, ta, tb))
        return;
    t0_ = ta;
    t1_ = tb;
    if (oct_->level_count() == 0)
        return;
    active_ = find_first(oct_->level_count() - 1, {0, 0, 0});
}

bool VoxelTraversal::cell_span(const Int3 &lo, const Int3 &hi, double &ta, double &tb) const {
    ta = t0_;
    tb = t1_;
    for (int a = 0; a < 3; ++a) {
        double n = (lo[a] - og_[a]) * inv_[a];
        double f = (hi[a] - og_[a]) * inv_[a];
        if (n > f)
            std::swap(n, f);
        ta = std::max(ta, n);
        tb = std::min(tb, f);
    }
    return ta < tb;
}

bool VoxelTraversal::find_first(std::size_t level, const Int3 &cell) {
    if (!oct_->test(level, cell))
        return false;
    const int size = 1 << level;
    const Int3 lo{cell[0] * size, cell[1] * size, cell[2] * size};
    const Int3 hi{std::min(lo[0] + size, dims_.nx), std::min(lo[1] + size, dims_.ny),
                  std::min(lo[2] + size, dims_.nz)};
    double ta, tb;
    if (!cell_span(lo, hi, ta, tb))
        return false;
    if (level == 0) {
        voxel_ = cell;
        t_cur_ = ta;
        return true;
    }
    const GridDims &cd = oct_->level_dims[level - 1];
    std::array<std::pair<double, Int3>, 8> children;
    int n = 0;
    for (int c = 0; c < 8; ++c) {
        const Int3 child{2 * cell[0] + (c & 1), 2 * cell[1] + ((c >> 1) & 1),
                         2 * cell[2] + ((c >> 2) & 1)};
        if (!cd.contains_voxel(child) || !oct_->test(level - 1, child))
            continue;
        const int cs = size / 2;
        const Int3 clo{child[0] * cs, child[1] * cs, child[2] * cs};
        const Int3 chi{std::min(clo[0] + cs, dims_.nx), std::min(clo[1] + cs, dims_.ny),
                       std::min(clo[2] + cs, dims_.nz)};
        double ca, cb;
        if (cell_span(clo, chi, ca, cb))
            children[n++] = {ca, child};
    }
    std::sort(children.begin(), children.begin() + n,
              [](const auto &a, const auto &b) { return a.first < b.first; });
    for (int i = 0; i < n; ++i)
        if (find_first(level - 1, children[i].second))
            return true;
    return false;
}

std::optional<RayHit> VoxelTraversal::next() {
    while (active_) {
        double t_exit = t1_;
        int axis = -1;
        for (int a = 0; a < 3; ++a) {
            const double boundary = step_[a] > 0 ? voxel_[a] + 1 : voxel_[a];
            const double tn = (boundary - og_[a]) * inv_[a];
            if (tn < t_exit) {
                t_exit = tn;
                axis = a;
            }
        }
        const Int3 v = voxel_;
        const double t_in = t_cur_;
        const bool occupied = occ_->test(v);
        if (axis < 0) {
            active_ = false;
        } else {
            voxel_[axis] += step_[axis];
            if (voxel_[axis] < 0 || voxel_[axis] >= dims_[axis])
                active_ = false;
        }
        t_cur_ = std::max(t_cur_, t_exit);
        if (occupied && t_exit > t_in) {
            const Vec3 base{double(v[0]), double(v[1]), double(v[2])};
            RayHit hit;
            hit.voxel = v;
            hit.t_in = t_in;
            hit.t_out = t_exit;
            hit.x0 = clamp_local(og_ + dg_ * t_in - base);
            hit.x1 = clamp_local(og_ + dg_ * t_exit - base);
            return hit;
        }
    }
    return std::nullopt;
}

std::vector<RayHit> traverse(const OccupancyMask &occupancy, const OctreePyramid &octree,
                             const WorldTransform &transform, const Vec3 &origin,
                             const Vec3 &direction, double t_start) {
    std::vector<RayHit> hits;
    VoxelTraversal walk(occupancy, octree, transform, origin, direction, t_start);
    while (auto h = walk.next())
        hits.push_back(*h);
    return hits;
}

std::vector<IntervalRecord> deterministic_records(const FeatureGrid &grid,
                                                  const WorldTransform &transform, const Ray &ray) {
    std::vector<IntervalRecord> out;
    VoxelTraversal walk(grid.occupancy(), grid.octree(), transform, ray.origin, ray.direction);
    while (auto h = walk.next())
        out.push_back({h->voxel, basis_integral(h->x0, h->x1), 1.0});
    return out;
}

// ---------------------------------------------------------------------------
// Compositing

void Compositor::add(Real alpha, const Rgb *color) {
    if (done_)
        return;
    if (color && wants_color(alpha)) {
        const Real w = T_ * alpha;
        for (int c = 0; c < 3; ++c)
            acc_[c] += w * (*color)[c];
    }
    T_ *= (1 - alpha);
    if (T_ < tau_t_)
        done_ = true;
}

Rgb Compositor::finish(const Rgb &bg) const {
    return {acc_[0] + T_ * bg[0], acc_[1] + T_ * bg[1], acc_[2] + T_ * bg[2]};
}

CompositeResult composite(std::span<const Interval> intervals, double tau_t, const Rgb &background) {
    Compositor comp(tau_t);
    for (const Interval &iv : intervals) {
        if (!(iv.sigma >= 0))
            throw std::logic_error("composite: interval density must be non-negative");
        if (comp.done())
            break;
        comp.add(1 - std::exp(-iv.sigma), &iv.color);
    }
    return {comp.finish(background), comp.transmittance()};
}

// ---------------------------------------------------------------------------
// Scene rendering

FeatureGrid effective_grid(const Scene &scene) {
    FeatureGrid g = scene.grid;
    if (scene.tanh_features)
        for (Real &v : g.pool())
            v = std::tanh(v);
    return g;
}

struct SceneRenderer::Impl {
    struct Layer {
        std::optional<FeatureGrid> owned;
        const FeatureGrid *source = nullptr;
        const DecoderWeights *decoder = nullptr;
        FusedDecoderWeights fused;
        bool use_fused = false;
        Int3 offset{0, 0, 0};

        const FeatureGrid &grid() const { return owned ? *owned : *source; }
    };

    const OccupancyMask *occupancy = nullptr;
    const OctreePyramid *octree = nullptr;
    WorldTransform transform;
    std::vector<Layer> layers;
    const std::vector<std::uint8_t> *voxel_source = nullptr;

    void add_layer(const Scene &s, bool fused, const Int3 &offset) {
        Layer l;
        l.decoder = &s.decoder;
        l.use_fused = fused;
        l.offset = offset;
        if (fused) {
            l.fused = fuse(s.decoder);
            l.owned = premultiply_features(s.tanh_features ? effective_grid(s) : s.grid, l.fused.w1,
                                           s.decoder.shape().hidden);
        } else if (s.tanh_features) {
            l.owned = effective_grid(s);
        }
        l.source = &s.grid;
        if (!fused && l.grid().feature_dim() != s.decoder.shape().feature_dim)
            throw DimensionError("scene feature width does not match decoder input");
        layers.push_back(std::move(l));
    }

    // Per-thread scratch state.
    struct Worker {
        std::vector<std::optional<DecoderEvaluator>> plain;
        std::vector<std::optional<FusedEvaluator>> fused;
        std::vector<Real> feat;
        std::vector<RayHit> pass;
    };

    Worker make_worker() const {
        Worker w;
        std::size_t width = 0;
        for (const Layer &l : layers) {
            if (l.use_fused) {
                w.plain.emplace_back();
                w.fused.emplace_back(std::in_place, l.fused);
            } else {
                w.plain.emplace_back(std::in_place, *l.decoder);
                w.fused.emplace_back();
            }
            width = std::max<std::size_t>(width, l.grid().feature_dim());
        }
        w.feat.resize(width);
        return w;
    }

    std::size_t layer_of(const Int3 &v) const {
        if (!voxel_source)
            return 0;
        return (*voxel_source)[occupancy->dims().voxel_index(v)];
    }

    // Density of one interval; leaves the evaluator primed for color().
    Real density(Worker &w, std::size_t li, const RayHit &hit) const {
        const Layer &l = layers[li];
        const Int3 local{hit.voxel[0] - l.offset[0], hit.voxel[1] - l.offset[1],
                         hit.voxel[2] - l.offset[2]};
        const auto corners = corner_features(l.grid(), local);
        std::span<Real> feat(w.feat.data(), std::size_t(l.grid().feature_dim()));
        integrate_features(corners, basis_integral(hit.x0, hit.x1), feat);
        return l.use_fused ? w.fused[li]->density(feat) : w.plain[li]->density(feat);
    }

    Rgb color(Worker &w, std::size_t li) const {
        return layers[li].use_fused ? w.fused[li]->color() : w.plain[li]->color();
    }

    void set_direction(Worker &w, const Vec3 &dir) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (w.fused[i])
                w.fused[i]->set_direction(dir);
            if (w.plain[i])
                w.plain[i]->set_direction(dir);
        }
    }

    CompositeResult trace(Worker &w, const Ray &ray, const RenderConfig &cfg,
                          RenderStats &stats) const {
        set_direction(w, ray.direction);
        Compositor comp(cfg.tau_t);
        VoxelTraversal walk(*occupancy, *octree, transform, ray.origin, ray.direction);
        const std::size_t batch = std::size_t(cfg.max_hits_per_pass);
        bool more = true;
        while (more && !comp.done()) {
            // Gather a fixed number of hits per pass, then evaluate them in order.
            w.pass.clear();
            while (w.pass.size() < batch) {
                auto h = walk.next();
                if (!h) {
                    more = false;
                    break;
                }
                w.pass.push_back(*h);
            }
            for (const RayHit &hit : w.pass) {
                const std::size_t li = layer_of(hit.voxel);
                const Real sigma = density(w, li, hit);
                ++stats.mlp_calls;
                const Real alpha = 1 - std::exp(-sigma);
                if (comp.wants_color(alpha)) {
                    const Rgb c = color(w, li);
                    ++stats.color_calls;
                    comp.add(alpha, &c);
                } else {
                    comp.add(alpha, nullptr);
                }
                if (comp.done())
                    break;
            }
        }
        ++stats.rays;
        return {comp.finish(cfg.effective_background()), comp.transmittance()};
    }
};

SceneRenderer::SceneRenderer(const Scene &scene, bool fused) : impl_(std::make_unique<Impl>()) {
    impl_->occupancy = &scene.grid.occupancy();
    impl_->octree = &scene.grid.octree();
    impl_->transform = scene.transform;
    impl_->add_layer(scene, fused, {0, 0, 0});
}

SceneRenderer::SceneRenderer(const CompositeScene &scene, bool fused)
    : impl_(std::make_unique<Impl>()) {
    impl_->occupancy = &scene.occupancy;
    impl_->octree = &scene.octree;
    impl_->transform = scene.transform;
    impl_->voxel_source = &scene.voxel_source;
    for (std::size_t i = 0; i < scene.sources.size(); ++i)
        impl_->add_layer(scene.sources[i], fused, scene.offsets[i]);
}

SceneRenderer::~SceneRenderer() = default;
SceneRenderer::SceneRenderer(SceneRenderer &&) noexcept = default;
SceneRenderer &SceneRenderer::operator=(SceneRenderer &&) noexcept = default;

RenderOutput SceneRenderer::render(const CameraPose &pose, const RenderConfig &config) const {
    pose.validate();
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    RenderOutput out;
    out.image = Image(pose.width, pose.height);
    out.transmittance.assign(std::size_t(pose.width) * pose.height, 1.f);
    const int threads = config.threads > 0 ? config.threads : default_thread_count();
    std::vector<RenderStats> per_worker(threads);
    parallel_for(std::size_t(pose.height), 1, threads,
                 [&](std::size_t y0, std::size_t y1, int worker) {
                     auto w = impl_->make_worker();
                     RenderStats &st = per_worker[worker];
                     for (std::size_t y = y0; y < y1; ++y)
                         for (int x = 0; x < pose.width; ++x) {
                             const auto r = impl_->trace(w, generate_ray(pose, x, int(y)), config, st);
                             float *px = out.image.at(x, int(y));
                             for (int c = 0; c < 3; ++c)
                                 px[c] = float(r.rgb[c]);
                             out.transmittance[y * pose.width + x] = float(r.transmittance);
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

CompositeResult SceneRenderer::render_ray(const Ray &ray, const RenderConfig &config,
                                          RenderStats *stats) const {
    auto w = impl_->make_worker();
    RenderStats local;
    auto r = impl_->trace(w, ray, config, stats ? *stats : local);
    return r;
}

void SceneRenderer::visit_blended_weights(
    const Ray &ray, const std::function<void(const Int3 &, Real)> &visit) const {
    auto w = impl_->make_worker();
    impl_->set_direction(w, ray.direction);
    Real T = 1;
    VoxelTraversal walk(*impl_->occupancy, *impl_->octree, impl_->transform, ray.origin,
                        ray.direction);
    while (auto hit = walk.next()) {
        const Real sigma = impl_->density(w, impl_->layer_of(hit->voxel), *hit);
        const Real alpha = 1 - std::exp(-sigma);
        visit(hit->voxel, T * alpha);
        T *= 1 - alpha;
    }
}

RenderOutput render_image(const Scene &scene, const CameraPose &pose, const RenderConfig &config) {
    return SceneRenderer(scene, config.fused).render(pose, config);
}

RenderOutput render_image(const CompositeScene &scene, const CameraPose &pose,
                          const RenderConfig &config) {
    return SceneRenderer(scene, config.fused).render(pose, config);
}

CompositeResult render_ray(const Scene &scene, const Ray &ray, const RenderConfig &config,
                           RenderStats *stats) {
    return SceneRenderer(scene, config.fused).render_ray(ray, config, stats);
}

std::vector<float> record_max_blended_alpha(const Scene &scene, std::span<const CameraPose> poses,
                                            int threads) {
    const SceneRenderer renderer(scene, true);
    const std::size_t nvox = scene.grid.dims().voxel_count();
    if (threads <= 0)
        threads = default_thread_count();
    std::vector<std::vector<float>> partial(threads, std::vector<float>(nvox, 0.f));
    const GridDims dims = scene.grid.dims();
    for (const CameraPose &pose : poses) {
        pose.validate();
        parallel_for(std::size_t(pose.height), 1, threads,
                     [&](std::size_t y0, std::size_t y1, int worker) {
                         auto &mx = partial[worker];
                         for (std::size_t y = y0; y < y1; ++y)
                             for (int x = 0; x < pose.width; ++x)
                                 renderer.visit_blended_weights(
                                     generate_ray(pose, x, int(y)), [&](const Int3 &v, Real w) {
                                         float &m = mx[dims.voxel_index(v)];
                                         m = std::max(m, float(w));
                                     });
                     });
    }
    std::vector<float> out(nvox, 0.f);
    for (const auto &p : partial)
        for (std::size_t i = 0; i < nvox; ++i)
            out[i] = std::max(out[i], p[i]);
    return out;
}

} // namespace diver
