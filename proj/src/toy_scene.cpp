// SPDX-License-Identifier: Apache-2.0
#include "diver/toy_scene.hpp"

#include "diver/parallel.hpp"
#include "diver/random.hpp"

#include <cmath>

namespace diver {

namespace {

double ramp(double x) { return std::clamp(x, 0.0, 1.0); }

} // namespace

ToySample toy_field(const Vec3 &p) {
    ToySample s;
    const double r = length(p - toy::kBlobCenter);
    s.sigma_blob = toy::kBlobDensity * ramp((toy::kBlobRadius - r) / toy::kBlobEdge + 0.5);
    const double h = ramp((p.z - toy::kBlobCenter.z + toy::kBlobRadius) / (2 * toy::kBlobRadius));
    s.blob_color = {0.9, 0.25 + 0.5 * h, 0.15};
    if (std::abs(p.x - toy::kDrumX) <= toy::kDrumHalfThickness) {
        const double rho = std::hypot(p.y - toy::kDrumCenterY, p.z - toy::kDrumCenterZ);
        s.sigma_drum = toy::kDrumDensity * ramp((toy::kDrumRadius - rho) / toy::kDrumEdge + 0.5);
    }
    return s;
}

GridDims toy_grid_dims(int res) { return {res, res, res}; }

WorldTransform toy_transform(int res) { return {{-1, -1, -1}, 2.0 / res}; }

Image render_toy_reference(const CameraPose &pose, int steps, const Rgb &background, int threads) {
    pose.validate();
    Image img(pose.width, pose.height);
    const GridDims cube{1, 1, 1};
    const WorldTransform xf{{-1, -1, -1}, 2.0};
    parallel_for(std::size_t(pose.height), 1, threads, [&](std::size_t y0, std::size_t y1, int) {
        for (std::size_t y = y0; y < y1; ++y)
            for (int x = 0; x < pose.width; ++x) {
                const Ray ray = generate_ray(pose, x, int(y));
                Rgb acc{0, 0, 0};
                double T = 1;
                // Box clip with the same slab test the renderer uses.
                const Vec3 og = xf.to_grid(ray.origin);
                const Vec3 dg = ray.direction / xf.voxel_size;
                double t0 = 0, t1 = 1e300;
                for (int a = 0; a < 3; ++a) {
                    double d = std::abs(dg[a]) < 1e-12 ? 1e-12 : dg[a];
                    double n = (0 - og[a]) / d, f = (cube[a] - og[a]) / d;
                    if (n > f)
                        std::swap(n, f);
                    t0 = std::max(t0, n);
                    t1 = std::min(t1, f);
                }
                if (t0 < t1) {
                    const double dt = (t1 - t0) / steps;
                    for (int i = 0; i < steps && T > 1e-9; ++i) {
                        const ToySample s = toy_field(ray.origin + ray.direction * (t0 + (i + 0.5) * dt));
                        const double sig = s.sigma_blob + s.sigma_drum;
                        if (sig <= 0)
                            continue;
                        const double a = 1 - std::exp(-sig * dt);
                        for (int c = 0; c < 3; ++c)
                            acc[c] += T * a *
                                      (s.sigma_blob * s.blob_color[c] + s.sigma_drum * toy::kDrumColor[c]) /
                                      sig;
                        T *= 1 - a;
                    }
                }
                float *px = img.at(x, int(y));
                for (int c = 0; c < 3; ++c)
                    px[c] = float(acc[c] + T * background[c]);
            }
    });
    return img;
}

std::vector<CameraPose> toy_ring_poses(int count, double elevation_deg, double azimuth0_deg,
                                       int width, int height) {
    std::vector<CameraPose> out;
    const double el = elevation_deg * kPi / 180.0;
    for (int i = 0; i < count; ++i) {
        const double az = (azimuth0_deg + 360.0 * i / count) * kPi / 180.0;
        const Vec3 pos{toy::kCameraRadius * std::cos(el) * std::cos(az),
                       toy::kCameraRadius * std::cos(el) * std::sin(az),
                       toy::kCameraRadius * std::sin(el)};
        out.push_back(look_at(pos, {0, 0, 0}, {0, 0, 1}, width, height, toy::kFovDeg));
    }
    return out;
}

namespace {

TrainSet make_set(const std::vector<CameraPose> &poses, int threads) {
    TrainSet set;
    for (const auto &p : poses)
        set.views.push_back({p, render_toy_reference(p, 4096, set.background, threads)});
    return set;
}

} // namespace

TrainSet toy_train_set(int views, int size, int threads) {
    return make_set(toy_ring_poses(views, 25.0, 10.0, size, size), threads);
}

TrainSet toy_test_set(int views, int size, int train_views, int threads) {
    if (train_views < 1)
        throw ValidationError("toy_test_set: train_views must be positive");
    // Same ring as the training cameras, azimuths halfway between two training views.
    return make_set(toy_ring_poses(views, 25.0, 10.0 + 180.0 / train_views, size, size), threads);
}

std::vector<std::uint8_t> toy_drum_mask(const CameraPose &pose) {
    std::vector<std::uint8_t> mask(std::size_t(pose.width) * pose.height, 0);
    const double r_blob = toy::kBlobRadius + 0.5 * toy::kBlobEdge;
    for (int y = 0; y < pose.height; ++y)
        for (int x = 0; x < pose.width; ++x) {
            const Ray ray = generate_ray(pose, x, y);
            if (std::abs(ray.direction.x) < 1e-9)
                continue;
            const double tp = (toy::kDrumX - ray.origin.x) / ray.direction.x;
            if (tp <= 0)
                continue;
            const Vec3 q = ray.origin + ray.direction * tp;
            const double rho = std::hypot(q.y - toy::kDrumCenterY, q.z - toy::kDrumCenterZ);
            if (rho >= toy::kDrumRadius - 0.5 * toy::kDrumEdge)
                continue;
            // Blob entry in front of the drum hides it.
            const Vec3 oc = ray.origin - toy::kBlobCenter;
            const double b = dot(oc, ray.direction);
            const double disc = b * b - (dot(oc, oc) - r_blob * r_blob);
            if (disc > 0 && -b - std::sqrt(disc) < tp)
                continue;
            mask[std::size_t(y) * pose.width + x] = 1;
        }
    return mask;
}

DecoderWeights passthrough_decoder(DecoderShape shape, double sigma_scale, double sigma_bias,
                                   double color_gain) {
    if (shape.feature_dim < 4 || shape.hidden < 8)
        throw ValidationError("passthrough decoder needs feature_dim >= 4 and hidden >= 8");
    DecoderWeights w(shape);
    auto p = w.params();
    std::fill(p.begin(), p.end(), 0.0);
    auto W = [&](int l, int row, int col) -> Real & {
        return p[w.weight_offset(l) + std::size_t(row) * w.layer_in(l) + col];
    };
    const int E = shape.encoded_dir_dim();
    for (int j = 0; j < 4; ++j) {
        W(1, 2 * j, j) = 1;
        W(1, 2 * j + 1, j) = -1;
    }
    for (int i = 0; i < 8; ++i)
        W(2, i, i) = 1;
    W(3, 0, 0) = sigma_scale;
    W(3, 0, 1) = -sigma_scale;
    p[w.bias_offset(3)] = sigma_bias;
    for (int j = 0; j < 3; ++j) {
        W(3, 1 + j, 2 * (j + 1)) = 1;
        W(3, 1 + j, 2 * (j + 1) + 1) = -1;
        W(4, 2 * j, E + j) = color_gain;
        W(4, 2 * j + 1, E + j) = -color_gain;
        W(5, j, 2 * j) = 1;
        W(5, j, 2 * j + 1) = -1;
    }
    return w;
}

Scene make_fixture_scene(GridDims dims, std::span<const Int3> occupied, const FeatureInit &init,
                         DecoderShape shape, WorldTransform transform) {
    Scene s;
    s.grid = build_grid(dims, shape.feature_dim, occupied, init);
    s.decoder = passthrough_decoder(shape);
    s.transform = transform;
    return s;
}

Scene make_random_scene(GridDims dims, DecoderShape shape, double fill, double feature_std,
                        std::uint64_t seed, WorldTransform transform) {
    CounterRng rng(seed, 0x5CE7E);
    std::vector<Int3> occ;
    for (std::size_t i = 0; i < dims.voxel_count(); ++i)
        if (rng.uniform() < fill)
            occ.push_back(dims.voxel_coord(i));
    Scene s;
    s.grid = build_grid(dims, shape.feature_dim, occ, [&](const Int3 &, std::span<Real> f) {
        for (Real &v : f)
            v = feature_std * rng.normal();
    });
    s.decoder = init_decoder(shape, seed);
    s.transform = transform;
    return s;
}

Scene make_two_object_scene(GridDims dims, const Int3 &a0, const Int3 &b0, int size) {
    std::vector<Int3> occ;
    // Floor slab at z = 0 plus two cubes.
    for (int y = 0; y < dims.ny; ++y)
        for (int x = 0; x < dims.nx; ++x)
            occ.push_back({x, y, 0});
    auto add_cube = [&](const Int3 &o) {
        for (int z = 0; z < size; ++z)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const Int3 v{o[0] + x, o[1] + y, o[2] + z};
                    if (!dims.contains_voxel(v))
                        throw RangeError("two-object scene: cube leaves the grid");
                    if (v[2] < 2)
                        throw RangeError("two-object scene: cubes must start at z >= 2");
                    occ.push_back(v);
                }
    };
    add_cube(a0);
    add_cube(b0);
    auto inside = [&](const Int3 &p, const Int3 &o) {
        for (int a = 0; a < 3; ++a)
            if (p[a] < o[a] || p[a] > o[a] + size)
                return false;
        return true;
    };
    auto init = [&](const Int3 &p, std::span<Real> f) {
        // Objects carry small per-vertex noise; the floor is uniform.
        std::fill(f.begin(), f.end(), 0.0);
        if (inside(p, a0) || inside(p, b0)) {
            CounterRng rng(0x70F, std::uint64_t(p[0]) | (std::uint64_t(p[1]) << 20) |
                                      (std::uint64_t(p[2]) << 40));
            for (Real &v : f)
                v = 0.05 * rng.normal();
        }
        if (inside(p, a0)) {
            f[0] += 8;
            f[1] += 3;
            f[2] += -3;
            f[3] += -3;
        } else if (inside(p, b0)) {
            f[0] += 8;
            f[1] += -3;
            f[2] += 3;
            f[3] += -3;
        } else {
            f[0] += 2;
        }
    };
    return make_fixture_scene(dims, occ, init, DecoderShape{8, 32, kDecoderDirBands},
                              WorldTransform{{0, 0, 0}, 1.0});
}

} // namespace diver
