// SPDX-License-Identifier: Apache-2.0
#include "diver/editor.hpp"

#include "diver/random.hpp"
#include "diver/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace diver {

bool Cuboid::contains(const Int3 &v) const {
    for (int a = 0; a < 3; ++a)
        if (v[a] < min[a] || v[a] > max[a])
            return false;
    return true;
}

void Cuboid::validate(const GridDims &dims) const {
    for (int a = 0; a < 3; ++a) {
        if (min[a] > max[a])
            throw RangeError("cuboid min exceeds max on axis " + std::to_string(a));
        if (min[a] < 0 || max[a] >= dims[a])
            throw RangeError("cuboid leaves the grid on axis " + std::to_string(a));
    }
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double dist2(const Real *a, const Real *b, int dim) {
    double s = 0;
    for (int j = 0; j < dim; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

} // namespace

ClusterResult kmeans(std::span<const Real> rows, int dim, int k, std::uint64_t seed) {
    if (dim < 1 || rows.size() % std::size_t(dim) != 0)
        throw DimensionError("kmeans: data size is not a multiple of the row width");
    if (k < 2)
        throw ValidationError("kmeans: k must be >= 2");
    const std::size_t n = rows.size() / dim;
    if (n < std::size_t(k))
        throw ValidationError("kmeans: " + std::to_string(n) + " points for k = " + std::to_string(k));

    ClusterResult res;
    res.k = k;
    res.dim = dim;
    res.centroids.resize(std::size_t(k) * dim);
    const Real *X = rows.data();

    // k-means++ seeding.
    CounterRng rng(seed, 0xC1A5);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.below(n);
    for (int c = 0; c < k; ++c) {
        std::copy_n(X + pick * dim, dim, res.centroids.begin() + std::size_t(c) * dim);
        if (c + 1 == k)
            break;
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], dist2(X + i * dim, res.centroids.data() + std::size_t(c) * dim, dim));
            total += d2[i];
        }
        if (total <= 0) {
            pick = 0; // every point coincides with a centroid
            continue;
        }
        double u = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0)
                continue;
            u -= d2[i];
            if (u <= 0) {
                pick = i;
                break;
            }
        }
        while (d2[pick] <= 0 && pick > 0)
            --pick;
    }

    res.labels.assign(n, 0);
    std::vector<Real> next(res.centroids.size());
    std::vector<std::size_t> count(k);
    for (int it = 0; it < 100; ++it) {
        double obj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = dist2(X + i * dim, res.centroids.data() + std::size_t(c) * dim, dim);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            res.labels[i] = best;
            obj += bd;
        }
        res.objective.push_back(obj);
        res.iterations = it + 1;

        std::fill(next.begin(), next.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[res.labels[i]];
            Real *dst = next.data() + std::size_t(res.labels[i]) * dim;
            for (int j = 0; j < dim; ++j)
                dst[j] += X[i * dim + j];
        }
        double shift = 0;
        for (int c = 0; c < k; ++c) {
            Real *dst = next.data() + std::size_t(c) * dim;
            const Real *old = res.centroids.data() + std::size_t(c) * dim;
            if (count[c] == 0) {
                std::copy_n(old, dim, dst);
                continue;
            }
            for (int j = 0; j < dim; ++j)
                dst[j] /= double(count[c]);
            shift = std::max(shift, std::sqrt(dist2(dst, old, dim)));
        }
        res.centroids.swap(next);
        if (shift < 1e-6)
            break;
    }
    // Labels refer to the final centroids.
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const double d = dist2(X + i * dim, res.centroids.data() + std::size_t(c) * dim, dim);
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        res.labels[i] = best;
        ++count[best];
    }
    res.background = int(std::max_element(count.begin(), count.end()) - count.begin());
    return res;
}

namespace {

void check_cuboid(const Scene &scene, const Cuboid &c) { c.validate(scene.grid.dims()); }

} // namespace

ClusterResult kmeans_features(const Scene &scene, const Cuboid &cuboid, int k, std::uint64_t seed) {
    check_cuboid(scene, cuboid);
    const FeatureGrid &g = scene.grid;
    const int F = g.feature_dim();
    std::vector<Real> rows;
    std::vector<Int3> verts;
    for (int z = cuboid.min[2]; z <= cuboid.max[2] + 1; ++z)
        for (int y = cuboid.min[1]; y <= cuboid.max[1] + 1; ++y)
            for (int x = cuboid.min[0]; x <= cuboid.max[0] + 1; ++x) {
                const std::uint32_t s = g.vertex_slot({x, y, z});
                if (s == kSentinel)
                    continue;
                const auto f = g.feature(s);
                rows.insert(rows.end(), f.begin(), f.end());
                verts.push_back({x, y, z});
            }
    if (verts.size() < std::size_t(k))
        throw ValidationError("kmeans_features: cuboid has " + std::to_string(verts.size()) +
                              " active vertices, fewer than k = " + std::to_string(k));
    ClusterResult r = kmeans(rows, F, k, seed);
    r.vertices = std::move(verts);
    return r;
}

// ---------------------------------------------------------------------------
// Object swap

Scene swap_objects(const Scene &scene, const Cuboid &a, const Cuboid &b, int k, std::uint64_t seed) {
    const FeatureGrid &g = scene.grid;
    const GridDims d = g.dims();
    a.validate(d);
    b.validate(d);
    if (a.size() != b.size())
        throw ValidationError("swap: cuboids differ in size");
    if (a == b)
        return scene;
    // The vertex lattices (one wider than the voxel boxes) must be disjoint.
    bool overlap = true;
    for (int ax = 0; ax < 3; ++ax)
        if (a.max[ax] + 1 < b.min[ax] || b.max[ax] + 1 < a.min[ax])
            overlap = false;
    if (overlap)
        throw ValidationError("swap: cuboids overlap or share vertices");

    const int F = g.feature_dim();
    const Int3 n = a.size();
    const Int3 nv{n[0] + 1, n[1] + 1, n[2] + 1};
    const GridDims local_vox{n[0], n[1], n[2]};
    const GridDims local_vert{n[0], n[1], n[2]}; // vertex_index() of these dims spans nv
    auto at = [](const Cuboid &c, const Int3 &p) {
        return Int3{c.min[0] + p[0], c.min[1] + p[1], c.min[2] + p[2]};
    };
    const std::size_t NV = std::size_t(nv[0]) * nv[1] * nv[2];
    const std::size_t NQ = local_vox.voxel_count();

    // Joint clustering: at each relative vertex, the active features of both regions in
    // lexicographic order.
    std::vector<Real> rows;
    std::vector<std::array<std::int64_t, 2>> row_of(NV, {-1, -1}); // row of A_p, B_p
    std::size_t n_rows = 0;
    for (std::size_t p = 0; p < NV; ++p) {
        const Int3 lp = local_vert.vertex_coord(p);
        const std::uint32_t sa = g.vertex_slot(at(a, lp)), sb = g.vertex_slot(at(b, lp));
        std::vector<std::pair<std::span<const Real>, int>> items;
        if (sa != kSentinel)
            items.push_back({g.feature(sa), 0});
        if (sb != kSentinel)
            items.push_back({g.feature(sb), 1});
        if (items.size() == 2 &&
            std::lexicographical_compare(items[1].first.begin(), items[1].first.end(),
                                         items[0].first.begin(), items[0].first.end()))
            std::swap(items[0], items[1]);
        for (const auto &[f, side] : items) {
            rows.insert(rows.end(), f.begin(), f.end());
            row_of[p][side] = std::int64_t(n_rows++);
        }
    }
    if (n_rows < std::size_t(k))
        throw ValidationError("swap: the cuboids hold " + std::to_string(n_rows) +
                              " active vertices, fewer than k = " + std::to_string(k));
    const ClusterResult cl = kmeans(rows, F, k, seed);
    auto foreground = [&](std::size_t p, int side) {
        const auto r = row_of[p][side];
        return r >= 0 && cl.labels[std::size_t(r)] != cl.background;
    };

    auto occ = [&](const Cuboid &c, const Int3 &q) { return g.occupied(at(c, q)); };
    auto active = [&](const Cuboid &c, const Int3 &p) { return g.vertex_slot(at(c, p)) != kSentinel; };

    std::vector<std::uint8_t> inE(NV, 0), inV(NQ, 0);
    for (std::size_t p = 0; p < NV; ++p)
        if (foreground(p, 0) || foreground(p, 1))
            inE[p] = 1;

    auto corner = [&](const Int3 &q, int c) {
        return Int3{q[0] + (c & 1), q[1] + ((c >> 1) & 1), q[2] + ((c >> 2) & 1)};
    };
    bool changed = true;
    while (changed) {
        changed = false;
        // Corners of V whose activity differs join E.
        for (std::size_t qi = 0; qi < NQ; ++qi) {
            if (!inV[qi])
                continue;
            const Int3 q = local_vox.voxel_coord(qi);
            for (int c = 0; c < 8; ++c) {
                const Int3 p = corner(q, c);
                const std::size_t pi = local_vert.vertex_index(p);
                if (!inE[pi] && active(a, p) != active(b, p)) {
                    inE[pi] = 1;
                    changed = true;
                }
            }
        }
        std::vector<std::uint8_t> cornerV(NV, 0);
        for (std::size_t qi = 0; qi < NQ; ++qi)
            if (inV[qi])
                for (int c = 0; c < 8; ++c)
                    cornerV[local_vert.vertex_index(corner(local_vox.voxel_coord(qi), c))] = 1;
        for (std::size_t qi = 0; qi < NQ; ++qi) {
            if (inV[qi])
                continue;
            const Int3 q = local_vox.voxel_coord(qi);
            const bool oa = occ(a, q), ob = occ(b, q);
            bool touchE = false, touchV = false;
            for (int c = 0; c < 8; ++c) {
                const std::size_t pi = local_vert.vertex_index(corner(q, c));
                touchE |= inE[pi] != 0;
                touchV |= cornerV[pi] != 0;
            }
            if (((oa || ob) && touchE) || (oa != ob && touchV)) {
                inV[qi] = 1;
                changed = true;
            }
        }
    }

    // Vertices on the cuboid surface must not be shared with occupied voxels outside.
    std::vector<std::uint8_t> cornerV(NV, 0);
    for (std::size_t qi = 0; qi < NQ; ++qi)
        if (inV[qi])
            for (int c = 0; c < 8; ++c)
                cornerV[local_vert.vertex_index(corner(local_vox.voxel_coord(qi), c))] = 1;
    for (std::size_t pi = 0; pi < NV; ++pi) {
        if (!inE[pi] && !cornerV[pi])
            continue;
        const Int3 p = local_vert.vertex_coord(pi);
        for (int c = 0; c < 8; ++c) {
            const Int3 q{p[0] - (c & 1), p[1] - ((c >> 1) & 1), p[2] - ((c >> 2) & 1)};
            if (local_vox.contains_voxel(q))
                continue;
            const Int3 qa = at(a, q), qb = at(b, q);
            const bool oa = d.contains_voxel(qa) && g.occupied(qa);
            const bool ob = d.contains_voxel(qb) && g.occupied(qb);
            if ((inE[pi] && (oa || ob)) || (!inE[pi] && oa != ob))
                throw ValidationError("swap: selected object touches occupied voxels outside its cuboid");
        }
    }

    // Exchange occupancy on V and features on E.
    OccupancyMask mask = g.occupancy();
    for (std::size_t qi = 0; qi < NQ; ++qi) {
        if (!inV[qi])
            continue;
        const Int3 q = local_vox.voxel_coord(qi);
        const bool oa = occ(a, q), ob = occ(b, q);
        mask.set(at(a, q), ob);
        mask.set(at(b, q), oa);
    }
    // Map each lattice vertex of the output to its source vertex in the input.
    auto source_of = [&](const Int3 &v) -> Int3 {
        for (int side = 0; side < 2; ++side) {
            const Cuboid &c = side ? b : a;
            const Cuboid &o = side ? a : b;
            const Int3 p{v[0] - c.min[0], v[1] - c.min[1], v[2] - c.min[2]};
            if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= nv[0] || p[1] >= nv[1] || p[2] >= nv[2])
                continue;
            if (inE[local_vert.vertex_index(p)])
                return at(o, p);
        }
        return v;
    };

    Scene out = scene;
    out.grid.set_occupancy(mask);
    const auto index = out.grid.vertex_index();
    for (std::size_t vi = 0; vi < index.size(); ++vi) {
        if (index[vi] == kSentinel)
            continue;
        const Int3 v = d.vertex_coord(vi);
        const std::uint32_t src = g.vertex_slot(source_of(v));
        if (src == kSentinel)
            throw std::logic_error("swap: exchanged vertex has no source feature");
        const auto f = g.feature(src);
        std::copy(f.begin(), f.end(), out.grid.feature(index[vi]).begin());
    }
    out.grid.check_invariants();
    return out;
}

// ---------------------------------------------------------------------------
// Blending

std::vector<float> axis_alpha(const Scene &scene) {
    const FeatureGrid eff = effective_grid(scene);
    const GridDims d = eff.dims();
    std::vector<float> out(d.voxel_count(), 0.f);
    std::vector<Real> feat(eff.feature_dim());
    const Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < d.voxel_count(); ++i) {
        const Int3 v = d.voxel_coord(i);
        if (!eff.occupied(v))
            continue;
        const auto corners = corner_features(eff, v);
        float best = 0;
        for (const Vec3 &ax : axes) {
            const Vec3 c{0.5, 0.5, 0.5};
            integrate_features(corners, basis_integral(c - ax * 0.5, c + ax * 0.5), feat);
            const DecoderOutput o = forward(scene.decoder, feat, ax);
            best = std::max(best, float(1 - std::exp(-o.sigma)));
        }
        out[i] = best;
    }
    return out;
}

CompositeScene blend_scenes(std::span<const Scene> scenes, std::span<const Int3> offsets,
                            std::span<const std::vector<float>> alphas) {
    if (scenes.empty())
        throw ValidationError("blend: no scenes");
    if (offsets.size() != scenes.size())
        throw ValidationError("blend: one offset per scene required");
    if (!alphas.empty() && alphas.size() != scenes.size())
        throw ValidationError("blend: one alpha map per scene required");
    if (scenes.size() >= kNoSource)
        throw ValidationError("blend: too many scenes");
    const int F = scenes[0].grid.feature_dim();
    GridDims dims{1, 1, 1};
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        scenes[i].validate();
        if (scenes[i].grid.feature_dim() != F)
            throw DimensionError("blend: scene " + std::to_string(i) + " has feature width " +
                                 std::to_string(scenes[i].grid.feature_dim()) + ", expected " +
                                 std::to_string(F));
        for (int ax = 0; ax < 3; ++ax) {
            if (offsets[i][ax] < 0)
                throw RangeError("blend: offsets must be non-negative");
            const int extent = offsets[i][ax] + scenes[i].grid.dims()[ax];
            if (ax == 0)
                dims.nx = std::max(dims.nx, extent);
            else if (ax == 1)
                dims.ny = std::max(dims.ny, extent);
            else
                dims.nz = std::max(dims.nz, extent);
        }
        if (!alphas.empty() && alphas[i].size() != scenes[i].grid.dims().voxel_count())
            throw DimensionError("blend: alpha map " + std::to_string(i) + " has the wrong size");
    }

    CompositeScene cs;
    cs.dims = dims;
    const WorldTransform &t0 = scenes[0].transform;
    cs.transform = {t0.origin - Vec3{double(offsets[0][0]), double(offsets[0][1]), double(offsets[0][2])} *
                                    t0.voxel_size,
                    t0.voxel_size};
    cs.sources.assign(scenes.begin(), scenes.end());
    cs.offsets.assign(offsets.begin(), offsets.end());
    cs.voxel_source.assign(dims.voxel_count(), kNoSource);
    std::vector<float> best(dims.voxel_count(), -1.f);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const FeatureGrid &g = scenes[i].grid;
        const std::vector<float> alpha = alphas.empty() ? axis_alpha(scenes[i]) : alphas[i];
        for (std::size_t v = 0; v < g.dims().voxel_count(); ++v) {
            if (!g.occupancy().test(v))
                continue;
            const Int3 l = g.dims().voxel_coord(v);
            const std::size_t gi =
                dims.voxel_index({l[0] + offsets[i][0], l[1] + offsets[i][1], l[2] + offsets[i][2]});
            if (alpha[v] > best[gi]) {
                best[gi] = alpha[v];
                cs.voxel_source[gi] = std::uint8_t(i);
            }
        }
    }
    cs.occupancy = OccupancyMask(dims);
    for (std::size_t v = 0; v < cs.voxel_source.size(); ++v)
        if (cs.voxel_source[v] != kNoSource)
            cs.occupancy.set(v);
    cs.octree = build_octree(cs.occupancy);
    return cs;
}

} // namespace diver
