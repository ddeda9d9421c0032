// SPDX-License-Identifier: Apache-2.0
#include "diver/grid.hpp"

#include <algorithm>
#include <bit>
#include <set>
#include <string>

namespace diver {

void GridDims::validate() const {
    if (nx < 1 || ny < 1 || nz < 1)
        throw ValidationError("grid dimensions must be positive, got " + std::to_string(nx) +
                              "x" + std::to_string(ny) + "x" + std::to_string(nz));
}

OccupancyMask::OccupancyMask(GridDims dims)
    : dims_(dims), words_((dims.voxel_count() + 63) / 64, 0) {
    dims.validate();
}

void OccupancyMask::set(std::size_t index, bool on) {
    const std::uint64_t bit = std::uint64_t{1} << (index & 63);
    if (on)
        words_[index >> 6] |= bit;
    else
        words_[index >> 6] &= ~bit;
}

std::size_t OccupancyMask::count() const {
    std::size_t n = 0;
    for (auto w : words_)
        n += std::size_t(std::popcount(w));
    return n;
}

bool OccupancyMask::any() const {
    return std::any_of(words_.begin(), words_.end(), [](auto w) { return w != 0; });
}

OctreePyramid build_octree(const OccupancyMask &occupancy) {
    OctreePyramid pyr;
    GridDims d = occupancy.dims();
    std::vector<std::uint8_t> level(d.voxel_count());
    for (std::size_t i = 0; i < level.size(); ++i)
        level[i] = occupancy.test(i) ? 1 : 0;
    pyr.level_dims.push_back(d);
    pyr.levels.push_back(std::move(level));

    while (d.nx > 1 || d.ny > 1 || d.nz > 1) {
        const GridDims up{(d.nx + 1) / 2, (d.ny + 1) / 2, (d.nz + 1) / 2};
        const auto &child = pyr.levels.back();
        std::vector<std::uint8_t> parent(up.voxel_count(), 0);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x)
                    if (child[d.voxel_index({x, y, z})])
                        parent[up.voxel_index({x / 2, y / 2, z / 2})] = 1;
        pyr.level_dims.push_back(up);
        pyr.levels.push_back(std::move(parent));
        d = up;
    }
    return pyr;
}

FeatureGrid::FeatureGrid(GridDims dims, int feature_dim)
    : feature_dim_(feature_dim), occupancy_(dims), vertex_index_(dims.vertex_count(), kSentinel) {
    if (feature_dim < 1)
        throw ValidationError("feature_dim must be positive");
    octree_ = build_octree(occupancy_);
}

std::array<std::uint32_t, 8> FeatureGrid::corner_slots(const Int3 &voxel) const {
    if (!dims().contains_voxel(voxel) || !occupancy_.test(voxel))
        throw std::logic_error("corner_slots: voxel is not occupied");
    std::array<std::uint32_t, 8> slots;
    const std::size_t sx = std::size_t(dims().nx) + 1;
    const std::size_t sxy = sx * (std::size_t(dims().ny) + 1);
    const std::size_t base = dims().vertex_index(voxel);
    for (int c = 0; c < 8; ++c)
        slots[c] = vertex_index_[base + (c & 1) + ((c >> 1) & 1) * sx + ((c >> 2) & 1) * sxy];
    return slots;
}

void FeatureGrid::set_occupancy(const OccupancyMask &occupancy, const FeatureInit &init) {
    if (!(occupancy.dims() == dims()))
        throw DimensionError("set_occupancy: mask dimensions differ from grid");
    const GridDims d = dims();

    std::vector<std::uint8_t> active(d.vertex_count(), 0);
    for (std::size_t i = 0; i < d.voxel_count(); ++i) {
        if (!occupancy.test(i))
            continue;
        const Int3 v = d.voxel_coord(i);
        for (int c = 0; c < 8; ++c)
            active[d.vertex_index({v[0] + (c & 1), v[1] + ((c >> 1) & 1), v[2] + ((c >> 2) & 1)})] = 1;
    }

    std::vector<std::uint32_t> index(d.vertex_count(), kSentinel);
    std::vector<Real> pool;
    std::uint32_t next = 0;
    for (std::size_t p = 0; p < active.size(); ++p) {
        if (!active[p])
            continue;
        index[p] = next++;
        const std::size_t row = pool.size();
        pool.resize(row + feature_dim_, Real(0));
        std::span<Real> dst(pool.data() + row, std::size_t(feature_dim_));
        if (vertex_index_[p] != kSentinel) {
            auto src = feature(vertex_index_[p]);
            std::copy(src.begin(), src.end(), dst.begin());
        } else if (init) {
            init(d.vertex_coord(p), dst);
        }
    }

    occupancy_ = occupancy;
    occupied_count_ = occupancy.count();
    vertex_index_ = std::move(index);
    pool_ = std::move(pool);
    octree_ = build_octree(occupancy_);
}

void FeatureGrid::replace_pool(int feature_dim, std::vector<Real> pool) {
    if (feature_dim < 1 || pool.size() != active_vertex_count() * std::size_t(feature_dim))
        throw DimensionError("replace_pool: pool size does not match active vertex count");
    feature_dim_ = feature_dim;
    pool_ = std::move(pool);
}

void FeatureGrid::check_invariants() const {
    const GridDims d = dims();
    std::vector<std::uint8_t> needed(d.vertex_count(), 0);
    for (std::size_t i = 0; i < d.voxel_count(); ++i) {
        if (!occupancy_.test(i))
            continue;
        const Int3 v = d.voxel_coord(i);
        for (int c = 0; c < 8; ++c)
            needed[d.vertex_index({v[0] + (c & 1), v[1] + ((c >> 1) & 1), v[2] + ((c >> 2) & 1)})] = 1;
    }
    const std::size_t pool_rows = active_vertex_count();
    std::vector<std::uint8_t> referenced(pool_rows, 0);
    for (std::size_t p = 0; p < needed.size(); ++p) {
        const std::uint32_t slot = vertex_index_[p];
        if ((slot != kSentinel) != bool(needed[p]))
            throw std::logic_error("vertex activity inconsistent with occupancy at vertex " +
                                   std::to_string(p));
        if (slot == kSentinel)
            continue;
        if (slot >= pool_rows)
            throw std::logic_error("vertex slot out of pool range");
        if (referenced[slot])
            throw std::logic_error("pool slot referenced twice");
        referenced[slot] = 1;
    }
    if (std::find(referenced.begin(), referenced.end(), 0) != referenced.end())
        throw std::logic_error("unreferenced pool entry");
    if (occupied_count_ != occupancy_.count())
        throw std::logic_error("cached occupied count is stale");
}

FeatureGrid build_grid(GridDims dims, int feature_dim, std::span<const Int3> occupied,
                       const FeatureInit &init) {
    dims.validate();
    OccupancyMask mask(dims);
    std::set<Int3> seen;
    for (const Int3 &v : occupied) {
        if (!dims.contains_voxel(v))
            throw RangeError("build_grid: voxel (" + std::to_string(v[0]) + "," +
                             std::to_string(v[1]) + "," + std::to_string(v[2]) +
                             ") outside grid");
        if (!seen.insert(v).second)
            throw ValidationError("build_grid: duplicate voxel coordinate");
        mask.set(v);
    }
    FeatureGrid grid(dims, feature_dim);
    grid.set_occupancy(mask, init);
    return grid;
}

std::array<std::span<const Real>, 8> corner_features(const FeatureGrid &grid, const Int3 &voxel) {
    const auto slots = grid.corner_slots(voxel);
    std::array<std::span<const Real>, 8> out;
    for (int c = 0; c < 8; ++c)
        out[c] = grid.feature(slots[c]);
    return out;
}

FeatureGrid cull(const FeatureGrid &grid, std::span<const float> max_blended_alpha,
                 double tau_vis) {
    const GridDims d = grid.dims();
    if (max_blended_alpha.size() != d.voxel_count())
        throw DimensionError("cull: alpha array has " + std::to_string(max_blended_alpha.size()) +
                             " entries, grid has " + std::to_string(d.voxel_count()) + " voxels");
    if (!(tau_vis >= 0.0 && tau_vis < 1.0))
        throw ValidationError("cull: tau_vis must lie in [0, 1)");
    OccupancyMask mask = grid.occupancy();
    for (std::size_t i = 0; i < d.voxel_count(); ++i)
        if (mask.test(i) && double(max_blended_alpha[i]) < tau_vis)
            mask.set(i, false);
    FeatureGrid out = grid;
    out.set_occupancy(mask);
    return out;
}

OccupancyMask upsample_occupancy(const OccupancyMask &coarse, int factor, GridDims fine) {
    if (factor < 1)
        throw ValidationError("upsample factor must be >= 1");
    OccupancyMask out(fine);
    const GridDims c = coarse.dims();
    for (int z = 0; z < fine.nz; ++z)
        for (int y = 0; y < fine.ny; ++y)
            for (int x = 0; x < fine.nx; ++x) {
                const Int3 cv{std::min(x / factor, c.nx - 1), std::min(y / factor, c.ny - 1),
                              std::min(z / factor, c.nz - 1)};
                if (coarse.test(cv))
                    out.set(Int3{x, y, z});
            }
    return out;
}

} // namespace diver
