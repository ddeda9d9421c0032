// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/common.hpp"

#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace diver {

/// Marks a lattice vertex that owns no feature vector.
inline constexpr std::uint32_t kSentinel = std::numeric_limits<std::uint32_t>::max();

/// Voxel counts per axis. The vertex lattice is (nx+1) x (ny+1) x (nz+1);
/// all linear indices are x-fastest, then y, then z.
struct GridDims {
    int nx = 1, ny = 1, nz = 1;

    constexpr bool operator==(const GridDims &) const = default;

    int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    std::size_t voxel_count() const { return std::size_t(nx) * ny * nz; }
    std::size_t vertex_count() const { return std::size_t(nx + 1) * (ny + 1) * (nz + 1); }
    std::size_t voxel_index(const Int3 &v) const {
        return std::size_t(v[0]) + std::size_t(nx) * (std::size_t(v[1]) + std::size_t(ny) * v[2]);
    }
    std::size_t vertex_index(const Int3 &p) const {
        return std::size_t(p[0]) +
               std::size_t(nx + 1) * (std::size_t(p[1]) + std::size_t(ny + 1) * p[2]);
    }
    Int3 voxel_coord(std::size_t index) const {
        return {int(index % nx), int((index / nx) % ny), int(index / (std::size_t(nx) * ny))};
    }
    Int3 vertex_coord(std::size_t index) const {
        const std::size_t sx = nx + 1, sy = ny + 1;
        return {int(index % sx), int((index / sx) % sy), int(index / (sx * sy))};
    }
    bool contains_voxel(const Int3 &v) const {
        return v[0] >= 0 && v[1] >= 0 && v[2] >= 0 && v[0] < nx && v[1] < ny && v[2] < nz;
    }
    bool contains_vertex(const Int3 &p) const {
        return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] <= nx && p[1] <= ny && p[2] <= nz;
    }
    void validate() const;
};

/// Voxel occupancy bitmask, 64-bit words, voxel i stored in bit (i % 64) of word i / 64.
class OccupancyMask {
  public:
    OccupancyMask() = default;
    explicit OccupancyMask(GridDims dims);

    const GridDims &dims() const { return dims_; }
    bool test(std::size_t index) const { return (words_[index >> 6] >> (index & 63)) & 1u; }
    bool test(const Int3 &v) const { return test(dims_.voxel_index(v)); }
    void set(std::size_t index, bool on = true);
    void set(const Int3 &v, bool on = true) { set(dims_.voxel_index(v), on); }
    std::size_t count() const;
    bool any() const;

    std::span<const std::uint64_t> words() const { return words_; }
    std::span<std::uint64_t> words() { return words_; }

    bool operator==(const OccupancyMask &) const = default;

  private:
    GridDims dims_{};
    std::vector<std::uint64_t> words_;
};

/// Max-pooled occupancy hierarchy. Level 0 is full resolution; each further level
/// halves every axis (rounding up). The last level is a single cell.
struct OctreePyramid {
    std::vector<GridDims> level_dims;
    std::vector<std::vector<std::uint8_t>> levels;

    std::size_t level_count() const { return levels.size(); }
    bool test(std::size_t level, const Int3 &cell) const {
        return levels[level][level_dims[level].voxel_index(cell)] != 0;
    }
};

OctreePyramid build_octree(const OccupancyMask &occupancy);

/// Fills one vertex's feature vector.
using FeatureInit = std::function<void(const Int3 &vertex, std::span<Real> feature)>;

/// Sparse vertex-feature voxel grid.
///
/// Features live on lattice vertices. A vertex is active iff one of its incident
/// voxels is occupied; active vertices own one row of the feature pool, assigned in
/// vertex scan order so the pool layout is a pure function of the occupancy.
class FeatureGrid {
  public:
    FeatureGrid() = default;
    FeatureGrid(GridDims dims, int feature_dim);

    const GridDims &dims() const { return occupancy_.dims(); }
    int feature_dim() const { return feature_dim_; }
    std::size_t active_vertex_count() const { return pool_.size() / std::size_t(feature_dim_); }
    std::size_t occupied_voxel_count() const { return occupied_count_; }

    const OccupancyMask &occupancy() const { return occupancy_; }
    const OctreePyramid &octree() const { return octree_; }
    bool occupied(const Int3 &voxel) const { return occupancy_.test(voxel); }

    /// Pool slot of a lattice vertex, or kSentinel.
    std::uint32_t vertex_slot(const Int3 &vertex) const {
        return vertex_index_[dims().vertex_index(vertex)];
    }
    std::span<const std::uint32_t> vertex_index() const { return vertex_index_; }

    /// Pool slots of the 8 corners in basis order (corner c has offset (c&1, c>>1&1, c>>2&1)).
    /// Throws std::logic_error when the voxel is not occupied.
    std::array<std::uint32_t, 8> corner_slots(const Int3 &voxel) const;

    std::span<const Real> feature(std::uint32_t slot) const {
        return {pool_.data() + std::size_t(slot) * feature_dim_, std::size_t(feature_dim_)};
    }
    std::span<Real> feature(std::uint32_t slot) {
        return {pool_.data() + std::size_t(slot) * feature_dim_, std::size_t(feature_dim_)};
    }
    std::span<const Real> pool() const { return pool_; }
    std::span<Real> pool() { return pool_; }

    /// Replaces the occupancy. Features of vertices active before and after are kept;
    /// newly activated vertices are filled by `init` (zeros when empty).
    void set_occupancy(const OccupancyMask &occupancy, const FeatureInit &init = {});

    /// Reinterprets the pool with a different feature width (used by pre-multiplication).
    void replace_pool(int feature_dim, std::vector<Real> pool);

    /// Checks every structural invariant; throws std::logic_error on violation.
    void check_invariants() const;

  private:
    int feature_dim_ = 0;
    OccupancyMask occupancy_;
    OctreePyramid octree_;
    std::vector<std::uint32_t> vertex_index_;
    std::vector<Real> pool_;
    std::size_t occupied_count_ = 0;
};

FeatureGrid build_grid(GridDims dims, int feature_dim, std::span<const Int3> occupied,
                       const FeatureInit &init = {});

/// The 8 corner feature vectors of an occupied voxel, ordered like the basis functions.
std::array<std::span<const Real>, 8> corner_features(const FeatureGrid &grid, const Int3 &voxel);

/// Drops voxels whose maximum blended alpha is below tau_vis.
FeatureGrid cull(const FeatureGrid &grid, std::span<const float> max_blended_alpha,
                 double tau_vis);

/// Occupancy mask with each voxel expanded to a factor^3 block, clipped to `fine`.
OccupancyMask upsample_occupancy(const OccupancyMask &coarse, int factor, GridDims fine);

} // namespace diver
