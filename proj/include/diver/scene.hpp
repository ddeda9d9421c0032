// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/decoder.hpp"
#include "diver/grid.hpp"

#include <vector>

namespace diver {

/// Grid-to-world mapping: world = origin + voxel_size * grid.
struct WorldTransform {
    Vec3 origin{0, 0, 0};
    double voxel_size = 1.0;

    bool operator==(const WorldTransform &) const = default;
    Vec3 to_grid(const Vec3 &world) const { return (world - origin) / voxel_size; }
    Vec3 to_world(const Vec3 &grid) const { return origin + grid * voxel_size; }
};

/// A trained (or hand-built) radiance field: the unit of rendering, editing and I/O.
struct Scene {
    FeatureGrid grid;
    DecoderWeights decoder;
    WorldTransform transform;
    /// When set, the decoder sees tanh(feature) instead of the raw pool values.
    bool tanh_features = false;

    void validate() const;
};

inline constexpr std::uint8_t kNoSource = 0xFF;

/// Several scenes placed into one grid. Each occupied voxel belongs to exactly one
/// source and is decoded with that source's features and decoder.
struct CompositeScene {
    GridDims dims;
    WorldTransform transform;
    std::vector<Scene> sources;
    std::vector<Int3> offsets;
    OccupancyMask occupancy;
    OctreePyramid octree;
    std::vector<std::uint8_t> voxel_source; ///< per voxel; kNoSource when empty

    std::size_t occupied_voxel_count() const { return occupancy.count(); }
};

} // namespace diver
