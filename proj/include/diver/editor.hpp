// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/scene.hpp"

#include <span>
#include <vector>

namespace diver {

/// Inclusive voxel box.
struct Cuboid {
    Int3 min{0, 0, 0};
    Int3 max{0, 0, 0};

    bool operator==(const Cuboid &) const = default;
    Int3 size() const { return {max[0] - min[0] + 1, max[1] - min[1] + 1, max[2] - min[2] + 1}; }
    bool contains(const Int3 &voxel) const;
    /// Throws RangeError unless min <= max and the box lies inside `dims`.
    void validate(const GridDims &dims) const;
};

struct ClusterResult {
    int k = 0;
    int dim = 0;
    std::vector<int> labels;       ///< per data row
    std::vector<Real> centroids;   ///< k x dim
    int background = 0;            ///< label of the largest cluster (lowest label on ties)
    int iterations = 0;
    std::vector<double> objective; ///< within-cluster sum of squares after each assignment
    std::vector<Int3> vertices;    ///< for kmeans_features: lattice vertex of each row
};

/// Lloyd's algorithm on n rows of width dim with k-means++ seeding. Stops when no
/// centroid moves more than 1e-6 or after 100 iterations. Distance ties go to the lowest
/// centroid index; empty clusters keep their centroid.
ClusterResult kmeans(std::span<const Real> rows, int dim, int k, std::uint64_t seed);

/// Clusters the features of the active vertices of `cuboid` (vertex scan order).
ClusterResult kmeans_features(const Scene &scene, const Cuboid &cuboid, int k, std::uint64_t seed);

inline constexpr int kDefaultSwapClusters = 12;

/// Exchanges the non-background content of two equally sized cuboids. Vertex features
/// of both regions are clustered jointly (each relative position contributes its pair of
/// features in sorted order), so a second swap with the same arguments restores the
/// scene exactly. Throws ValidationError when the cuboids differ in size, overlap without
/// being identical, or when an exchanged object touches occupied voxels outside its cuboid.
Scene swap_objects(const Scene &scene, const Cuboid &a, const Cuboid &b,
                   int k = kDefaultSwapClusters, std::uint64_t seed = 0);

/// Per-voxel opacity estimate without cameras: the largest alpha of the three axis-aligned
/// segments through the voxel center. Empty voxels get 0.
std::vector<float> axis_alpha(const Scene &scene);

/// Places scenes into one grid at non-negative voxel offsets. Voxels occupied by several
/// sources go to the source with the larger max-blended alpha (earlier scene on ties);
/// `alphas` holds one per-voxel array per scene, or is empty to use axis_alpha.
CompositeScene blend_scenes(std::span<const Scene> scenes, std::span<const Int3> offsets,
                            std::span<const std::vector<float>> alphas = {});

} // namespace diver
