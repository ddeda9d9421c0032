// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/dataset.hpp"
#include "diver/scene.hpp"

#include <span>
#include <vector>

namespace diver {

/// Analytic test scene inside the cube [-1,1]^3 (z up): a soft-edged opaque blob and a
/// thin translucent disc ("drumhead") standing in the plane x = kDrumX.
namespace toy {

inline constexpr double kBlobRadius = 0.4;
inline constexpr double kBlobEdge = 0.12;
inline constexpr double kBlobDensity = 60.0;
inline const Vec3 kBlobCenter{-0.25, -0.1, 0.0};

inline constexpr double kDrumX = 0.45;
inline constexpr double kDrumHalfThickness = 0.02;
inline constexpr double kDrumRadius = 0.5;
inline constexpr double kDrumEdge = 0.08;
inline constexpr double kDrumDensity = 15.0;
inline constexpr double kDrumCenterY = 0.2;
inline constexpr double kDrumCenterZ = 0.1;
inline const Rgb kDrumColor{0.15, 0.35, 0.9};

inline constexpr int kGridRes = 16;
inline constexpr double kCameraRadius = 2.6;
inline constexpr double kFovDeg = 45.0;

} // namespace toy

struct ToySample {
    Real sigma_blob = 0;
    Real sigma_drum = 0;
    Rgb blob_color{};
};

/// Densities (per world unit) and blob color at a world point.
ToySample toy_field(const Vec3 &p);

GridDims toy_grid_dims(int res = toy::kGridRes);
WorldTransform toy_transform(int res = toy::kGridRes);

/// Reference render by midpoint ray marching with `steps` samples over the cube.
Image render_toy_reference(const CameraPose &pose, int steps = 4096, const Rgb &background = {1, 1, 1},
                           int threads = 0);

/// Cameras on a horizontal ring around the z axis looking at the origin.
std::vector<CameraPose> toy_ring_poses(int count, double elevation_deg, double azimuth0_deg,
                                       int width, int height);

/// Ring of `views` cameras at 25 degrees elevation.
TrainSet toy_train_set(int views = 8, int size = 64, int threads = 0);
/// Held-out cameras on the training ring, halfway between neighboring training views.
TrainSet toy_test_set(int views = 4, int size = 64, int train_views = 8, int threads = 0);

/// 1 for pixels whose ray crosses the drumhead before reaching the blob.
std::vector<std::uint8_t> toy_drum_mask(const CameraPose &pose);

/// Decoder whose density depends only on feature 0 and color only on features 1..3:
/// sigma = softplus(scale * f0 + bias), color_j = sigmoid(gain * f_j). Needs F >= 4, H >= 8.
DecoderWeights passthrough_decoder(DecoderShape shape, double sigma_scale = 1.0,
                                   double sigma_bias = 0.0, double color_gain = 1.0);

/// Scene over `dims` with the given voxels occupied, features from `init`, and a
/// passthrough decoder.
Scene make_fixture_scene(GridDims dims, std::span<const Int3> occupied, const FeatureInit &init,
                         DecoderShape shape = {}, WorldTransform transform = {});

/// Random occupancy (each voxel with probability `fill`), normal features with standard
/// deviation `feature_std`, and a seeded decoder of the given shape.
Scene make_random_scene(GridDims dims, DecoderShape shape, double fill, double feature_std,
                        std::uint64_t seed, WorldTransform transform = {});

/// Two opaque cubes of different colors, used by the editor tests and demos.
/// Red occupies voxels [a0, a0+size), green [b0, b0+size); dims must contain both.
Scene make_two_object_scene(GridDims dims, const Int3 &a0, const Int3 &b0, int size);

} // namespace diver
