// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/image.hpp"
#include "diver/renderer.hpp"

#include <vector>

namespace diver {

struct TrainView {
    CameraPose pose;
    Image image;
};

/// Posed images sharing one background convention.
struct TrainSet {
    std::vector<TrainView> views;
    Rgb background{1, 1, 1};

    std::size_t ray_count() const;
    std::vector<CameraPose> poses() const;
    /// Throws ValidationError on invalid poses or images whose size disagrees with the pose.
    void validate() const;
};

/// Camera looking from `position` at `target`; `up` fixes the roll (image y points away
/// from it). fov_y in degrees; the principal point is the image center.
CameraPose look_at(const Vec3 &position, const Vec3 &target, const Vec3 &up, int width,
                   int height, double fov_y_deg);

/// Same pose at 1/factor resolution (intrinsics scaled, image box-filtered).
CameraPose downsample_pose(const CameraPose &pose, int factor);
TrainSet downsample_set(const TrainSet &set, int factor);

} // namespace diver
