// SPDX-License-Identifier: Apache-2.0
#include "diver/dataset.hpp"

#include <cmath>

namespace diver {

std::size_t TrainSet::ray_count() const {
    std::size_t n = 0;
    for (const auto &v : views)
        n += v.image.pixel_count();
    return n;
}

std::vector<CameraPose> TrainSet::poses() const {
    std::vector<CameraPose> out;
    out.reserve(views.size());
    for (const auto &v : views)
        out.push_back(v.pose);
    return out;
}

void TrainSet::validate() const {
    if (views.empty())
        throw ValidationError("training set has no views");
    for (std::size_t i = 0; i < views.size(); ++i) {
        views[i].pose.validate();
        if (views[i].image.width != views[i].pose.width ||
            views[i].image.height != views[i].pose.height)
            throw ValidationError("view " + std::to_string(i) + ": image size differs from camera");
    }
}

CameraPose look_at(const Vec3 &position, const Vec3 &target, const Vec3 &up, int width,
                   int height, double fov_y_deg) {
    const Vec3 forward = normalize(target - position);
    Vec3 right = cross(forward, up);
    if (length(right) < 1e-12)
        throw ValidationError("look_at: view direction parallel to up");
    right = normalize(right);
    const Vec3 down = cross(forward, right);
    CameraPose p;
    p.position = position;
    p.rotation = Mat3::from_columns(right, down, forward);
    p.width = width;
    p.height = height;
    p.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * kPi / 180.0);
    p.fx = p.fy;
    p.cx = 0.5 * width;
    p.cy = 0.5 * height;
    return p;
}

CameraPose downsample_pose(const CameraPose &pose, int factor) {
    if (factor < 1 || pose.width % factor || pose.height % factor)
        throw ValidationError("downsample factor must divide the image size");
    CameraPose p = pose;
    p.width /= factor;
    p.height /= factor;
    p.fx /= factor;
    p.fy /= factor;
    p.cx /= factor;
    p.cy /= factor;
    return p;
}

TrainSet downsample_set(const TrainSet &set, int factor) {
    TrainSet out;
    out.background = set.background;
    for (const auto &v : set.views)
        out.views.push_back({downsample_pose(v.pose, factor), downsample(v.image, factor)});
    return out;
}

} // namespace diver
