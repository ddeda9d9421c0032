// SPDX-License-Identifier: Apache-2.0
#include "diver/scene.hpp"

#include <cmath>

namespace diver {

void Scene::validate() const {
    grid.dims().validate();
    if (!(transform.voxel_size > 0) || !std::isfinite(transform.voxel_size))
        throw ValidationError("voxel size must be positive and finite");
    if (grid.feature_dim() != decoder.shape().feature_dim)
        throw DimensionError("grid feature width " + std::to_string(grid.feature_dim()) +
                             " does not match decoder input " +
                             std::to_string(decoder.shape().feature_dim));
    if (decoder.params().size() != decoder.shape().parameter_count())
        throw ValidationError("decoder parameter count does not match its shape");
    try {
        grid.check_invariants();
    } catch (const std::logic_error &e) {
        throw ValidationError(e.what());
    }
}

} // namespace diver
