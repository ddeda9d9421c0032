// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/common.hpp"

#include <span>

namespace diver {

/// Clamp tolerance for voxel-local entry/exit points.
inline constexpr double kLocalEpsilon = 1e-6;

/// One ray interval inside a unit voxel: entry/exit in voxel-local coordinates
/// plus the world-space ray parameters they correspond to.
struct LocalSegment {
    Vec3 x0;
    Vec3 x1;
    double t_in = 0;
    double t_out = 0;
};

/// Integrals X_1..X_8 of the trilinear basis along a segment (stored 0-based).
using BasisWeights = std::array<double, 8>;

/// One decoder evaluation along a ray: the voxel, the weights applied to its 8 corner
/// features, and the factor turning the decoded density into an optical depth
/// (1 for closed-form intervals, the sample spacing in voxel units for point samples).
struct IntervalRecord {
    Int3 voxel{};
    BasisWeights weights{};
    double scale = 1;
};

/// Clamps each component into [0,1]. Points further than kLocalEpsilon outside are
/// still clamped; they only arise from misuse.
Vec3 clamp_local(const Vec3 &p);

/// Trilinear basis function chi_k for k in 1..8. Corner of chi_k is
/// ((k-1)&1, (k-1)>>1&1, (k-1)>>2&1). Throws std::logic_error for other k.
double chi(int k, const Vec3 &p);

/// All eight basis values at p.
BasisWeights chi_all(const Vec3 &p);

/// X_k = integral over t in [0,1] of chi_k((1-t) x0 + t x1), closed form.
BasisWeights basis_integral(const Vec3 &x0, const Vec3 &x1);
inline BasisWeights basis_integral(const LocalSegment &seg) {
    return basis_integral(seg.x0, seg.x1);
}

/// Same integrals by n-point Gauss-Legendre quadrature on [0,1].
BasisWeights basis_integral_quadrature(const Vec3 &x0, const Vec3 &x1, int n_points);

/// Gauss-Legendre nodes and weights mapped to [0,1].
void gauss_legendre_unit(int n_points, std::span<double> nodes, std::span<double> weights);

/// out = sum_k X_k f_k. All spans must share one length.
void integrate_features(const std::array<std::span<const Real>, 8> &corners,
                        const BasisWeights &weights, std::span<Real> out);

} // namespace diver
