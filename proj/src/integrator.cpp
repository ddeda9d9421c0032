// SPDX-License-Identifier: Apache-2.0
#include "diver/integrator.hpp"

#include <algorithm>
#include <mutex>
#include <map>
#include <vector>

namespace diver {

Vec3 clamp_local(const Vec3 &p) {
    return {std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0), std::clamp(p.z, 0.0, 1.0)};
}

double chi(int k, const Vec3 &p) {
    if (k < 1 || k > 8)
        throw std::logic_error("chi: basis index must be in 1..8");
    const int c = k - 1;
    const double wx = (c & 1) ? p.x : 1.0 - p.x;
    const double wy = (c & 2) ? p.y : 1.0 - p.y;
    const double wz = (c & 4) ? p.z : 1.0 - p.z;
    return wx * wy * wz;
}

BasisWeights chi_all(const Vec3 &p) {
    const double x = p.x, y = p.y, z = p.z;
    const double ux = 1.0 - x, uy = 1.0 - y, uz = 1.0 - z;
    return {ux * uy * uz, x * uy * uz, ux * y * uz, x * y * uz,
            ux * uy * z,  x * uy * z,  ux * y * z,  x * y * z};
}

BasisWeights basis_integral(const Vec3 &p0, const Vec3 &p1) {
    const double x0 = p0.x, y0 = p0.y, z0 = p0.z;
    const double x1 = p1.x, y1 = p1.y, z1 = p1.z;
    const double a = x0 + x1;
    const double b = y0 + y1;
    const double c = z0 + z1;
    // d = integral of y*z, e = integral of x*y along the segment.
    const double d = (b * c + y0 * z0 + y1 * z1) / 6.0;
    const double e = (a * b + x0 * y0 + x1 * y1) / 6.0;

    BasisWeights X;
    X[7] = (2.0 * x0 * y0 * z0 + 2.0 * x1 * y1 * z1 + a * b * c) / 12.0;
    X[6] = d - X[7];
    X[5] = (a * c + x0 * z0 + x1 * z1) / 6.0 - X[7];
    X[4] = c / 2.0 - X[5] - d;
    X[3] = e - X[7];
    X[2] = b / 2.0 - X[6] - e;
    X[1] = a / 2.0 - X[5] - e;
    X[0] = 1.0 - (a + b) / 2.0 - X[4] + e;
    return X;
}

namespace {

void legendre_nodes(int n, std::vector<double> &nodes, std::vector<double> &weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double pp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            const double step = p1 / pp;
            z -= step;
            if (std::abs(step) <= 1e-16)
                break;
        }
        // Nodes on [-1,1] are -z and z; map to [0,1].
        const double w = 1.0 / ((1.0 - z * z) * pp * pp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = weights[n - 1 - i] = w;
    }
}

struct QuadratureTable {
    std::vector<double> nodes, weights;
};

const QuadratureTable &quadrature_table(int n) {
    static std::mutex mutex;
    static std::map<int, QuadratureTable> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
        QuadratureTable t;
        legendre_nodes(n, t.nodes, t.weights);
        it = cache.emplace(n, std::move(t)).first;
    }
    return it->second;
}

} // namespace

void gauss_legendre_unit(int n_points, std::span<double> nodes, std::span<double> weights) {
    if (n_points < 1 || nodes.size() != std::size_t(n_points) ||
        weights.size() != std::size_t(n_points))
        throw ValidationError("gauss_legendre_unit: need n_points >= 1 and matching spans");
    const auto &t = quadrature_table(n_points);
    std::copy(t.nodes.begin(), t.nodes.end(), nodes.begin());
    std::copy(t.weights.begin(), t.weights.end(), weights.begin());
}

BasisWeights basis_integral_quadrature(const Vec3 &x0, const Vec3 &x1, int n_points) {
    if (n_points < 1)
        throw ValidationError("basis_integral_quadrature: n_points must be >= 1");
    const auto &t = quadrature_table(n_points);
    BasisWeights X{};
    for (int i = 0; i < n_points; ++i) {
        const double s = t.nodes[i];
        const BasisWeights v = chi_all(x0 * (1.0 - s) + x1 * s);
        for (int k = 0; k < 8; ++k)
            X[k] += t.weights[i] * v[k];
    }
    return X;
}

void integrate_features(const std::array<std::span<const Real>, 8> &corners,
                        const BasisWeights &weights, std::span<Real> out) {
    const std::size_t n = out.size();
    for (const auto &c : corners)
        if (c.size() != n)
            throw DimensionError("integrate_features: corner feature width mismatch");
    std::fill(out.begin(), out.end(), Real(0));
    for (int k = 0; k < 8; ++k) {
        const Real w = weights[k];
        const Real *f = corners[k].data();
        for (std::size_t j = 0; j < n; ++j)
            out[j] += w * f[j];
    }
}

} // namespace diver
