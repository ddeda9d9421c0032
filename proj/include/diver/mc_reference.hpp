// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/random.hpp"
#include "diver/renderer.hpp"

#include <functional>
#include <optional>
#include <string>

namespace diver {

/// A scalar integrand on [0,1] with optional analytic moments I = int f, I2 = int f^2.
struct Integrand1D {
    std::function<double(double)> f;
    std::optional<double> I;
    std::optional<double> I2;
    std::string name;
};

Integrand1D integrand_constant(double c);
Integrand1D integrand_power(int p); ///< f(t) = t^p

/// Sampling density on [0,1] with its inverse CDF.
struct ImportanceDensity {
    std::function<double(double)> pdf;
    std::function<double(double)> inverse_cdf;
    std::string name;
};

ImportanceDensity density_uniform();
ImportanceDensity density_linear(); ///< P(t) = 2t

enum class Estimator { Uniform, Importance };
const char *to_string(Estimator e);

/// Plain MC: (1/N) sum f(t_i), t_i ~ U(0,1) from CounterRng(seed, stream).
double mc_uniform(const Integrand1D &f, int n, std::uint64_t seed, std::uint64_t stream = 0);

/// Importance MC: (1/N) sum f(t_i)/P(t_i), t_i = P^-1(u_i). Throws NumericError when a
/// sample lands where P = 0 but f != 0.
double mc_importance(const Integrand1D &f, const ImportanceDensity &P, int n, std::uint64_t seed,
                     std::uint64_t stream = 0);

/// Replication statistics. Replication r draws from stream r.
struct McEstimate {
    Estimator estimator = Estimator::Uniform;
    int n_samples = 0;
    std::size_t replications = 0;
    double estimate = 0; ///< first replication
    double sample_mean = 0;
    double sample_variance = 0; ///< unbiased, across replications
};

McEstimate mc_replicate(const Integrand1D &f, int n, std::size_t m, std::uint64_t seed,
                        Estimator estimator, const ImportanceDensity *P = nullptr, int threads = 0);

/// Variance-law report: predicted variance C/N against the replication statistics.
struct VarianceReport {
    McEstimate stats;
    double predicted_mean = 0;
    double predicted_variance = 0;
    double variance_rel_error = 0;
    double mean_tolerance = 0; ///< 4 sqrt(C / (N M))
    bool pass = false;
};

inline constexpr double kVarianceRelTol = 0.05;

/// Uniform estimator, C = I2 - I^2. Requires M >= 1000 and analytic moments.
VarianceReport variance_law_check(const Integrand1D &f, int n, std::size_t m, std::uint64_t seed,
                                  int threads = 0);

/// Importance estimator, C' = I2P - I^2 with I2P = int f^2 / P supplied by the caller.
/// A predicted variance of 0 requires every replication to agree exactly.
VarianceReport importance_variance_check(const Integrand1D &f, const ImportanceDensity &P,
                                         double i2p, int n, std::size_t m, std::uint64_t seed,
                                         int threads = 0);

/// Entry and exit parameters of the ray against the grid box; false when it misses.
bool grid_ray_bounds(const GridDims &dims, const WorldTransform &transform, const Ray &ray,
                     double &t_near, double &t_far);

/// Stratified point samples over the grid box: sample i sits at a jittered position in
/// the i-th of n equal strata. Only samples inside occupied voxels are returned; their
/// weights are the pointwise basis values and their scale the stratum length in voxels.
std::vector<IntervalRecord> stochastic_records(const FeatureGrid &grid,
                                               const WorldTransform &transform, const Ray &ray,
                                               int n_samples, CounterRng &rng);

/// One jittered point sample inside each occupied interval (same decoder-call count as
/// the closed-form path); scale is the interval length in voxels.
std::vector<IntervalRecord> stochastic_interval_records(const FeatureGrid &grid,
                                                        const WorldTransform &transform,
                                                        const Ray &ray, CounterRng &rng);

/// Stochastic render of one ray: stratified samples, alpha = 1 - exp(-sigma delta).
CompositeResult mc_render_ray(const Scene &scene, const Ray &ray, int n_samples,
                              std::uint64_t seed, std::uint64_t stream = 0,
                              const RenderConfig &config = {}, RenderStats *stats = nullptr);

/// Stochastic image; pixel p uses stream p.
RenderOutput mc_render_image(const Scene &scene, const CameraPose &pose, int n_samples,
                             std::uint64_t seed, const RenderConfig &config = {});

} // namespace diver
