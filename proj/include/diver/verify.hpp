// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace diver {

/// Outcome of one self-check suite run by `diver verify`.
struct SuiteResult {
    std::string name;
    bool pass = false;
    nlohmann::json report;
};

/// Pinned tolerances of the suites.
namespace verify_tol {
inline constexpr double kQuadrature = 1e-10;   ///< closed form vs 64-point Gauss-Legendre
inline constexpr double kPartition = 1e-12;    ///< |sum X_k - 1|
inline constexpr double kKnownValue = 1e-12;
inline constexpr double kGradientRel = 1e-6;   ///< |a - n| / max(|a|, |n|, kGradientFloor)
inline constexpr double kGradientFloor = 1e-3;
inline constexpr double kGradientStep = 1e-5;  ///< central-difference step
inline constexpr double kFusion = 1e-5;
inline constexpr double kConservation = 1e-6;
} // namespace verify_tol

/// Closed-form basis integrals against quadrature on random and special segments.
SuiteResult verify_quadrature(std::uint64_t seed = 1, int n_segments = 10000);

/// Analytic gradients of losses, decoder and full ray against central differences.
SuiteResult verify_gradients(std::uint64_t seed = 1);

/// Plain vs fused decoder on random inputs, and plain vs pre-multiplied full render.
SuiteResult verify_fusion(std::uint64_t seed = 1, int n_inputs = 1000, int threads = 0);

/// Variance law for f(t) = t (N = 16, M = 1e5) and zero variance for P(t) = 2t. The report
/// holds one {estimator, N, M, mean, variance, predicted_variance, pass} entry per case.
SuiteResult verify_mc(std::uint64_t seed = 1, int threads = 0);

/// Blended weights plus final transmittance equal 1 on random rays.
SuiteResult verify_conservation(std::uint64_t seed = 1, int n_rays = 10000);

/// Suite names accepted by run_suite, in the order `all` runs them.
const std::vector<std::string> &suite_names();

/// Runs one suite by name ("all" runs every suite). Throws ValidationError on unknown names.
std::vector<SuiteResult> run_suite(const std::string &name, std::uint64_t seed = 1, int threads = 0);

/// {"pass": all passed, "suites": {name: report}}.
nlohmann::json summarize(const std::vector<SuiteResult> &results);

} // namespace diver
