// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/dataset.hpp"
#include "diver/scene.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace diver {

/// L = sum ||rendered - target||^2 over flat RGB arrays; grad (if non-empty) receives
/// 2 (rendered - target). Throws DimensionError on size mismatch.
double photometric_loss(std::span<const Real> rendered, std::span<const Real> target,
                        std::span<Real> grad = {});

/// L = lambda_s sum log(1 + sigma^2 / 0.5); grad (if non-empty) receives dL/dsigma.
double sparsity_loss(std::span<const Real> sigmas, double lambda_s, std::span<Real> grad = {});

enum class IntegratorKind { Deterministic, Stochastic };
const char *to_string(IntegratorKind k);

struct TrainConfig {
    double learning_rate = 5e-4;
    double lambda_s = 1e-5;
    int batch_rays = 1024;
    int steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    /// Stochastic: one jittered point sample per occupied interval, so both integrators
    /// make the same number of decoder calls.
    IntegratorKind integrator = IntegratorKind::Deterministic;
    int threads = 0;
    /// Called after every step with (step, batch loss).
    std::function<void(int, double)> on_step;

    void validate() const;
};

/// Gradient of one ray's loss (photometric + per-interval sparsity).
struct RayGradients {
    double loss = 0;
    Rgb rgb{};
    std::map<std::uint32_t, std::vector<Real>> features; ///< pool slot -> d loss / d raw feature
    std::vector<Real> decoder;                            ///< d loss / d decoder params
};

/// Exact reverse-mode gradient of one ray through compositing, decoder and feature
/// integration (no early termination, background from `background`).
RayGradients backprop_ray(const Scene &scene, const Ray &ray, const Rgb &target, double lambda_s,
                          const Rgb &background = {1, 1, 1});

/// Same forward arithmetic as backprop_ray: color of one ray without early termination.
Rgb training_forward(const Scene &scene, const Ray &ray, const Rgb &background = {1, 1, 1});

struct TrainHistory {
    std::vector<double> loss; ///< mean per-ray loss of each step's batch
};

/// Adam on the pool features (lazy per-row moments) and the decoder weights. Each epoch
/// visits every training pixel once in a seeded random order.
TrainHistory train_explicit(Scene &scene, const TrainSet &set, const TrainConfig &config);

/// Coordinate network used for the implicit initialization: positional encoding of the
/// vertex position normalized to [0,1]^3, ReLU hidden layers, linear output of width F.
struct ImplicitInitConfig {
    int n_bands = 10;
    int hidden = 64;
    int layers = 2; ///< hidden layers
    int steps = 500;
    double learning_rate = 1e-3;
    double output_scale = 0.1; ///< initial scale of the output layer
};

/// Small ReLU MLP with its own reverse pass.
class ImplicitField {
  public:
    ImplicitField(GridDims dims, int feature_dim, const ImplicitInitConfig &config,
                  std::uint64_t seed);

    int feature_dim() const { return out_dim_; }
    std::size_t parameter_count() const { return params_.size(); }
    std::span<Real> params() { return params_; }
    std::span<const Real> params() const { return params_; }

    void feature(const Int3 &vertex, std::span<Real> out) const;
    /// Accumulates d/dparams of <grad_out, feature(vertex)> into grad.
    void backward(const Int3 &vertex, std::span<const Real> grad_out, std::span<Real> grad) const;
    /// Writes feature(vertex) into every active vertex of the grid.
    void materialize(FeatureGrid &grid) const;

  private:
    std::vector<Real> encode(const Int3 &vertex) const;

    GridDims dims_;
    int n_bands_;
    int out_dim_;
    std::vector<int> sizes_;
    std::vector<std::size_t> offsets_;
    std::vector<Real> params_;
};

/// Trains an implicit field and the decoder jointly through the render loss, then writes
/// the field into the grid. The field itself is discarded. Returns the loss history.
TrainHistory init_implicit(Scene &scene, const ImplicitInitConfig &init, const TrainSet &set,
                           const TrainConfig &config, ImplicitField *field_out = nullptr);

struct PipelineConfig {
    GridDims fine_dims{16, 16, 16};
    WorldTransform transform{{-1, -1, -1}, 0.125};
    int feature_dim = 32;
    DecoderVariant variant = DecoderVariant::Diver32;
    bool tanh_features = false;
    int coarse_factor = 4;
    double lr_coarse = 1e-3;
    double lr_fine = 5e-4;
    double lambda_s = 1e-5;
    int coarse_steps = 500;
    int fine_steps = 2000;
    int batch_rays = 1024;
    bool implicit_init = true;
    ImplicitInitConfig implicit;
    double feature_init_std = 0.01;
    double tau_vis = 0.01;
    IntegratorKind integrator = IntegratorKind::Deterministic;
    std::uint64_t seed = 1;
    int threads = 0;
    bool keep_uncull = false; ///< also return the fine scene before the final cull
    std::function<void(const std::string &stage, int step, double loss)> on_step;

    void validate() const;
};

struct PipelineResult {
    Scene scene;
    Scene coarse;
    std::optional<Scene> fine_before_cull; ///< set when keep_uncull
    TrainHistory coarse_history;
    TrainHistory implicit_history;
    TrainHistory fine_history;
    std::size_t coarse_occupied_after_cull = 0;
    std::size_t fine_occupied_before_cull = 0;
    std::size_t fine_occupied_after_cull = 0;
};

/// Fresh scene with every voxel occupied and IID normal features.
Scene make_dense_scene(GridDims dims, const WorldTransform &transform, int feature_dim,
                       DecoderVariant variant, double feature_std, std::uint64_t seed,
                       bool tanh_features = false);

/// Coarse stage at 1/coarse_factor grid and image resolution, cull, upsample, fresh fine
/// stage on the surviving voxels, final cull.
PipelineResult coarse_to_fine(const TrainSet &set, const PipelineConfig &config);

/// Per-view PSNR of render_image against the set's images (tau_t from `render`).
std::vector<double> evaluate_psnr(const Scene &scene, const TrainSet &set,
                                  const RenderConfig &render = {});

} // namespace diver
