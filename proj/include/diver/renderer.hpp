// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/image.hpp"
#include "diver/integrator.hpp"
#include "diver/scene.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace diver {

/// Pinhole camera. Camera frame: x right, y down, z forward; rotation maps camera to world.
struct CameraPose {
    Vec3 position;
    Mat3 rotation;
    double fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;

    void validate() const;
};

struct Ray {
    Vec3 origin;
    Vec3 direction;
};

/// Ray through the center of pixel (px, py).
Ray generate_ray(const CameraPose &pose, int px, int py);

/// One occupied voxel crossed by a ray.
struct RayHit {
    Int3 voxel;
    double t_in = 0;
    double t_out = 0;
    Vec3 x0; ///< local entry point in [0,1]^3
    Vec3 x1; ///< local exit point in [0,1]^3
};

/// Walks the occupied voxels along a ray in increasing t. The occupancy pyramid is used
/// only to find the first occupied voxel; afterwards the walk is a plain 3D-DDA.
class VoxelTraversal {
  public:
    VoxelTraversal(const OccupancyMask &occupancy, const OctreePyramid &octree,
                   const WorldTransform &transform, const Vec3 &origin, const Vec3 &direction,
                   double t_start = 0.0);

    std::optional<RayHit> next();

  private:
    bool find_first(std::size_t level, const Int3 &cell);
    bool cell_span(const Int3 &lo, const Int3 &hi, double &ta, double &tb) const;

    const OccupancyMask *occ_;
    const OctreePyramid *oct_;
    GridDims dims_;
    Vec3 og_, dg_, inv_;
    Int3 step_{};
    double t0_ = 0, t1_ = 0;
    double t_cur_ = 0;
    Int3 voxel_{};
    bool active_ = false;
};

std::vector<RayHit> traverse(const OccupancyMask &occupancy, const OctreePyramid &octree,
                             const WorldTransform &transform, const Vec3 &origin,
                             const Vec3 &direction, double t_start = 0.0);
inline std::vector<RayHit> traverse(const FeatureGrid &grid, const WorldTransform &transform,
                                    const Vec3 &origin, const Vec3 &direction,
                                    double t_start = 0.0) {
    return traverse(grid.occupancy(), grid.octree(), transform, origin, direction, t_start);
}

/// Closed-form interval records for every occupied voxel crossed by the ray.
std::vector<IntervalRecord> deterministic_records(const FeatureGrid &grid,
                                                  const WorldTransform &transform, const Ray &ray);

struct RenderConfig {
    double tau_t = 0.01;       ///< transmittance cutoff; 0 disables early termination
    int max_hits_per_pass = 16;
    Rgb background{1, 1, 1};
    bool white_background = true;
    bool fused = true;         ///< pre-multiplied features + composed layers
    int threads = 0;           ///< 0: default_thread_count()

    Rgb effective_background() const { return white_background ? Rgb{1, 1, 1} : background; }
    void validate() const;
};

/// Front-to-back alpha compositing with early termination.
class Compositor {
  public:
    explicit Compositor(double tau_t) : tau_t_(tau_t) {}

    /// Color is only needed when alpha reaches the cutoff.
    bool wants_color(Real alpha) const { return alpha >= tau_t_; }
    /// Adds one interval; `color` may be null when !wants_color(alpha).
    void add(Real alpha, const Rgb *color);
    bool done() const { return done_; }
    Real transmittance() const { return T_; }
    Rgb finish(const Rgb &background) const;

  private:
    double tau_t_;
    Rgb acc_{};
    Real T_ = 1;
    bool done_ = false;
};

struct Interval {
    Real sigma = 0;
    Rgb color{};
};

struct CompositeResult {
    Rgb rgb{};
    Real transmittance = 1;
};

/// c = sum_i prod_{j<i}(1 - a_j) a_i c_i + T bg with a_i = 1 - exp(-sigma_i).
CompositeResult composite(std::span<const Interval> intervals, double tau_t, const Rgb &background);

struct RenderStats {
    std::uint64_t rays = 0;
    std::uint64_t mlp_calls = 0;   ///< intervals whose density was evaluated
    std::uint64_t color_calls = 0; ///< intervals whose color was evaluated
    double millis = 0;
};

struct RenderOutput {
    Image image;
    std::vector<float> transmittance;
    RenderStats stats;
};

/// Decoder-ready view of a scene (effective features, optional layer fusion). Holds
/// references to the scene, which must outlive it. Immutable; safe to share across threads.
class SceneRenderer {
  public:
    SceneRenderer(const Scene &scene, bool fused);
    SceneRenderer(const CompositeScene &scene, bool fused);
    ~SceneRenderer();
    SceneRenderer(SceneRenderer &&) noexcept;
    SceneRenderer &operator=(SceneRenderer &&) noexcept;

    RenderOutput render(const CameraPose &pose, const RenderConfig &config) const;
    CompositeResult render_ray(const Ray &ray, const RenderConfig &config,
                               RenderStats *stats = nullptr) const;
    /// Calls visit(voxel, blended_weight) for every interval along the ray, without
    /// early termination.
    void visit_blended_weights(const Ray &ray,
                               const std::function<void(const Int3 &, Real)> &visit) const;

    struct Impl;

  private:
    std::unique_ptr<Impl> impl_;
};

RenderOutput render_image(const Scene &scene, const CameraPose &pose, const RenderConfig &config);
RenderOutput render_image(const CompositeScene &scene, const CameraPose &pose,
                          const RenderConfig &config);

/// Single ray, same arithmetic as render_image.
CompositeResult render_ray(const Scene &scene, const Ray &ray, const RenderConfig &config,
                           RenderStats *stats = nullptr);

/// Per voxel, the largest prod_{j<i}(1 - a_j) a_i over all pixels of all poses
/// (no early termination). Unvisited voxels get 0.
std::vector<float> record_max_blended_alpha(const Scene &scene, std::span<const CameraPose> poses,
                                            int threads = 0);

/// Effective decoder input features (tanh applied when the scene uses the tanh mapping).
FeatureGrid effective_grid(const Scene &scene);

} // namespace diver
