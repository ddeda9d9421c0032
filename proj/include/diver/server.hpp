// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/renderer.hpp"
#include "diver/scene_io.hpp"

#include <json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace diver {

/// An immutable registry entry: a plain or composite scene plus its prepared renderer.
struct SceneSnapshot {
    std::shared_ptr<const Scene> scene;         ///< set for plain scenes
    std::shared_ptr<const CompositeScene> composite; ///< set for blended scenes
    std::shared_ptr<const SceneRenderer> renderer;   ///< fused renderer over the above
    FeatureEncoding encoding = FeatureEncoding::F32;

    static std::shared_ptr<const SceneSnapshot> make(Scene scene,
                                                     FeatureEncoding encoding = FeatureEncoding::F32);
    static std::shared_ptr<const SceneSnapshot> make(CompositeScene scene);

    GridDims dims() const;
    nlohmann::json info() const;
};

/// Scene id -> snapshot. Lookups hand out shared pointers, so a render keeps its snapshot
/// alive even when the id is later rebound.
class SceneRegistry {
  public:
    /// Binds `id` (replacing any previous binding). Ids are non-empty [A-Za-z0-9_.-].
    void put(const std::string &id, std::shared_ptr<const SceneSnapshot> snapshot);
    /// Stores under a fresh id "<prefix><n>" and returns it.
    std::string add(std::shared_ptr<const SceneSnapshot> snapshot, const std::string &prefix = "edit-");
    std::shared_ptr<const SceneSnapshot> get(const std::string &id) const;
    std::vector<std::string> ids() const;

    static bool valid_id(const std::string &id);

  private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const SceneSnapshot>> scenes_;
    std::uint64_t next_ = 1;
};

/// Rotation (camera to world) from a unit quaternion w, x, y, z.
Mat3 quaternion_to_matrix(double w, double x, double y, double z);

/// Unit quaternion (w, x, y, z) of a rotation matrix.
std::array<double, 4> matrix_to_quaternion(const Mat3 &r);

/// Pose from {position, quaternion (w, x, y, z), fx, fy, cx?, cy?, width, height}. The
/// quaternion is renormalized; zero or non-finite quaternions throw ValidationError.
CameraPose parse_pose(const nlohmann::json &j);
nlohmann::json pose_to_json(const CameraPose &pose);

/// Parsed POST /render body {scene, pose | pose fields, quality?: {tau_t, max_resolution}}.
/// Throws ValidationError on malformed or invalid fields.
struct RenderRequest {
    std::string scene;
    CameraPose pose;
    double tau_t = 0.01;
    int max_resolution = 0; ///< 0: no cap; otherwise the longer side is scaled down to it

    static RenderRequest parse(const nlohmann::json &body);
    /// Pose after applying max_resolution.
    CameraPose effective_pose() const;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t max_pixels = 2048 * 2048; ///< larger requests get 413
    std::string static_dir;                ///< served at / when non-empty
    int render_threads = 0;
};

/// Transport-independent response.
struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

/// Endpoint logic, callable without sockets.
class Service {
  public:
    Service(SceneRegistry &registry, ServerConfig config);

    HttpResponse render(const std::string &body) const;
    HttpResponse info(const std::string &id) const;
    HttpResponse list() const;
    HttpResponse swap(const std::string &body);
    HttpResponse blend(const std::string &body);

    const ServerConfig &config() const { return config_; }

  private:
    SceneRegistry *registry_;
    ServerConfig config_;
};

/// HTTP front end (cpp-httplib) over a Service.
class HttpServer {
  public:
    HttpServer(SceneRegistry &registry, ServerConfig config);
    ~HttpServer();

    /// Binds host:port (port 0 picks a free one) and returns the bound port, or -1.
    int bind();
    /// Serves until stop(); call after bind().
    bool serve();
    void stop();
    bool running() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace diver
