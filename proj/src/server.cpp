// SPDX-License-Identifier: Apache-2.0
#include "diver/server.hpp"

#include "diver/editor.hpp"
#include "diver/image.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <sstream>

namespace diver {

namespace {

using json = nlohmann::json;

std::string variant_name(const DecoderShape &shape) {
    if (shape.hidden == 32 && shape.dir_bands == kDecoderDirBands)
        return "diver32";
    if (shape.hidden == 64 && shape.dir_bands == kDecoderDirBands)
        return "diver64";
    return "custom-h" + std::to_string(shape.hidden);
}

const char *encoding_name(FeatureEncoding e) { return e == FeatureEncoding::U8Tanh ? "u8tanh" : "f32"; }

HttpResponse json_response(int status, const json &body) {
    return {status, "application/json", body.dump(), {}};
}

HttpResponse error_response(int status, const std::string &message) {
    return json_response(status, json{{"error", message}});
}

json parse_body(const std::string &body) {
    try {
        return json::parse(body);
    } catch (const json::exception &e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
}

template <class T> T field(const json &j, const char *key) {
    if (!j.is_object() || !j.contains(key))
        throw ValidationError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &) {
        throw ValidationError(std::string("field '") + key + "' has the wrong type");
    }
}

template <class T> T field_or(const json &j, const char *key, T fallback) {
    return j.is_object() && j.contains(key) ? field<T>(j, key) : fallback;
}

Int3 int3_field(const json &j, const char *key) {
    const auto v = field<std::vector<int>>(j, key);
    if (v.size() != 3)
        throw ValidationError(std::string("field '") + key + "' must have 3 entries");
    return {v[0], v[1], v[2]};
}

Cuboid cuboid_field(const json &j, const char *key) {
    if (!j.is_object() || !j.contains(key))
        throw ValidationError(std::string("missing field '") + key + "'");
    return {int3_field(j.at(key), "min"), int3_field(j.at(key), "max")};
}

} // namespace

// ---------------------------------------------------------------------------
// Snapshots and registry

std::shared_ptr<const SceneSnapshot> SceneSnapshot::make(Scene scene, FeatureEncoding encoding) {
    scene.validate();
    auto s = std::make_shared<SceneSnapshot>();
    s->scene = std::make_shared<const Scene>(std::move(scene));
    s->renderer = std::make_shared<const SceneRenderer>(*s->scene, true);
    s->encoding = encoding;
    return s;
}

std::shared_ptr<const SceneSnapshot> SceneSnapshot::make(CompositeScene scene) {
    auto s = std::make_shared<SceneSnapshot>();
    s->composite = std::make_shared<const CompositeScene>(std::move(scene));
    s->renderer = std::make_shared<const SceneRenderer>(*s->composite, true);
    return s;
}

GridDims SceneSnapshot::dims() const { return scene ? scene->grid.dims() : composite->dims; }

json SceneSnapshot::info() const {
    const GridDims d = dims();
    json j{{"dims", {d.nx, d.ny, d.nz}}};
    if (scene) {
        j["kind"] = "scene";
        j["feature_dim"] = scene->grid.feature_dim();
        j["occupied_voxels"] = scene->grid.occupied_voxel_count();
        j["active_vertices"] = scene->grid.active_vertex_count();
        j["decoder_variant"] = variant_name(scene->decoder.shape());
        j["encoding"] = encoding_name(encoding);
        j["voxel_size"] = scene->transform.voxel_size;
        j["origin"] = {scene->transform.origin.x, scene->transform.origin.y, scene->transform.origin.z};
    } else {
        std::size_t active = 0;
        for (const auto &s : composite->sources)
            active += s.grid.active_vertex_count();
        const auto &first = composite->sources.front();
        j["kind"] = "composite";
        j["feature_dim"] = first.grid.feature_dim();
        j["occupied_voxels"] = composite->occupied_voxel_count();
        j["active_vertices"] = active;
        j["decoder_variant"] = variant_name(first.decoder.shape());
        j["encoding"] = encoding_name(encoding);
        j["sources"] = composite->sources.size();
        j["voxel_size"] = composite->transform.voxel_size;
        j["origin"] = {composite->transform.origin.x, composite->transform.origin.y,
                       composite->transform.origin.z};
    }
    return j;
}

bool SceneRegistry::valid_id(const std::string &id) {
    if (id.empty() || id.size() > 128)
        return false;
    for (char c : id)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
            return false;
    return true;
}

void SceneRegistry::put(const std::string &id, std::shared_ptr<const SceneSnapshot> snapshot) {
    if (!valid_id(id))
        throw ValidationError("invalid scene id '" + id + "'");
    std::lock_guard lock(mutex_);
    scenes_[id] = std::move(snapshot);
}

std::string SceneRegistry::add(std::shared_ptr<const SceneSnapshot> snapshot, const std::string &prefix) {
    std::lock_guard lock(mutex_);
    std::string id;
    do {
        id = prefix + std::to_string(next_++);
    } while (scenes_.count(id));
    scenes_[id] = std::move(snapshot);
    return id;
}

std::shared_ptr<const SceneSnapshot> SceneRegistry::get(const std::string &id) const {
    std::lock_guard lock(mutex_);
    const auto it = scenes_.find(id);
    return it == scenes_.end() ? nullptr : it->second;
}

std::vector<std::string> SceneRegistry::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto &kv : scenes_)
        out.push_back(kv.first);
    return out;
}

// ---------------------------------------------------------------------------
// Requests

Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
    Mat3 r;
    r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
           2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    return r;
}

std::array<double, 4> matrix_to_quaternion(const Mat3 &r) {
    // Shepperd's method: pivot on the largest of w, x, y, z.
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    std::array<double, 4> q;
    if (tr > 0) {
        const double s = 2 * std::sqrt(1 + tr);
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = 2 * std::sqrt(1 + r(0, 0) - r(1, 1) - r(2, 2));
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        const double s = 2 * std::sqrt(1 + r(1, 1) - r(0, 0) - r(2, 2));
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = 2 * std::sqrt(1 + r(2, 2) - r(0, 0) - r(1, 1));
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    if (q[0] < 0)
        for (double &v : q)
            v = -v;
    return q;
}

CameraPose parse_pose(const json &body) {
    CameraPose pose;
    const auto pos = field<std::vector<double>>(body, "position");
    const auto q = field<std::vector<double>>(body, "quaternion");
    if (pos.size() != 3)
        throw ValidationError("position must have 3 entries");
    if (q.size() != 4)
        throw ValidationError("quaternion must have 4 entries (w, x, y, z)");
    for (double v : pos)
        if (!std::isfinite(v))
            throw ValidationError("position must be finite");
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (!std::isfinite(n) || n < 1e-12)
        throw ValidationError("quaternion must be finite and nonzero");
    pose.position = {pos[0], pos[1], pos[2]};
    pose.rotation = quaternion_to_matrix(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    pose.width = field<int>(body, "width");
    pose.height = field<int>(body, "height");
    if (pose.width < 1 || pose.height < 1)
        throw ValidationError("width and height must be positive");
    pose.fx = field<double>(body, "fx");
    pose.fy = field<double>(body, "fy");
    pose.cx = field_or<double>(body, "cx", 0.5 * pose.width);
    pose.cy = field_or<double>(body, "cy", 0.5 * pose.height);
    if (!std::isfinite(pose.cx) || !std::isfinite(pose.cy))
        throw ValidationError("principal point must be finite");
    pose.validate();
    return pose;
}

json pose_to_json(const CameraPose &pose) {
    const auto q = matrix_to_quaternion(pose.rotation);
    return {{"position", {pose.position.x, pose.position.y, pose.position.z}},
            {"quaternion", {q[0], q[1], q[2], q[3]}},
            {"fx", pose.fx},
            {"fy", pose.fy},
            {"cx", pose.cx},
            {"cy", pose.cy},
            {"width", pose.width},
            {"height", pose.height}};
}

RenderRequest RenderRequest::parse(const json &body) {
    RenderRequest r;
    r.scene = field<std::string>(body, "scene");
    // The pose may be nested under "pose" or given at the top level.
    r.pose = parse_pose(body.contains("pose") ? body.at("pose") : body);
    if (body.contains("quality")) {
        const json &q = body.at("quality");
        r.tau_t = field_or<double>(q, "tau_t", r.tau_t);
        r.max_resolution = field_or<int>(q, "max_resolution", 0);
    }
    if (!(r.tau_t >= 0 && r.tau_t < 1))
        throw ValidationError("tau_t must lie in [0, 1)");
    if (r.max_resolution < 0)
        throw ValidationError("max_resolution must be non-negative");
    return r;
}

CameraPose RenderRequest::effective_pose() const {
    const int longer = std::max(pose.width, pose.height);
    if (max_resolution == 0 || longer <= max_resolution)
        return pose;
    const double s = double(max_resolution) / longer;
    CameraPose p = pose;
    p.width = std::max(1, int(std::lround(pose.width * s)));
    p.height = std::max(1, int(std::lround(pose.height * s)));
    const double sx = double(p.width) / pose.width, sy = double(p.height) / pose.height;
    p.fx *= sx;
    p.cx *= sx;
    p.fy *= sy;
    p.cy *= sy;
    return p;
}

// ---------------------------------------------------------------------------
// Service

Service::Service(SceneRegistry &registry, ServerConfig config)
    : registry_(&registry), config_(std::move(config)) {}

HttpResponse Service::render(const std::string &body) const {
    RenderRequest req;
    try {
        req = RenderRequest::parse(parse_body(body));
    } catch (const Error &e) {
        return error_response(400, e.what());
    }
    const auto snap = registry_->get(req.scene);
    if (!snap)
        return error_response(404, "unknown scene '" + req.scene + "'");
    const CameraPose pose = req.effective_pose();
    if (std::size_t(pose.width) * std::size_t(pose.height) > config_.max_pixels)
        return error_response(413, "resolution " + std::to_string(pose.width) + "x" +
                                       std::to_string(pose.height) + " exceeds the limit of " +
                                       std::to_string(config_.max_pixels) + " pixels");
    RenderConfig cfg;
    cfg.tau_t = req.tau_t;
    cfg.threads = config_.render_threads;
    const RenderOutput out = snap->renderer->render(pose, cfg);
    const auto png = encode_png(out.image);
    HttpResponse r{200, "image/png", std::string(png.begin(), png.end()), {}};
    std::ostringstream ms;
    ms.precision(3);
    ms << std::fixed << out.stats.millis;
    r.headers = {{"X-Render-Millis", ms.str()},
                 {"X-Rays", std::to_string(out.stats.rays)},
                 {"X-MLP-Calls", std::to_string(out.stats.mlp_calls)},
                 {"X-Color-Calls", std::to_string(out.stats.color_calls)},
                 {"X-Image-Size", std::to_string(pose.width) + "x" + std::to_string(pose.height)}};
    return r;
}

HttpResponse Service::info(const std::string &id) const {
    const auto snap = SceneRegistry::valid_id(id) ? registry_->get(id) : nullptr;
    if (!snap)
        return error_response(404, "unknown scene '" + id + "'");
    json j = snap->info();
    j["id"] = id;
    return json_response(200, j);
}

HttpResponse Service::list() const { return json_response(200, json{{"scenes", registry_->ids()}}); }

HttpResponse Service::swap(const std::string &body) {
    try {
        const json j = parse_body(body);
        const auto id = field<std::string>(j, "scene");
        const auto snap = registry_->get(id);
        if (!snap)
            return error_response(404, "unknown scene '" + id + "'");
        if (!snap->scene)
            return error_response(400, "swap needs a plain scene, '" + id + "' is a composite");
        Scene edited = swap_objects(*snap->scene, cuboid_field(j, "a"), cuboid_field(j, "b"),
                                    field_or<int>(j, "k", kDefaultSwapClusters),
                                    field_or<std::uint64_t>(j, "seed", 0));
        const std::string new_id = registry_->add(SceneSnapshot::make(std::move(edited), snap->encoding));
        return json_response(200, json{{"id", new_id}});
    } catch (const Error &e) {
        return error_response(400, e.what());
    }
}

HttpResponse Service::blend(const std::string &body) {
    try {
        const json j = parse_body(body);
        const auto ids = field<std::vector<std::string>>(j, "scenes");
        const auto offs = field<std::vector<std::vector<int>>>(j, "offsets");
        std::vector<Scene> scenes;
        std::vector<Int3> offsets;
        for (const auto &id : ids) {
            const auto snap = registry_->get(id);
            if (!snap)
                return error_response(404, "unknown scene '" + id + "'");
            if (!snap->scene)
                return error_response(400, "blend sources must be plain scenes, '" + id + "' is a composite");
            scenes.push_back(*snap->scene);
        }
        for (const auto &o : offs) {
            if (o.size() != 3)
                throw ValidationError("each offset must have 3 entries");
            offsets.push_back({o[0], o[1], o[2]});
        }
        CompositeScene c = blend_scenes(scenes, offsets);
        const std::string new_id = registry_->add(SceneSnapshot::make(std::move(c)));
        return json_response(200, json{{"id", new_id}});
    } catch (const Error &e) {
        return error_response(400, e.what());
    }
}

// ---------------------------------------------------------------------------
// HTTP front end

struct HttpServer::Impl {
    Service service;
    httplib::Server http;
    std::atomic<bool> running{false};

    Impl(SceneRegistry &registry, ServerConfig config) : service(registry, std::move(config)) {}
};

namespace {

void send(httplib::Response &res, const HttpResponse &r) {
    res.status = r.status;
    for (const auto &[k, v] : r.headers)
        res.set_header(k, v);
    res.set_content(r.body, r.content_type);
}

} // namespace

HttpServer::HttpServer(SceneRegistry &registry, ServerConfig config)
    : impl_(std::make_unique<Impl>(registry, std::move(config))) {
    auto &http = impl_->http;
    Service &svc = impl_->service;
    http.Post("/render", [&svc](const httplib::Request &req, httplib::Response &res) {
        send(res, svc.render(req.body));
    });
    http.Get(R"(/scene/([^/]+)/info)", [&svc](const httplib::Request &req, httplib::Response &res) {
        send(res, svc.info(req.matches[1]));
    });
    http.Get("/scenes", [&svc](const httplib::Request &, httplib::Response &res) { send(res, svc.list()); });
    http.Post("/edit/swap", [&svc](const httplib::Request &req, httplib::Response &res) {
        send(res, svc.swap(req.body));
    });
    http.Post("/edit/blend", [&svc](const httplib::Request &req, httplib::Response &res) {
        send(res, svc.blend(req.body));
    });
    http.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
        std::string msg = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception &e) {
            msg = e.what();
        } catch (...) {
        }
        send(res, error_response(500, msg));
    });
    if (!svc.config().static_dir.empty() && !http.set_mount_point("/", svc.config().static_dir))
        throw ValidationError("static directory '" + svc.config().static_dir + "' does not exist");
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    const auto &cfg = impl_->service.config();
    if (cfg.port == 0)
        return impl_->http.bind_to_any_port(cfg.host);
    return impl_->http.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
}

bool HttpServer::serve() {
    impl_->running = true;
    const bool ok = impl_->http.listen_after_bind();
    impl_->running = false;
    return ok;
}

void HttpServer::stop() {
    if (impl_)
        impl_->http.stop();
}

bool HttpServer::running() const { return impl_->running && impl_->http.is_running(); }

} // namespace diver
