// SPDX-License-Identifier: Apache-2.0
// diver: train, render, benchmark, verify, edit and serve sparse voxel radiance fields.
#include "diver/editor.hpp"
#include "diver/image.hpp"
#include "diver/parallel.hpp"
#include "diver/renderer.hpp"
#include "diver/scene_io.hpp"
#include "diver/server.hpp"
#include "diver/toy_scene.hpp"
#include "diver/trainer.hpp"
#include "diver/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace diver;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitVerification = 2;

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw ValidationError("'" + path.string() + "': " + e.what());
    }
}

struct AnyScene {
    std::optional<Scene> scene;
    std::optional<CompositeScene> composite;
    FeatureEncoding encoding = FeatureEncoding::F32;
};

AnyScene load_any(const fs::path &path) {
    if (!fs::exists(path))
        throw ValidationError("scene file '" + path.string() + "' does not exist");
    AnyScene out;
    if (file_magic(path) == "DIVC") {
        out.composite = load_composite(path);
    } else {
        const auto bytes = read_file(path);
        out.scene = parse_scene(bytes);
        if (bytes.size() > 20 && bytes[20] == std::uint8_t(FeatureEncoding::U8Tanh))
            out.encoding = FeatureEncoding::U8Tanh;
    }
    return out;
}

RenderOutput render_any(const AnyScene &s, const CameraPose &pose, const RenderConfig &cfg) {
    return s.scene ? render_image(*s.scene, pose, cfg) : render_image(*s.composite, pose, cfg);
}

Int3 parse_int3(const std::vector<int> &v, const std::string &what) {
    if (v.size() != 3)
        throw ValidationError(what + " needs 3 integers");
    return {v[0], v[1], v[2]};
}

Cuboid parse_cuboid(const std::vector<int> &v, const std::string &what) {
    if (v.size() != 6)
        throw ValidationError(what + " needs 6 integers: x0 y0 z0 x1 y1 z1");
    return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

// Pose lists: a JSON array (or {"poses": [...]}) of pose objects; an optional "image"
// names a ground-truth PNG relative to the file.
struct PoseEntry {
    CameraPose pose;
    std::optional<fs::path> image;
};

std::vector<PoseEntry> read_pose_list(const fs::path &path) {
    const json j = read_json(path);
    const json &arr = j.is_object() && j.contains("poses") ? j.at("poses") : j;
    if (!arr.is_array())
        throw ValidationError("'" + path.string() + "' must hold an array of poses");
    std::vector<PoseEntry> out;
    for (const auto &e : arr) {
        PoseEntry p{parse_pose(e), std::nullopt};
        if (e.contains("image"))
            p.image = path.parent_path() / e.at("image").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

TrainSet load_dataset(const json &ds, const fs::path &base, int threads) {
    const std::string type = ds.value("type", "toy");
    if (type == "toy")
        return toy_train_set(ds.value("views", 8), ds.value("size", 64), threads);
    if (type == "poses") {
        TrainSet set;
        for (auto &e : read_pose_list(base / ds.at("file").get<std::string>())) {
            if (!e.image)
                throw ValidationError("training poses need an \"image\" entry");
            set.views.push_back({e.pose, read_png(*e.image)});
        }
        if (ds.contains("background")) {
            const auto bg = ds.at("background").get<std::vector<double>>();
            if (bg.size() != 3)
                throw ValidationError("background needs 3 entries");
            set.background = {bg[0], bg[1], bg[2]};
        }
        set.validate();
        return set;
    }
    throw ValidationError("unknown dataset type '" + type + "'");
}

PipelineConfig pipeline_from_json(const json &j) {
    PipelineConfig c;
    if (j.contains("fine_dims")) {
        const auto d = j.at("fine_dims").get<std::vector<int>>();
        if (d.size() != 3)
            throw ValidationError("fine_dims needs 3 entries");
        c.fine_dims = {d[0], d[1], d[2]};
    }
    if (j.contains("origin")) {
        const auto o = j.at("origin").get<std::vector<double>>();
        if (o.size() != 3)
            throw ValidationError("origin needs 3 entries");
        c.transform.origin = {o[0], o[1], o[2]};
    }
    c.transform.voxel_size = j.value("voxel_size", c.transform.voxel_size);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    const std::string variant = j.value("variant", std::string("diver32"));
    if (variant == "diver32")
        c.variant = DecoderVariant::Diver32;
    else if (variant == "diver64")
        c.variant = DecoderVariant::Diver64;
    else
        throw ValidationError("unknown decoder variant '" + variant + "'");
    c.tanh_features = j.value("tanh_features", c.tanh_features);
    c.coarse_factor = j.value("coarse_factor", c.coarse_factor);
    c.lr_coarse = j.value("lr_coarse", c.lr_coarse);
    c.lr_fine = j.value("lr_fine", c.lr_fine);
    c.lambda_s = j.value("lambda_s", c.lambda_s);
    c.coarse_steps = j.value("coarse_steps", c.coarse_steps);
    c.fine_steps = j.value("fine_steps", c.fine_steps);
    c.batch_rays = j.value("batch_rays", c.batch_rays);
    c.implicit_init = j.value("implicit_init", c.implicit_init);
    c.implicit.steps = j.value("implicit_steps", c.implicit.steps);
    c.feature_init_std = j.value("feature_init_std", c.feature_init_std);
    c.tau_vis = j.value("tau_vis", c.tau_vis);
    const std::string integ = j.value("integrator", std::string("deterministic"));
    if (integ == "deterministic")
        c.integrator = IntegratorKind::Deterministic;
    else if (integ == "stochastic")
        c.integrator = IntegratorKind::Stochastic;
    else
        throw ValidationError("unknown integrator '" + integ + "'");
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

int cmd_train(const fs::path &config_path, const std::string &out_override, int threads, bool quiet) {
    const json cfg = read_json(config_path);
    const fs::path base = config_path.parent_path();
    PipelineConfig pc = pipeline_from_json(cfg.value("pipeline", json::object()));
    pc.threads = threads;
    if (!quiet)
        pc.on_step = [](const std::string &stage, int step, double loss) {
            if (step % 100 == 0)
                std::cerr << stage << " step " << step << " loss " << loss << "\n";
        };
    const TrainSet set = load_dataset(cfg.value("dataset", json{{"type", "toy"}}), base, threads);
    const PipelineResult r = coarse_to_fine(set, pc);
    const fs::path out = out_override.empty() ? base / cfg.value("output", std::string("scene.divr"))
                                              : fs::path(out_override);
    const std::string enc = cfg.value("encoding", std::string("f32"));
    if (enc != "f32" && enc != "u8tanh")
        throw ValidationError("unknown encoding '" + enc + "'");
    save_scene(r.scene, out, enc == "u8tanh" ? FeatureEncoding::U8Tanh : FeatureEncoding::F32);
    RenderConfig rc;
    rc.threads = threads;
    const auto psnrs = evaluate_psnr(r.scene, set, rc);
    double mean = 0;
    for (double p : psnrs)
        mean += p / psnrs.size();
    json report{{"output", out.string()},
                {"train_psnr", mean},
                {"occupied_voxels", r.scene.grid.occupied_voxel_count()},
                {"active_vertices", r.scene.grid.active_vertex_count()},
                {"fine_occupied_before_cull", r.fine_occupied_before_cull}};
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_render(const fs::path &scene_path, const fs::path &poses_path, int orbit, int size,
               const fs::path &out_dir, double tau_t, int threads) {
    const AnyScene s = load_any(scene_path);
    std::vector<PoseEntry> poses;
    if (!poses_path.empty())
        poses = read_pose_list(poses_path);
    else
        for (const auto &p : toy_ring_poses(orbit, 25.0, 10.0, size, size))
            poses.push_back({p, std::nullopt});
    fs::create_directories(out_dir);
    RenderConfig cfg;
    cfg.tau_t = tau_t;
    cfg.threads = threads;
    json report = json::array();
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const RenderOutput r = render_any(s, poses[i].pose, cfg);
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        write_png(out_dir / name, r.image);
        json e{{"file", (out_dir / name).string()}, {"millis", r.stats.millis},
               {"mlp_calls", r.stats.mlp_calls}};
        if (poses[i].image) {
            const Image gt = read_png(*poses[i].image);
            e["psnr"] = psnr(r.image, gt);
            e["ssim"] = ssim(r.image, gt);
        }
        report.push_back(e);
    }
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_bench(const fs::path &scene_path, int width, int height, int frames, double tau_t, int threads) {
    AnyScene s;
    if (scene_path.empty())
        s.scene = make_random_scene(toy_grid_dims(), DecoderShape::for_variant(DecoderVariant::Diver32, 32),
                                    0.3, 1.0, 1, toy_transform());
    else
        s = load_any(scene_path);
    const auto poses = toy_ring_poses(frames, 25.0, 10.0, width, height);
    RenderConfig cfg;
    cfg.tau_t = tau_t;
    cfg.threads = threads;
    std::uint64_t rays = 0, mlp = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto &p : poses) {
        const RenderOutput r = render_any(s, p, cfg);
        rays += r.stats.rays;
        mlp += r.stats.mlp_calls;
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json report{{"width", width},         {"height", height},
                {"frames", frames},       {"seconds", sec},
                {"rays_per_s", rays / sec}, {"mlp_calls_per_s", mlp / sec},
                {"fps", frames / sec},    {"threads", threads > 0 ? threads : default_thread_count()}};
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_verify(const std::string &suite, std::uint64_t seed, int threads) {
    const auto results = run_suite(suite, seed, threads);
    json out = summarize(results);
    if (suite == "mc") {
        // Flat report for the MC suite.
        out = results.front().report;
        out["pass"] = results.front().pass;
    }
    std::cout << out.dump(2) << "\n";
    return out.at("pass").get<bool>() ? kExitOk : kExitVerification;
}

int cmd_swap(const fs::path &scene_path, const std::vector<int> &a, const std::vector<int> &b, int k,
             std::uint64_t seed, const fs::path &out) {
    const AnyScene s = load_any(scene_path);
    if (!s.scene)
        throw ValidationError("swap needs a plain scene file");
    const Scene edited = swap_objects(*s.scene, parse_cuboid(a, "--a"), parse_cuboid(b, "--b"), k, seed);
    save_scene(edited, out);
    std::cout << json{{"output", out.string()}}.dump() << "\n";
    return kExitOk;
}

int cmd_blend(const std::vector<std::string> &paths, const std::vector<int> &offsets, const fs::path &out) {
    if (offsets.size() != 3 * paths.size())
        throw ValidationError("blend needs one --offset triple per --scene");
    std::vector<Scene> scenes;
    std::vector<Int3> offs;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        AnyScene s = load_any(paths[i]);
        if (!s.scene)
            throw ValidationError("blend sources must be plain scene files");
        scenes.push_back(std::move(*s.scene));
        offs.push_back(parse_int3({offsets[3 * i], offsets[3 * i + 1], offsets[3 * i + 2]}, "--offset"));
    }
    const CompositeScene c = blend_scenes(scenes, offs);
    save_composite(c, out);
    std::cout << json{{"output", out.string()}, {"occupied_voxels", c.occupied_voxel_count()}}.dump()
              << "\n";
    return kExitOk;
}

HttpServer *g_server = nullptr;

void on_signal(int) {
    if (g_server)
        g_server->stop();
}

int cmd_serve(const std::vector<std::string> &scenes, const ServerConfig &cfg) {
    SceneRegistry registry;
    for (const auto &spec : scenes) {
        const auto eq = spec.find('=');
        const std::string id = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
        const fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
        AnyScene s = load_any(path);
        registry.put(id, s.scene ? SceneSnapshot::make(std::move(*s.scene), s.encoding)
                                 : SceneSnapshot::make(std::move(*s.composite)));
        std::cerr << "loaded '" << id << "' from " << path << "\n";
    }
    HttpServer server(registry, cfg);
    const int port = server.bind();
    if (port < 0)
        throw ValidationError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    std::cerr << "listening on http://" << cfg.host << ":" << port << "\n";
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.serve();
    g_server = nullptr;
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"diver: deterministic voxel radiance fields"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: automatic)");

    auto *train = app.add_subcommand("train", "Coarse-to-fine training from a JSON config");
    std::string train_config, train_out;
    bool quiet = false;
    train->add_option("config", train_config, "Config file")->required();
    train->add_option("-o,--out", train_out, "Output scene file (overrides the config)");
    train->add_flag("-q,--quiet", quiet, "No progress output");

    auto *render = app.add_subcommand("render", "Render a pose list to PNGs");
    std::string r_scene, r_poses, r_out = "renders";
    int r_orbit = 8, r_size = 64;
    double r_tau = 0.01;
    render->add_option("--scene", r_scene, "Scene or composite file")->required();
    render->add_option("--poses", r_poses, "JSON pose list (entries may name a ground-truth image)");
    render->add_option("--orbit", r_orbit, "Ring of views when no pose list is given");
    render->add_option("--size", r_size, "Image size for --orbit");
    render->add_option("-o,--out", r_out, "Output directory");
    render->add_option("--tau-t", r_tau, "Transmittance cutoff");

    auto *bench = app.add_subcommand("bench", "Rendering throughput");
    std::string b_scene;
    int b_w = 128, b_h = 128, b_frames = 8;
    double b_tau = 0.01;
    bench->add_option("--scene", b_scene, "Scene file (default: built-in random scene)");
    bench->add_option("--width", b_w);
    bench->add_option("--height", b_h);
    bench->add_option("--frames", b_frames);
    bench->add_option("--tau-t", b_tau);

    auto *verify = app.add_subcommand("verify", "Run self-check suites");
    std::string v_suite = "all";
    std::uint64_t v_seed = 1;
    verify->add_option("suite", v_suite, "all|quadrature|gradients|fusion|mc|conservation");
    verify->add_option("--seed", v_seed);

    auto *edit = app.add_subcommand("edit", "Scene editing");
    edit->require_subcommand(1);
    auto *swap = edit->add_subcommand("swap", "Exchange the objects in two cuboids");
    std::string s_scene, s_out;
    std::vector<int> s_a, s_b;
    int s_k = kDefaultSwapClusters;
    std::uint64_t s_seed = 0;
    swap->add_option("--scene", s_scene)->required();
    swap->add_option("--a", s_a, "x0 y0 z0 x1 y1 z1 (inclusive voxels)")->required()->expected(6);
    swap->add_option("--b", s_b, "x0 y0 z0 x1 y1 z1 (inclusive voxels)")->required()->expected(6);
    swap->add_option("-k,--clusters", s_k);
    swap->add_option("--seed", s_seed);
    swap->add_option("-o,--out", s_out)->required();
    auto *blend = edit->add_subcommand("blend", "Place several scenes into one grid");
    std::vector<std::string> bl_scenes;
    std::vector<int> bl_offsets;
    std::string bl_out;
    blend->add_option("--scene", bl_scenes)->required();
    blend->add_option("--offset", bl_offsets, "x y z voxel offset per scene")->required();
    blend->add_option("-o,--out", bl_out)->required();

    auto *serve = app.add_subcommand("serve", "HTTP render and edit service");
    std::vector<std::string> sv_scenes;
    ServerConfig sv;
    serve->add_option("--scene", sv_scenes, "[id=]path, repeatable");
    serve->add_option("--host", sv.host);
    serve->add_option("--port", sv.port);
    serve->add_option("--static", sv.static_dir, "Directory served at /");
    serve->add_option("--max-pixels", sv.max_pixels);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*train)
            return cmd_train(train_config, train_out, threads, quiet);
        if (*render)
            return cmd_render(r_scene, r_poses, r_orbit, r_size, r_out, r_tau, threads);
        if (*bench)
            return cmd_bench(b_scene, b_w, b_h, b_frames, b_tau, threads);
        if (*verify)
            return cmd_verify(v_suite, v_seed, threads);
        if (*swap)
            return cmd_swap(s_scene, s_a, s_b, s_k, s_seed, s_out);
        if (*blend)
            return cmd_blend(bl_scenes, bl_offsets, bl_out);
        if (*serve) {
            sv.render_threads = threads;
            return cmd_serve(sv_scenes, sv);
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
