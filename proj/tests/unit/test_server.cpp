// SPDX-License-Identifier: Apache-2.0
#include "diver/dataset.hpp"
#include "diver/image.hpp"
#include "diver/random.hpp"
#include "diver/server.hpp"
#include "diver/toy_scene.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <thread>

namespace diver {
namespace {

using nlohmann::json;

Scene cubes() { return make_two_object_scene({12, 6, 6}, {1, 2, 2}, {7, 2, 2}, 2); }

json pose_body(const std::string &scene, int w = 24, int h = 16) {
    const CameraPose p = look_at({6, -8, 6}, {6, 3, 2}, {0, 0, 1}, w, h, 50);
    return {{"scene", scene}, {"pose", pose_to_json(p)}, {"quality", {{"tau_t", 0.01}}}};
}

std::string header(const HttpResponse &r, const std::string &key) {
    for (const auto &[k, v] : r.headers)
        if (k == key)
            return v;
    return {};
}

struct ServiceTest : ::testing::Test {
    SceneRegistry registry;
    ServerConfig config;
    void SetUp() override {
        registry.put("cubes", SceneSnapshot::make(cubes()));
        registry.put("empty", SceneSnapshot::make(make_fixture_scene({3, 3, 3}, {}, {})));
        config.max_pixels = 64 * 64;
        config.render_threads = 2;
    }
};

TEST(Pose, QuaternionRoundTrip) {
    CounterRng rng(1, 0);
    for (int i = 0; i < 200; ++i) {
        double q[4];
        double n = 0;
        for (double &v : q) {
            v = rng.normal();
            n += v * v;
        }
        n = std::sqrt(n);
        if (q[0] < 0)
            n = -n;
        const Mat3 r = quaternion_to_matrix(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                EXPECT_NEAR(dot(r.column(a), r.column(b)), a == b ? 1.0 : 0.0, 1e-12);
        const auto back = matrix_to_quaternion(r);
        for (int k = 0; k < 4; ++k)
            EXPECT_NEAR(back[k], q[k] / n, 1e-9);
    }
}

TEST(Pose, ParseRenormalizesAndRejects) {
    json j = pose_to_json(look_at({1, 2, 3}, {0, 0, 0}, {0, 0, 1}, 8, 6, 40));
    const CameraPose a = parse_pose(j);
    for (auto &v : j["quaternion"])
        v = double(v) * 3.0;
    const CameraPose b = parse_pose(j);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(a.rotation(r, c), b.rotation(r, c), 1e-12);
    j["quaternion"] = {0, 0, 0, 0};
    EXPECT_THROW(parse_pose(j), ValidationError);
    j["quaternion"] = {1, 0, 0};
    EXPECT_THROW(parse_pose(j), ValidationError);
    json k = pose_to_json(a);
    k.erase("cx");
    k.erase("cy");
    EXPECT_EQ(parse_pose(k).cx, 4.0);
    k["width"] = 0;
    EXPECT_THROW(parse_pose(k), ValidationError);
}

TEST(Registry, IdsAndSnapshotIsolation) {
    SceneRegistry reg;
    EXPECT_TRUE(SceneRegistry::valid_id("toy_1.v2-a"));
    EXPECT_FALSE(SceneRegistry::valid_id(""));
    EXPECT_FALSE(SceneRegistry::valid_id("a/b"));
    EXPECT_FALSE(SceneRegistry::valid_id(std::string(200, 'a')));
    EXPECT_THROW(reg.put("bad id", SceneSnapshot::make(cubes())), ValidationError);
    reg.put("s", SceneSnapshot::make(cubes()));
    const auto held = reg.get("s");
    reg.put("s", SceneSnapshot::make(make_fixture_scene({3, 3, 3}, {}, {})));
    EXPECT_EQ(held->scene->grid.occupied_voxel_count(), cubes().grid.occupied_voxel_count());
    EXPECT_EQ(reg.get("s")->scene->grid.occupied_voxel_count(), 0u);
    const std::string id = reg.add(held);
    EXPECT_NE(id, "s");
    EXPECT_EQ(reg.get(id), held);
    EXPECT_EQ(reg.ids().size(), 2u);
}

TEST_F(ServiceTest, RenderMatchesRenderImage) {
    Service svc(registry, config);
    const HttpResponse a = svc.render(pose_body("cubes").dump());
    ASSERT_EQ(a.status, 200) << a.body;
    EXPECT_EQ(a.content_type, "image/png");
    EXPECT_EQ(svc.render(pose_body("cubes").dump()).body, a.body);

    RenderConfig cfg;
    cfg.tau_t = 0.01;
    cfg.threads = 1;
    const CameraPose pose = parse_pose(pose_body("cubes")["pose"]);
    const RenderOutput ref = render_image(cubes(), pose, cfg);
    const auto png = encode_png(ref.image);
    EXPECT_EQ(a.body, std::string(png.begin(), png.end()));
    EXPECT_EQ(header(a, "X-Rays"), std::to_string(ref.stats.rays));
    EXPECT_EQ(header(a, "X-MLP-Calls"), std::to_string(ref.stats.mlp_calls));
    EXPECT_EQ(header(a, "X-Color-Calls"), std::to_string(ref.stats.color_calls));
    EXPECT_EQ(header(a, "X-Image-Size"), "24x16");
    EXPECT_FALSE(header(a, "X-Render-Millis").empty());
}

TEST_F(ServiceTest, RenderErrors) {
    Service svc(registry, config);
    json bad = pose_body("cubes");
    bad["pose"]["quaternion"] = {0, 0, 0, 0};
    EXPECT_EQ(svc.render(bad.dump()).status, 400);
    EXPECT_EQ(svc.render("{not json").status, 400);
    EXPECT_EQ(svc.render(json{{"scene", "cubes"}}.dump()).status, 400);
    EXPECT_EQ(svc.render(pose_body("nope").dump()).status, 404);
    EXPECT_EQ(svc.render(pose_body("cubes", 65, 64).dump()).status, 413);
    json capped = pose_body("cubes", 200, 100);
    capped["quality"]["max_resolution"] = 32;
    const HttpResponse r = svc.render(capped.dump());
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(header(r, "X-Image-Size"), "32x16");
}

TEST_F(ServiceTest, Info) {
    Service svc(registry, config);
    const Scene s = cubes();
    const json j = json::parse(svc.info("cubes").body);
    EXPECT_EQ(j["dims"], json({12, 6, 6}));
    EXPECT_EQ(j["feature_dim"], s.grid.feature_dim());
    EXPECT_EQ(j["occupied_voxels"], s.grid.occupied_voxel_count());
    EXPECT_EQ(j["active_vertices"], s.grid.active_vertex_count());
    EXPECT_EQ(j["encoding"], "f32");
    EXPECT_EQ(json::parse(svc.info("empty").body)["occupied_voxels"], 0);
    EXPECT_EQ(svc.info("missing").status, 404);
    EXPECT_EQ(svc.info("../etc").status, 404);
    const json l = json::parse(svc.list().body);
    EXPECT_EQ(l["scenes"], json({"cubes", "empty"}));
}

TEST_F(ServiceTest, FixtureInfoCounts) {
    registry.put("fixture", SceneSnapshot::make(load_scene(std::filesystem::path(DIVER_TEST_DATA) / "fixture.divr")));
    Service svc(registry, config);
    const json j = json::parse(svc.info("fixture").body);
    EXPECT_EQ(j["occupied_voxels"], 2);
    EXPECT_EQ(j["active_vertices"], 15);
    EXPECT_EQ(j["feature_dim"], 4);
    EXPECT_EQ(j["decoder_variant"], "diver32");
}

TEST_F(ServiceTest, SwapEdits) {
    Service svc(registry, config);
    const json a{{"min", {0, 0, 0}}, {"max", {4, 5, 5}}}, b{{"min", {6, 0, 0}}, {"max", {10, 5, 5}}};
    const HttpResponse self = svc.swap(json{{"scene", "cubes"}, {"a", a}, {"b", a}}.dump());
    ASSERT_EQ(self.status, 200) << self.body;
    const std::string self_id = json::parse(self.body)["id"];
    EXPECT_EQ(svc.render(pose_body(self_id).dump()).body, svc.render(pose_body("cubes").dump()).body);

    const HttpResponse once = svc.swap(json{{"scene", "cubes"}, {"a", a}, {"b", b}}.dump());
    ASSERT_EQ(once.status, 200) << once.body;
    const std::string id1 = json::parse(once.body)["id"];
    const std::string img0 = svc.render(pose_body("cubes").dump()).body;
    EXPECT_NE(svc.render(pose_body(id1).dump()).body, img0);
    const HttpResponse twice = svc.swap(json{{"scene", id1}, {"a", a}, {"b", b}}.dump());
    const std::string id2 = json::parse(twice.body)["id"];
    EXPECT_EQ(svc.render(pose_body(id2).dump()).body, img0);
    // The source snapshot is untouched.
    EXPECT_EQ(svc.render(pose_body("cubes").dump()).body, img0);

    const json overlap{{"min", {2, 0, 0}}, {"max", {6, 5, 5}}};
    const HttpResponse err = svc.swap(json{{"scene", "cubes"}, {"a", a}, {"b", overlap}}.dump());
    EXPECT_EQ(err.status, 400);
    EXPECT_NE(json::parse(err.body)["error"].get<std::string>().find("overlap"), std::string::npos);
    EXPECT_EQ(svc.swap(json{{"scene", "zzz"}, {"a", a}, {"b", b}}.dump()).status, 404);
}

TEST_F(ServiceTest, BlendEdits) {
    const std::vector<Int3> occ_a{{0, 0, 0}, {1, 0, 0}, {1, 1, 1}};
    const std::vector<Int3> occ_b{{0, 0, 0}, {2, 2, 2}};
    registry.put("fa", SceneSnapshot::make(make_fixture_scene({3, 3, 3}, occ_a, {}, {32, 32})));
    registry.put("fb", SceneSnapshot::make(make_fixture_scene({3, 3, 3}, occ_b, {}, {32, 32})));
    Service svc(registry, config);
    // Offset (1,0,0) maps b's voxel (0,0,0) onto a's voxel (1,0,0): one overlap.
    const HttpResponse r =
        svc.blend(json{{"scenes", {"fa", "fb"}}, {"offsets", {{0, 0, 0}, {1, 0, 0}}}}.dump());
    ASSERT_EQ(r.status, 200) << r.body;
    const json info = json::parse(svc.info(json::parse(r.body)["id"]).body);
    EXPECT_EQ(info["kind"], "composite");
    EXPECT_EQ(info["occupied_voxels"], 3 + 2 - 1);
    EXPECT_EQ(info["dims"], json({4, 3, 3}));
    EXPECT_EQ(svc.blend(json{{"scenes", {"fa", "cubes"}}, {"offsets", {{0, 0, 0}, {4, 0, 0}}}}.dump()).status,
              400);
    EXPECT_EQ(svc.blend(json{{"scenes", {"fa"}}, {"offsets", {{-1, 0, 0}}}}.dump()).status, 400);
}

TEST_F(ServiceTest, OverHttp) {
    HttpServer server(registry, {"127.0.0.1", 0, 64 * 64, "", 1});
    const int port = server.bind();
    ASSERT_GT(port, 0);
    std::thread th([&] { server.serve(); });
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);
    const auto r = cli.Post("/render", pose_body("cubes").dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
    EXPECT_FALSE(r->get_header_value("X-MLP-Calls").empty());
    EXPECT_EQ(r->body.substr(1, 3), "PNG");
    const auto i = cli.Get("/scene/cubes/info");
    ASSERT_TRUE(i);
    EXPECT_EQ(i->status, 200);
    EXPECT_EQ(json::parse(i->body)["feature_dim"], 8);
    EXPECT_EQ(cli.Get("/scene/nope/info")->status, 404);
    EXPECT_EQ(cli.Post("/render", "{}", "application/json")->status, 400);
    const auto l = cli.Get("/scenes");
    ASSERT_TRUE(l);
    EXPECT_EQ(json::parse(l->body)["scenes"].size(), 2u);
    server.stop();
    th.join();
    EXPECT_FALSE(server.running());
}

} // namespace
} // namespace diver
