// SPDX-License-Identifier: Apache-2.0
#include "diver/editor.hpp"
#include "diver/image.hpp"
#include "diver/integrator.hpp"
#include "diver/mc_reference.hpp"
#include "diver/renderer.hpp"
#include "diver/scene_io.hpp"
#include "diver/server.hpp"
#include "diver/toy_scene.hpp"
#include "diver/verify.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace diver;

namespace {

Vec3 vec3(const std::array<double, 3> &a) { return {a[0], a[1], a[2]}; }

py::array_t<float> to_array(const Image &img) {
    py::array_t<float> out({img.height, img.width, 3});
    std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
    return out;
}

Image from_array(const py::array_t<float, py::array::c_style | py::array::forcecast> &a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw DimensionError("image array must have shape (height, width, 3)");
    Image img(int(a.shape(1)), int(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
    return img;
}

CameraPose pose_from_json_string(const std::string &s) { return parse_pose(nlohmann::json::parse(s)); }

py::tuple render_scene(const Scene &scene, const CameraPose &pose, double tau_t, bool fused, int threads) {
    RenderConfig cfg;
    cfg.tau_t = tau_t;
    cfg.fused = fused;
    cfg.threads = threads;
    const RenderOutput out = render_image(scene, pose, cfg);
    py::dict stats;
    stats["rays"] = out.stats.rays;
    stats["mlp_calls"] = out.stats.mlp_calls;
    stats["color_calls"] = out.stats.color_calls;
    stats["millis"] = out.stats.millis;
    return py::make_tuple(to_array(out.image), stats);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deterministic voxel radiance field renderer";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<RangeError>(m, "RangeError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    m.def("basis_integral",
          [](const std::array<double, 3> &x0, const std::array<double, 3> &x1) {
              const BasisWeights w = basis_integral(vec3(x0), vec3(x1));
              return std::vector<double>(w.begin(), w.end());
          },
          py::arg("x0"), py::arg("x1"), "Normalized integrals of the 8 trilinear basis functions.");
    m.def("chi", [](int k, const std::array<double, 3> &p) { return chi(k, vec3(p)); }, py::arg("k"),
          py::arg("p"));

    py::class_<CameraPose>(m, "CameraPose")
        .def_readwrite("fx", &CameraPose::fx)
        .def_readwrite("fy", &CameraPose::fy)
        .def_readwrite("cx", &CameraPose::cx)
        .def_readwrite("cy", &CameraPose::cy)
        .def_readwrite("width", &CameraPose::width)
        .def_readwrite("height", &CameraPose::height)
        .def_property_readonly("position",
                               [](const CameraPose &p) {
                                   return std::array<double, 3>{p.position.x, p.position.y, p.position.z};
                               })
        .def("to_json", [](const CameraPose &p) { return pose_to_json(p).dump(); });
    m.def("look_at",
          [](const std::array<double, 3> &pos, const std::array<double, 3> &target,
             const std::array<double, 3> &up, int w, int h, double fov) {
              return look_at(vec3(pos), vec3(target), vec3(up), w, h, fov);
          },
          py::arg("position"), py::arg("target"), py::arg("up"), py::arg("width"), py::arg("height"),
          py::arg("fov_y_deg"));
    m.def("pose_from_json", &pose_from_json_string, py::arg("text"));

    py::class_<Scene>(m, "Scene")
        .def_property_readonly("dims",
                               [](const Scene &s) {
                                   const GridDims d = s.grid.dims();
                                   return std::array<int, 3>{d.nx, d.ny, d.nz};
                               })
        .def_property_readonly("feature_dim", [](const Scene &s) { return s.grid.feature_dim(); })
        .def_property_readonly("occupied_voxels", [](const Scene &s) { return s.grid.occupied_voxel_count(); })
        .def_property_readonly("active_vertices", [](const Scene &s) { return s.grid.active_vertex_count(); })
        .def_property_readonly("voxel_size", [](const Scene &s) { return s.transform.voxel_size; })
        .def_readwrite("tanh_features", &Scene::tanh_features)
        .def("features",
             [](const Scene &s) {
                 const auto pool = s.grid.pool();
                 py::array_t<double> out({py::ssize_t(s.grid.active_vertex_count()), py::ssize_t(s.grid.feature_dim())});
                 std::copy(pool.begin(), pool.end(), out.mutable_data());
                 return out;
             })
        .def("info", [](const Scene &s) { return SceneSnapshot::make(s)->info().dump(); });

    m.def("load_scene", &load_scene, py::arg("path"));
    m.def("save_scene",
          [](const Scene &s, const std::filesystem::path &p, bool u8) {
              save_scene(s, p, u8 ? FeatureEncoding::U8Tanh : FeatureEncoding::F32);
          },
          py::arg("scene"), py::arg("path"), py::arg("u8_tanh") = false);
    m.def("serialize_scene",
          [](const Scene &s, bool u8) {
              const auto b = serialize_scene(s, u8 ? FeatureEncoding::U8Tanh : FeatureEncoding::F32);
              return py::bytes(reinterpret_cast<const char *>(b.data()), b.size());
          },
          py::arg("scene"), py::arg("u8_tanh") = false);
    m.def("parse_scene", [](const py::bytes &b) {
        const std::string s = b;
        return parse_scene(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
    });
    m.def("make_random_scene",
          [](const std::array<int, 3> &dims, int feature_dim, int hidden, double fill, double feature_std,
             std::uint64_t seed) {
              return make_random_scene({dims[0], dims[1], dims[2]}, {feature_dim, hidden}, fill, feature_std, seed);
          },
          py::arg("dims"), py::arg("feature_dim") = 32, py::arg("hidden") = 32, py::arg("fill") = 0.5,
          py::arg("feature_std") = 1.0, py::arg("seed") = 1);
    m.def("make_two_object_scene",
          [](const std::array<int, 3> &dims, const std::array<int, 3> &a0, const std::array<int, 3> &b0, int size) {
              return make_two_object_scene({dims[0], dims[1], dims[2]}, {a0[0], a0[1], a0[2]}, {b0[0], b0[1], b0[2]},
                                           size);
          },
          py::arg("dims"), py::arg("a0"), py::arg("b0"), py::arg("size"));

    m.def("render", &render_scene, py::arg("scene"), py::arg("pose"), py::arg("tau_t") = 0.01,
          py::arg("fused") = true, py::arg("threads") = 0,
          "Returns (image float32 array (h, w, 3), stats dict).");
    m.def("mc_render",
          [](const Scene &s, const CameraPose &pose, int n, std::uint64_t seed) {
              RenderConfig cfg;
              cfg.tau_t = 0;
              return to_array(mc_render_image(s, pose, n, seed, cfg).image);
          },
          py::arg("scene"), py::arg("pose"), py::arg("n_samples") = 32, py::arg("seed") = 1);
    m.def("encode_png",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast> &a) {
              const auto b = encode_png(from_array(a));
              return py::bytes(reinterpret_cast<const char *>(b.data()), b.size());
          },
          py::arg("image"));
    m.def("psnr", [](const py::array_t<float, py::array::c_style | py::array::forcecast> &a,
                     const py::array_t<float, py::array::c_style | py::array::forcecast> &b) {
        return psnr(from_array(a), from_array(b));
    });
    m.def("ssim", [](const py::array_t<float, py::array::c_style | py::array::forcecast> &a,
                     const py::array_t<float, py::array::c_style | py::array::forcecast> &b) {
        return ssim(from_array(a), from_array(b));
    });

    m.def("swap_objects",
          [](const Scene &s, const std::array<int, 6> &a, const std::array<int, 6> &b, int k, std::uint64_t seed) {
              const Cuboid ca{{a[0], a[1], a[2]}, {a[3], a[4], a[5]}};
              const Cuboid cb{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
              return swap_objects(s, ca, cb, k, seed);
          },
          py::arg("scene"), py::arg("a"), py::arg("b"), py::arg("k") = kDefaultSwapClusters, py::arg("seed") = 0,
          "Cuboids are (x0, y0, z0, x1, y1, z1) inclusive voxel boxes.");

    m.def("variance_law_check",
          [](int power, int n, std::size_t m_reps, std::uint64_t seed) {
              const VarianceReport r = variance_law_check(integrand_power(power), n, m_reps, seed);
              py::dict d;
              d["mean"] = r.stats.sample_mean;
              d["variance"] = r.stats.sample_variance;
              d["predicted_variance"] = r.predicted_variance;
              d["pass"] = r.pass;
              return d;
          },
          py::arg("power") = 1, py::arg("n") = 16, py::arg("replications") = 100000, py::arg("seed") = 1,
          "Uniform MC on f(t) = t^power: replication statistics against C / N.");

    m.def("suite_names", &suite_names);
    m.def("run_suite",
          [](const std::string &name, std::uint64_t seed) {
              const auto results = run_suite(name, seed);
              return summarize(results).dump();
          },
          py::arg("name") = "all", py::arg("seed") = 1, "Returns the JSON summary as a string.");
}
