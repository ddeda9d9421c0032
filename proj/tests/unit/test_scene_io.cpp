// SPDX-License-Identifier: Apache-2.0
#include "diver/common.hpp"
#include "diver/editor.hpp"
#include "diver/scene_io.hpp"
#include "diver/toy_scene.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

namespace diver {
namespace {

// Deterministic two-voxel scene stored in tests/data/fixture.divr.
Scene golden_scene() {
    const std::vector<Int3> occ{{0, 0, 0}, {1, 1, 1}};
    return make_fixture_scene(
        {2, 2, 2}, occ,
        [](const Int3 &p, std::span<Real> f) {
            for (std::size_t i = 0; i < f.size(); ++i)
                f[i] = 0.25 * double(i + 1) + 0.125 * p[0] - 0.5 * p[2];
        },
        {4, 32}, {{-1.0, 0.5, 2.0}, 0.125});
}

template <class T> T read_le(const std::vector<std::uint8_t> &b, std::size_t at) {
    T v;
    std::memcpy(&v, b.data() + at, sizeof(T));
    return v;
}

TEST(SceneIo, HeaderLayout) {
    const Scene s = golden_scene();
    const auto b = serialize_scene(s);
    ASSERT_GE(b.size(), kSceneHeaderSize);
    EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "DIVR");
    EXPECT_EQ(read_le<std::uint16_t>(b, 4), kSceneVersion);
    EXPECT_EQ(read_le<std::uint32_t>(b, 6), 2u);
    EXPECT_EQ(read_le<std::uint32_t>(b, 10), 2u);
    EXPECT_EQ(read_le<std::uint32_t>(b, 14), 2u);
    EXPECT_EQ(read_le<std::uint16_t>(b, 18), 4u);
    EXPECT_EQ(b[20], 0u);
    EXPECT_EQ(b[21], 0u);
    EXPECT_EQ(read_le<std::uint64_t>(b, 22), 15u);
    EXPECT_EQ(read_le<std::uint64_t>(b, 30), 2u);
    EXPECT_EQ(read_le<std::uint64_t>(b, 38), (1ull << 0) | (1ull << 7));
    const std::size_t params = s.decoder.params().size();
    EXPECT_EQ(b.size(), kSceneHeaderSize + 8 + 15 * 4 * 4 + params * 4 + 32);
    EXPECT_EQ(read_le<double>(b, b.size() - 8), 0.125);
    EXPECT_EQ(read_le<double>(b, b.size() - 32), -1.0);
}

TEST(SceneIo, GoldenFixture) {
    const std::filesystem::path path = std::filesystem::path(DIVER_TEST_DATA) / "fixture.divr";
    const auto bytes = read_file(path);
    EXPECT_EQ(bytes, serialize_scene(golden_scene()));
    const Scene s = load_scene(path);
    EXPECT_EQ(s.grid.dims(), (GridDims{2, 2, 2}));
    EXPECT_EQ(s.grid.feature_dim(), 4);
    EXPECT_EQ(s.grid.active_vertex_count(), 15u);
    EXPECT_EQ(s.grid.occupied_voxel_count(), 2u);
    EXPECT_EQ(s.decoder.shape().variant(), DecoderVariant::Diver32);
    EXPECT_EQ(s.transform.voxel_size, 0.125);
    const auto f = s.grid.feature(s.grid.vertex_slot({2, 2, 2}));
    EXPECT_EQ(f[0], 0.25 + 0.25 - 1.0);
}

TEST(SceneIo, F32RoundTripIsByteIdentical) {
    const Scene s = make_random_scene({5, 4, 3}, {32, 32}, 0.4, 0.7, 11, {{0.1, 0.2, 0.3}, 0.05});
    const auto a = serialize_scene(s);
    const Scene t = parse_scene(a);
    t.grid.check_invariants();
    EXPECT_EQ(serialize_scene(t), a);
    EXPECT_EQ(t.grid.occupied_voxel_count(), s.grid.occupied_voxel_count());
    for (std::size_t i = 0; i < s.grid.pool().size(); ++i)
        EXPECT_EQ(t.grid.pool()[i], double(float(s.grid.pool()[i])));
}

TEST(SceneIo, FileRoundTrip) {
    const Scene s = golden_scene();
    const auto path = std::filesystem::temp_directory_path() / "diver_io_roundtrip.divr";
    save_scene(s, path);
    EXPECT_EQ(file_magic(path), "DIVR");
    EXPECT_EQ(serialize_scene(load_scene(path)), serialize_scene(s));
    std::filesystem::remove(path);
    EXPECT_THROW(load_scene(path), Error);
}

TEST(SceneIo, CorruptFilesThrowWithOffset) {
    const auto good = serialize_scene(golden_scene());
    auto bad_magic = good;
    bad_magic[1] = 'X';
    try {
        parse_scene(bad_magic);
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    auto bad_version = good;
    bad_version[4] = 99;
    try {
        parse_scene(bad_version);
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_EQ(e.offset(), 4u);
    }
    auto bad_variant = good;
    bad_variant[21] = 7;
    try {
        parse_scene(bad_variant);
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_EQ(e.offset(), 21u);
    }
    for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(20), kSceneHeaderSize, good.size() - 1}) {
        const std::vector<std::uint8_t> t(good.begin(), good.begin() + std::ptrdiff_t(cut));
        EXPECT_THROW(parse_scene(t), ParseError) << cut;
    }
    auto trailing = good;
    trailing.push_back(0);
    EXPECT_THROW(parse_scene(trailing), ParseError);

    auto wrong_active = good;
    wrong_active[22] = 14;
    EXPECT_THROW(parse_scene(wrong_active), ValidationError);
    auto wrong_occupied = good;
    wrong_occupied[30] = 3;
    EXPECT_THROW(parse_scene(wrong_occupied), ValidationError);
}

TEST(Quantize, KnownValues) {
    EXPECT_EQ(quantize_component(-1.0), 0);
    EXPECT_EQ(quantize_component(1.0), 255);
    EXPECT_EQ(quantize_component(0.0), 128);
    EXPECT_NEAR(dequantize_component(128), 1.0 / 255.0, 1e-15);
    EXPECT_EQ(dequantize_component(0), -1.0);
    EXPECT_EQ(dequantize_component(255), 1.0);
    EXPECT_EQ(quantize_component(-1.0 + 1e-9), 0);
    EXPECT_NEAR(dequantize_component(quantize_component(-1.0 + 1e-9)), -1.0, 1e-15);
}

TEST(Quantize, ErrorAtMostOneStep) {
    double worst = 0;
    for (int i = 0; i <= 200000; ++i) {
        const double s = -1.0 + 2.0 * i / 200000.0;
        worst = std::max(worst, std::abs(dequantize_component(quantize_component(s)) - s));
    }
    EXPECT_LE(worst, 1.0 / 255.0);
    EXPECT_THROW(quantize_pool(std::vector<Real>{0.0, 1.5}), ValidationError);
    EXPECT_THROW(quantize_pool(std::vector<Real>{std::nan("")}), ValidationError);
}

TEST(Quantize, U8TanhSceneRoundTrip) {
    Scene s = make_random_scene({4, 4, 4}, {32, 32}, 0.5, 1.5, 2);
    EXPECT_THROW(serialize_scene(s, FeatureEncoding::U8Tanh), ValidationError);
    s.tanh_features = true;
    const auto b = serialize_scene(s, FeatureEncoding::U8Tanh);
    EXPECT_EQ(b[20], 1u);
    const Scene t = parse_scene(b);
    EXPECT_FALSE(t.tanh_features);
    double worst = 0;
    for (std::size_t i = 0; i < s.grid.pool().size(); ++i)
        worst = std::max(worst, std::abs(t.grid.pool()[i] - std::tanh(s.grid.pool()[i])));
    EXPECT_LE(worst, 1.0 / 255.0);
    // The loaded pool is already quantized, so re-encoding as F32 is stable.
    EXPECT_EQ(serialize_scene(parse_scene(serialize_scene(t))), serialize_scene(t));
}

TEST(Composite, RoundTrip) {
    const Scene a = make_random_scene({4, 4, 4}, {32, 32}, 0.5, 1.0, 1, {{0, 0, 0}, 0.25});
    const Scene b = make_random_scene({3, 4, 4}, {32, 32}, 0.5, 1.0, 2, {{0, 0, 0}, 0.25});
    const std::vector<Scene> scenes{a, b};
    const std::vector<Int3> offsets{{0, 0, 0}, {2, 1, 0}};
    const CompositeScene c = blend_scenes(scenes, offsets);
    const auto bytes = serialize_composite(c);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DIVC");
    const CompositeScene d = parse_composite(bytes);
    EXPECT_EQ(d.dims, c.dims);
    EXPECT_EQ(d.voxel_source, c.voxel_source);
    EXPECT_EQ(d.offsets, c.offsets);
    EXPECT_EQ(d.occupied_voxel_count(), c.occupied_voxel_count());
    EXPECT_EQ(serialize_composite(d), bytes);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    EXPECT_THROW(parse_composite(truncated), ParseError);
    auto bad = bytes;
    bad[3] = 'R';
    EXPECT_THROW(parse_composite(bad), ParseError);
}

} // namespace
} // namespace diver
