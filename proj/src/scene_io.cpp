// SPDX-License-Identifier: Apache-2.0
#include "diver/scene_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace diver {

std::uint8_t quantize_component(double s) {
    const double x = (s + 1.0) * 0.5 * 255.0;
    // x >= 0 on the valid range, so rounding half away from zero is floor(x + 0.5).
    return std::uint8_t(std::clamp(std::floor(x + 0.5), 0.0, 255.0));
}

double dequantize_component(std::uint8_t q) { return 2.0 * q / 255.0 - 1.0; }

std::vector<std::uint8_t> quantize_pool(std::span<const Real> values) {
    std::vector<std::uint8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double s = values[i];
        if (!(s >= -1.0 && s <= 1.0))
            throw ValidationError("quantize: value " + std::to_string(s) + " at index " +
                                  std::to_string(i) + " lies outside [-1, 1]");
        out[i] = quantize_component(s);
    }
    return out;
}

std::vector<Real> dequantize_pool(std::span<const std::uint8_t> q) {
    std::vector<Real> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        out[i] = dequantize_component(q[i]);
    return out;
}

namespace {

class Writer {
  public:
    std::vector<std::uint8_t> bytes;

    template <class T> void put(T v) {
        static_assert(std::is_arithmetic_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(raw.begin(), raw.end());
        bytes.insert(bytes.end(), raw.begin(), raw.end());
    }
    void put_raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
};

class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> b, std::size_t base = 0) : b_(b), base_(base) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return b_.size() - pos_; }

    void need(std::size_t n, const char *what) const {
        if (remaining() < n)
            throw ParseError(std::string("truncated file while reading ") + what, base_ + pos_);
    }

    template <class T> T get(const char *what) {
        need(sizeof(T), what);
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), b_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(raw.begin(), raw.end());
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, raw.data(), sizeof(T));
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char *what) {
        need(n, what);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    [[noreturn]] void fail(const std::string &what, std::size_t at) const {
        throw ParseError(what, base_ + at);
    }

  private:
    std::span<const std::uint8_t> b_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> mask_words_bytes(const OccupancyMask &m) {
    Writer w;
    for (std::uint64_t word : m.words())
        w.put(word);
    return std::move(w.bytes);
}

Scene parse_scene_at(std::span<const std::uint8_t> bytes, std::size_t base) {
    Reader r(bytes, base);
    const auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), "DIVR", 4) != 0)
        r.fail("bad magic, expected DIVR", 0);
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint16_t>("version");
    if (version != kSceneVersion)
        r.fail("unsupported scene version " + std::to_string(version), version_at);
    const std::size_t dims_at = r.offset();
    GridDims dims;
    dims.nx = int(r.get<std::uint32_t>("dims"));
    dims.ny = int(r.get<std::uint32_t>("dims"));
    dims.nz = int(r.get<std::uint32_t>("dims"));
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1 || dims.nx > (1 << 16) || dims.ny > (1 << 16) ||
        dims.nz > (1 << 16))
        r.fail("grid dimensions out of range", dims_at);
    const std::size_t f_at = r.offset();
    const int F = r.get<std::uint16_t>("feature_dim");
    if (F < 1)
        r.fail("feature_dim must be positive", f_at);
    const std::size_t enc_at = r.offset();
    const auto enc = r.get<std::uint8_t>("encoding");
    if (enc > 1)
        r.fail("unknown feature encoding " + std::to_string(enc), enc_at);
    const std::size_t var_at = r.offset();
    const auto variant = r.get<std::uint8_t>("decoder variant");
    if (variant > 1)
        r.fail("unknown decoder variant " + std::to_string(variant), var_at);
    const auto active = r.get<std::uint64_t>("active vertex count");
    const auto occupied = r.get<std::uint64_t>("occupied voxel count");

    const std::size_t n_words = (dims.voxel_count() + 63) / 64;
    r.need(n_words * 8, "occupancy mask");
    OccupancyMask mask(dims);
    for (std::size_t i = 0; i < n_words; ++i)
        mask.words()[i] = r.get<std::uint64_t>("occupancy mask");
    const std::size_t tail = dims.voxel_count() % 64;
    if (tail && (mask.words()[n_words - 1] >> tail) != 0)
        throw ValidationError("occupancy mask has bits set past the last voxel");
    if (mask.count() != occupied)
        throw ValidationError("header says " + std::to_string(occupied) +
                              " occupied voxels, mask has " + std::to_string(mask.count()));

    FeatureGrid grid(dims, F);
    grid.set_occupancy(mask);
    if (grid.active_vertex_count() != active)
        throw ValidationError("header says " + std::to_string(active) +
                              " active vertices, occupancy implies " +
                              std::to_string(grid.active_vertex_count()));

    auto pool = grid.pool();
    if (enc == std::uint8_t(FeatureEncoding::F32)) {
        r.need(pool.size() * 4, "feature pool");
        for (Real &v : pool)
            v = r.get<float>("feature pool");
    } else {
        const auto q = r.take(pool.size(), "feature pool");
        for (std::size_t i = 0; i < pool.size(); ++i)
            pool[i] = dequantize_component(q[i]);
    }

    DecoderWeights decoder(DecoderShape::for_variant(DecoderVariant(variant), F));
    r.need(decoder.params().size() * 4, "decoder weights");
    for (Real &v : decoder.params())
        v = r.get<float>("decoder weights");

    WorldTransform xf;
    for (int a = 0; a < 3; ++a)
        xf.origin[a] = r.get<double>("transform");
    const std::size_t vs_at = r.offset();
    xf.voxel_size = r.get<double>("transform");
    if (!(xf.voxel_size > 0) || !std::isfinite(xf.voxel_size))
        r.fail("voxel size must be positive", vs_at);
    if (r.remaining() != 0)
        r.fail(std::to_string(r.remaining()) + " trailing bytes after scene", r.offset());

    Scene s{std::move(grid), std::move(decoder), xf, false};
    return s;
}

} // namespace

std::vector<std::uint8_t> serialize_scene(const Scene &scene, FeatureEncoding encoding) {
    scene.validate();
    const FeatureGrid &g = scene.grid;
    const GridDims d = g.dims();
    if (g.feature_dim() > 0xFFFF)
        throw ValidationError("feature_dim does not fit the file header");
    if (encoding == FeatureEncoding::U8Tanh && !scene.tanh_features)
        throw ValidationError("U8Tanh encoding needs a scene trained with the tanh mapping");

    Writer w;
    w.put_raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>("DIVR"), 4));
    w.put(kSceneVersion);
    w.put(std::uint32_t(d.nx));
    w.put(std::uint32_t(d.ny));
    w.put(std::uint32_t(d.nz));
    w.put(std::uint16_t(g.feature_dim()));
    w.put(std::uint8_t(encoding));
    w.put(std::uint8_t(scene.decoder.shape().variant()));
    w.put(std::uint64_t(g.active_vertex_count()));
    w.put(std::uint64_t(g.occupied_voxel_count()));
    w.put_raw(mask_words_bytes(g.occupancy()));
    if (encoding == FeatureEncoding::F32) {
        if (scene.tanh_features) {
            for (Real v : g.pool())
                w.put(float(std::tanh(v)));
        } else {
            for (Real v : g.pool())
                w.put(float(v));
        }
    } else {
        std::vector<Real> s(g.pool().begin(), g.pool().end());
        for (Real &v : s)
            v = std::tanh(v);
        w.put_raw(quantize_pool(s));
    }
    for (Real v : scene.decoder.params())
        w.put(float(v));
    for (int a = 0; a < 3; ++a)
        w.put(double(scene.transform.origin[a]));
    w.put(double(scene.transform.voxel_size));
    return std::move(w.bytes);
}

Scene parse_scene(std::span<const std::uint8_t> bytes) { return parse_scene_at(bytes, 0); }

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path.string() + " for reading");
    std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw Error("read error on " + path.string());
    return b;
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    if (!out)
        throw Error("write error on " + path.string());
}

void save_scene(const Scene &scene, const std::filesystem::path &path, FeatureEncoding encoding) {
    write_file(path, serialize_scene(scene, encoding));
}

Scene load_scene(const std::filesystem::path &path) {
    const auto bytes = read_file(path);
    try {
        return parse_scene(bytes);
    } catch (const ParseError &e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
    }
}

std::string file_magic(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path.string() + " for reading");
    char m[4] = {};
    in.read(m, 4);
    return std::string(m, std::size_t(in.gcount()));
}

// ---------------------------------------------------------------------------
// Composite container

std::vector<std::uint8_t> serialize_composite(const CompositeScene &scene) {
    if (scene.sources.size() != scene.offsets.size())
        throw ValidationError("composite: one offset per source required");
    if (scene.voxel_source.size() != scene.dims.voxel_count())
        throw ValidationError("composite: voxel source map has the wrong size");
    Writer w;
    w.put_raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>("DIVC"), 4));
    w.put(kSceneVersion);
    w.put(std::uint32_t(scene.sources.size()));
    w.put(std::uint32_t(scene.dims.nx));
    w.put(std::uint32_t(scene.dims.ny));
    w.put(std::uint32_t(scene.dims.nz));
    for (int a = 0; a < 3; ++a)
        w.put(double(scene.transform.origin[a]));
    w.put(double(scene.transform.voxel_size));
    for (std::size_t i = 0; i < scene.sources.size(); ++i) {
        for (int a = 0; a < 3; ++a)
            w.put(std::int32_t(scene.offsets[i][a]));
        const auto blob = serialize_scene(scene.sources[i]);
        w.put(std::uint64_t(blob.size()));
        w.put_raw(blob);
    }
    w.put_raw(scene.voxel_source);
    return std::move(w.bytes);
}

CompositeScene parse_composite(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), "DIVC", 4) != 0)
        r.fail("bad magic, expected DIVC", 0);
    const std::size_t version_at = r.offset();
    if (r.get<std::uint16_t>("version") != kSceneVersion)
        r.fail("unsupported composite version", version_at);
    const std::size_t count_at = r.offset();
    const auto count = r.get<std::uint32_t>("source count");
    if (count < 1 || count >= kNoSource)
        r.fail("source count out of range", count_at);
    CompositeScene cs;
    const std::size_t dims_at = r.offset();
    cs.dims.nx = int(r.get<std::uint32_t>("dims"));
    cs.dims.ny = int(r.get<std::uint32_t>("dims"));
    cs.dims.nz = int(r.get<std::uint32_t>("dims"));
    if (cs.dims.nx < 1 || cs.dims.ny < 1 || cs.dims.nz < 1 || cs.dims.nx > (1 << 16) ||
        cs.dims.ny > (1 << 16) || cs.dims.nz > (1 << 16))
        r.fail("grid dimensions out of range", dims_at);
    for (int a = 0; a < 3; ++a)
        cs.transform.origin[a] = r.get<double>("transform");
    cs.transform.voxel_size = r.get<double>("transform");
    for (std::uint32_t i = 0; i < count; ++i) {
        Int3 off;
        for (int a = 0; a < 3; ++a)
            off[a] = r.get<std::int32_t>("offset");
        const auto len = r.get<std::uint64_t>("scene length");
        const std::size_t at = r.offset();
        const auto blob = r.take(std::size_t(len), "embedded scene");
        cs.sources.push_back(parse_scene_at(blob, at));
        cs.offsets.push_back(off);
    }
    const std::size_t map_at = r.offset();
    const auto map = r.take(cs.dims.voxel_count(), "voxel source map");
    if (r.remaining() != 0)
        r.fail("trailing bytes after composite", r.offset());
    cs.voxel_source.assign(map.begin(), map.end());
    cs.occupancy = OccupancyMask(cs.dims);
    for (std::size_t v = 0; v < cs.voxel_source.size(); ++v) {
        const std::uint8_t s = cs.voxel_source[v];
        if (s == kNoSource)
            continue;
        if (s >= count)
            r.fail("voxel source index out of range", map_at + v);
        const Int3 g = cs.dims.voxel_coord(v);
        const Int3 local{g[0] - cs.offsets[s][0], g[1] - cs.offsets[s][1], g[2] - cs.offsets[s][2]};
        const FeatureGrid &sg = cs.sources[s].grid;
        if (!sg.dims().contains_voxel(local) || !sg.occupied(local))
            throw ValidationError("composite voxel maps to an unoccupied source voxel");
        cs.occupancy.set(v);
    }
    cs.octree = build_octree(cs.occupancy);
    return cs;
}

void save_composite(const CompositeScene &scene, const std::filesystem::path &path) {
    write_file(path, serialize_composite(scene));
}

CompositeScene load_composite(const std::filesystem::path &path) {
    const auto bytes = read_file(path);
    try {
        return parse_composite(bytes);
    } catch (const ParseError &e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
    }
}

} // namespace diver
