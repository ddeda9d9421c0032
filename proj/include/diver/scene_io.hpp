// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diver/scene.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace diver {

enum class FeatureEncoding : std::uint8_t { F32 = 0, U8Tanh = 1 };

inline constexpr std::uint16_t kSceneVersion = 1;
inline constexpr std::size_t kSceneHeaderSize = 38;

/// s in [-1,1] -> round_half_away((s+1)/2 * 255).
std::uint8_t quantize_component(double s);
/// q -> 2q/255 - 1.
double dequantize_component(std::uint8_t q);
/// Throws ValidationError when a value lies outside [-1,1] (or is NaN).
std::vector<std::uint8_t> quantize_pool(std::span<const Real> values);
std::vector<Real> dequantize_pool(std::span<const std::uint8_t> q);

/// Scene file layout (all little-endian):
///   "DIVR" | u16 version | u32 nx, ny, nz | u16 F | u8 encoding | u8 decoder variant
///   | u64 active vertices | u64 occupied voxels | occupancy words (u64 each)
///   | pool (f32 or u8 per component, vertex scan order) | decoder params (f32)
///   | origin (3 x f64) | voxel size (f64)
/// U8Tanh stores tanh of the raw features, so it requires a tanh-mode scene; the
/// loaded scene holds the dequantized values and is no longer in tanh mode.
std::vector<std::uint8_t> serialize_scene(const Scene &scene,
                                          FeatureEncoding encoding = FeatureEncoding::F32);
/// Throws ParseError (bad magic, version, truncation, trailing bytes) or ValidationError
/// (counts inconsistent with the occupancy).
Scene parse_scene(std::span<const std::uint8_t> bytes);

void save_scene(const Scene &scene, const std::filesystem::path &path,
                FeatureEncoding encoding = FeatureEncoding::F32);
Scene load_scene(const std::filesystem::path &path);

/// Composite container:
///   "DIVC" | u16 version | u32 source count | u32 nx, ny, nz | origin (3 x f64)
///   | voxel size (f64) | per source: i32 offset x3, u64 length, embedded scene file
///   | per-voxel source byte (0xFF = empty)
std::vector<std::uint8_t> serialize_composite(const CompositeScene &scene);
CompositeScene parse_composite(std::span<const std::uint8_t> bytes);
void save_composite(const CompositeScene &scene, const std::filesystem::path &path);
CompositeScene load_composite(const std::filesystem::path &path);

/// Reads the first four bytes of a file.
std::string file_magic(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

} // namespace diver
