// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace diver {

/// Scalar used for features, decoder weights and all rendering math.
using Real = double;

constexpr double kPi = 3.14159265358979323846;

using Int3 = std::array<int, 3>;
using Rgb = std::array<Real, 3>;

struct Vec3 {
    double x = 0, y = 0, z = 0;

    constexpr Vec3() = default;
    constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double &operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3 &operator+=(const Vec3 &o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr bool operator==(const Vec3 &) const = default;
};

constexpr Vec3 operator*(double s, const Vec3 &v) { return v * s; }
constexpr double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(const Vec3 &v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3 &v) { return v / length(v); }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double &operator()(int r, int c) { return m[r * 3 + c]; }
    Vec3 operator*(const Vec3 &v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Vec3 column(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
    static Mat3 from_columns(const Vec3 &a, const Vec3 &b, const Vec3 &c) {
        Mat3 r;
        for (int i = 0; i < 3; ++i) {
            r(i, 0) = a[i];
            r(i, 1) = b[i];
            r(i, 2) = c[i];
        }
        return r;
    }
};

/// Base of all recoverable errors raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Coordinate or index outside its valid range.
class RangeError : public Error {
  public:
    using Error::Error;
};

/// Mismatched vector / array shapes.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Invalid user-provided parameters (failed operation preconditions).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Non-finite or otherwise impossible numeric state.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Malformed serialized data; carries the byte offset where parsing failed.
class ParseError : public Error {
  public:
    ParseError(const std::string &what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

  private:
    std::size_t offset_;
};

} // namespace diver
