#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace cfnsg {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
  Vec3 operator/(double k) const { return {x / k, y / k, z / k}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
};

inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("normalized: zero-length vector");
  return a / n;
}

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }

  static Mat3 identity() { return Mat3{}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
        r(i, j) = acc;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  Vec3 transposed_mul(const Vec3& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

// World axes: x right, y up, z forward. Yaw rotates about +y, pitch about
// +x, roll about +z; composed as R = Ry(yaw) * Rx(pitch) * Rz(roll).
inline Mat3 rotation_ypr(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  Mat3 ry, rx, rz;
  ry.m = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  rx.m = {1, 0, 0, 0, cp, -sp, 0, sp, cp};
  rz.m = {cr, -sr, 0, sr, cr, 0, 0, 0, 1};
  return ry * (rx * rz);
}

struct Aabb {
  Vec3 min, max;

  Vec3 center() const { return (min + max) * 0.5; }
  Vec3 half_extent() const { return (max - min) * 0.5; }
  double diagonal() const { return norm(max - min); }
  bool contains(const Vec3& p, double eps = 0.0) const {
    return p.x >= min.x - eps && p.x <= max.x + eps && p.y >= min.y - eps &&
           p.y <= max.y + eps && p.z >= min.z - eps && p.z <= max.z + eps;
  }
};

}  // namespace cfnsg
