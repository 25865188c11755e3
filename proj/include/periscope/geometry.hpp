#pragma once

#include <cmath>
#include <stdexcept>

namespace periscope {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
    return {x / n, y / n, z / n};
  }
};

/// Pinhole camera. Image x grows right, y grows down; the camera looks along
/// +z. `s` converts stored depth-map units to millimetres.
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  double s = 1.0;

  void validate(int width, int height) const {
    if (fx <= 0.0 || fy <= 0.0 || s <= 0.0)
      throw std::invalid_argument("intrinsics: fx, fy and s must be positive");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
      throw std::invalid_argument("intrinsics: principal point outside the image");
  }
};

/// Lifts pixel (u, v) with depth-map value D to camera coordinates:
/// (X, Y, Z) = ((u-cx)/fx, (v-cy)/fy, 1) * s * D.
inline Vec3 back_project(double u, double v, double depth_value, const CameraIntrinsics& k) {
  const double z = k.s * depth_value;
  return {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
}

/// Projects a camera-space point to pixel coordinates (inverse of
/// back_project's direction map; Z must be positive and in millimetres).
struct Pixel {
  double u = 0.0, v = 0.0;
};

inline Pixel project(const Vec3& p, const CameraIntrinsics& k) {
  if (p.z <= 0.0) throw std::invalid_argument("project: point behind the camera");
  return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
}

/// Metric width of one pixel at a given depth (mm per pixel); the lateral
/// quantization scale of any boundary traced in the image.
inline double pixel_footprint_mm(double depth_mm, const CameraIntrinsics& k) {
  return depth_mm / k.fx;
}

}  // namespace periscope
