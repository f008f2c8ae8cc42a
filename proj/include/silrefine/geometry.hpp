#pragma once

// Quaternion algebra, the pinhole camera model and the closed-form
// projective helpers used for state initialization and metric distances.

#include <algorithm>
#include <cmath>
#include <limits>

#include "silrefine/core.hpp"

namespace silrefine {

struct InvalidQuaternionError : Error {
  using Error::Error;
};
struct BehindCameraError : Error {
  explicit BehindCameraError(const std::string& msg, int vertex = -1)
      : Error(msg), vertex_index(vertex) {}
  int vertex_index;
};
struct InvalidDepthError : Error {
  using Error::Error;
};
struct InvalidBBoxError : Error {
  using Error::Error;
};
struct InvalidReferenceError : Error {
  using Error::Error;
};

/// Unit quaternion q = a + bi + cj + dk restricted to the upper hemisphere
/// of S^3. Construction normalizes and canonicalizes, so every value of this
/// type satisfies: a > 0, or (a = 0 and b > 0), or (a = b = 0 and c > 0),
/// or (a = b = c = 0 and d = 1). q and -q construct bit-identical values.
struct UnitQuaternion {
  double a = 1.0;  // scalar part
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;

  UnitQuaternion() = default;

  UnitQuaternion(double a_, double b_, double c_, double d_) {
    const double n2 = a_ * a_ + b_ * b_ + c_ * c_ + d_ * d_;
    if (!std::isfinite(n2) || n2 <= 0.0) {
      throw InvalidQuaternionError("quaternion has zero or non-finite norm");
    }
    // Skip the rescale when already unit to keep canonicalization exactly
    // idempotent (a rescale by 1/sqrt(1-ulp) would dirty the last bit).
    if (std::abs(n2 - 1.0) > 16.0 * std::numeric_limits<double>::epsilon()) {
      const double inv = 1.0 / std::sqrt(n2);
      a_ *= inv;
      b_ *= inv;
      c_ *= inv;
      d_ *= inv;
    }
    bool flip;
    if (a_ != 0.0) {
      flip = a_ < 0.0;
    } else if (b_ != 0.0) {
      flip = b_ < 0.0;
    } else if (c_ != 0.0) {
      flip = c_ < 0.0;
    } else {
      flip = d_ < 0.0;
    }
    if (flip) {
      a_ = -a_;
      b_ = -b_;
      c_ = -c_;
      d_ = -d_;
    }
    // +0.0 normalization: makes the q / -q representatives bit-identical.
    a = a_ + 0.0;
    b = b_ + 0.0;
    c = c_ + 0.0;
    d = d_ + 0.0;
  }

  static UnitQuaternion identity() { return {}; }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n <= 0.0) throw InvalidQuaternionError("axis has zero norm");
    const double s = std::sin(angle_rad / 2.0) / n;
    return {std::cos(angle_rad / 2.0), axis.x * s, axis.y * s, axis.z * s};
  }

  double dot(const UnitQuaternion& o) const {
    return a * o.a + b * o.b + c * o.c + d * o.d;
  }

  Mat3 to_matrix() const {
    Mat3 r;
    r(0, 0) = 1.0 - 2.0 * (c * c + d * d);
    r(0, 1) = 2.0 * (b * c - a * d);
    r(0, 2) = 2.0 * (b * d + a * c);
    r(1, 0) = 2.0 * (b * c + a * d);
    r(1, 1) = 1.0 - 2.0 * (b * b + d * d);
    r(1, 2) = 2.0 * (c * d - a * b);
    r(2, 0) = 2.0 * (b * d - a * c);
    r(2, 1) = 2.0 * (c * d + a * b);
    r(2, 2) = 1.0 - 2.0 * (b * b + c * c);
    return r;
  }

  Vec3 rotate(const Vec3& v) const {
    // v + 2 qv x (qv x v + a v), qv = (b, c, d)
    const Vec3 qv{b, c, d};
    const Vec3 t = qv.cross(v) * 2.0;
    return v + t * a + qv.cross(t);
  }

  bool operator==(const UnitQuaternion& o) const {
    return a == o.a && b == o.b && c == o.c && d == o.d;
  }
};

inline UnitQuaternion canonicalize_quaternion(double a, double b, double c, double d) {
  return {a, b, c, d};
}

/// arccos(|q1 . q2|) in degrees. Hemisphere-invariant; the dot product is
/// clamped before arccos since unit dots can exceed 1 by ~1e-16.
inline double rotation_distance(const UnitQuaternion& q1, const UnitQuaternion& q2) {
  const double dot = std::min(std::abs(q1.dot(q2)), 1.0);
  return deg_from_rad(std::acos(dot));
}

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;   // pixels
  int height = 0;  // pixels
};

inline void validate(const CameraIntrinsics& k) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0) || k.width <= 0 || k.height <= 0) {
    throw Error("invalid camera intrinsics");
  }
}

struct Pose {
  UnitQuaternion rotation;
  Vec3 translation;  // metres, camera frame; z > 0 when renderable
};

struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  Vec2 centre() const { return {(x1 + x2) / 2.0, (y1 + y2) / 2.0}; }
  double diagonal() const { return std::hypot(x2 - x1, y2 - y1); }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
};

/// Pinhole projection of an object-frame point under a pose (Eq. 3 form:
/// u = fx x'/z' + cx, v = fy y'/z' + cy with (x',y',z') = R p + T).
inline Vec2 project_point(const CameraIntrinsics& k, const Pose& pose, const Vec3& p) {
  const Vec3 pc = pose.rotation.rotate(p) + pose.translation;
  if (!(pc.z > 0.0)) {
    throw BehindCameraError("point has non-positive camera depth");
  }
  return {k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy};
}

/// Back-projects a bounding-box centre (pixels) to camera-frame x, y at the
/// given depth: x = z0 (bx - cx) / fx, y = z0 (by - cy) / fy.
inline Vec2 restore_xy(const CameraIntrinsics& k, const Vec2& bbox_centre, double z0) {
  if (!(z0 > 0.0)) throw InvalidDepthError("depth must be positive");
  return {z0 * (bbox_centre.x - k.cx) / k.fx, z0 * (bbox_centre.y - k.cy) / k.fy};
}

/// Projective distance estimation: depth from the ratio of the canonical
/// bbox diagonal l_r (rendered at depth z_r) to the detected diagonal l_s,
/// then x, y recovered from the detected bbox centre.
inline Vec3 estimate_translation_projective(const CameraIntrinsics& k, const BBox& pred_bbox,
                                            double canonical_diag, double z_r) {
  if (!(z_r > 0.0)) throw InvalidDepthError("canonical distance must be positive");
  const double l_s = pred_bbox.diagonal();
  if (!(l_s > 0.0)) throw InvalidBBoxError("degenerate bounding box");
  const double z_s = canonical_diag / l_s * z_r;
  const Vec2 c = pred_bbox.centre();
  return {(c.x - k.cx) * z_s / k.fx, (c.y - k.cy) * z_s / k.fy, z_s};
}

enum class DistanceMode { Absolute, Relative };

/// Euclidean translation distance; Relative divides by the ground-truth norm.
inline double translation_distance(const Vec3& t, const Vec3& t_star, DistanceMode mode) {
  const double d = (t - t_star).norm();
  if (mode == DistanceMode::Absolute) return d;
  const double ref = t_star.norm();
  if (!(ref > 0.0)) {
    throw InvalidReferenceError("relative distance needs a nonzero ground-truth translation");
  }
  return d / ref;
}

}  // namespace silrefine
