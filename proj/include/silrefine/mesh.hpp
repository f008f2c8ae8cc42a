#pragma once

// Triangle meshes: a minimal Wavefront OBJ subset (v/f records only),
// rigid transformation into screen space, and the canonical-distance
// bounding-box diagonal used by projective depth estimation.

#include <array>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "silrefine/geometry.hpp"

namespace silrefine {

struct ParseError : Error {
  using Error::Error;
};
struct InvalidCanonicalDistanceError : Error {
  using Error::Error;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;            // object frame, metres
  std::vector<std::array<int, 3>> faces;  // 0-based vertex indices
  std::string name;
  int class_id = -1;
};

inline void validate(const TriangleMesh& mesh) {
  if (mesh.vertices.size() < 3 || mesh.faces.empty()) {
    throw ParseError("mesh needs at least 3 vertices and 1 face");
  }
  const int n = static_cast<int>(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    for (int idx : f) {
      if (idx < 0 || idx >= n) throw ParseError("face index out of range");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      throw ParseError("face with repeated vertex index");
    }
  }
}

namespace detail {

// Resolves a 1-based (or negative, relative) OBJ index against the current
// vertex count. Throws with the offending line number.
inline int resolve_obj_index(long idx, std::size_t vertex_count, int line_no) {
  long resolved = idx > 0 ? idx - 1 : static_cast<long>(vertex_count) + idx;
  if (idx == 0 || resolved < 0 || resolved >= static_cast<long>(vertex_count)) {
    throw ParseError("line " + std::to_string(line_no) + ": vertex index " +
                     std::to_string(idx) + " out of range");
  }
  return static_cast<int>(resolved);
}

}  // namespace detail

/// Parses the v/f subset of Wavefront OBJ. Face entries may carry /vt and
/// /vn slots (ignored); polygons are fan-triangulated; negative indices are
/// relative to the vertices seen so far. Everything else is skipped.
inline TriangleMesh load_obj(std::istream& in) {
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) {
        throw ParseError("line " + std::to_string(line_no) + ": malformed vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string item;
      while (ls >> item) {
        // "3", "3/5", "3//7", "3/5/7": only the leading vertex index counts.
        std::size_t pos = 0;
        long idx = 0;
        try {
          idx = std::stol(item, &pos);
        } catch (const std::exception&) {
          throw ParseError("line " + std::to_string(line_no) + ": malformed face entry '" +
                           item + "'");
        }
        if (pos != item.size() && item[pos] != '/') {
          throw ParseError("line " + std::to_string(line_no) + ": malformed face entry '" +
                           item + "'");
        }
        poly.push_back(detail::resolve_obj_index(idx, mesh.vertices.size(), line_no));
      }
      if (poly.size() < 3) {
        throw ParseError("line " + std::to_string(line_no) + ": face with fewer than 3 vertices");
      }
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
        mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
      }
    }
    // vt / vn / g / o / s / usemtl / mtllib: ignored.
  }
  validate(mesh);
  return mesh;
}

/// Writes the same OBJ subset load_obj reads; load -> save -> load is a
/// fixed point (vertices printed with round-trip precision).
inline void save_obj(const TriangleMesh& mesh, std::ostream& out) {
  char buf[96];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const auto& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
}

/// Vertices in screen space: x, y in pixels, z the retained camera depth.
struct ScreenMesh {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
};

inline bool all_vertices_frontal(const TriangleMesh& mesh, const Pose& pose) {
  const Mat3 r = pose.rotation.to_matrix();
  for (const auto& v : mesh.vertices) {
    if (!((r * v + pose.translation).z > 0.0)) return false;
  }
  return true;
}

inline ScreenMesh transform_to_screen(const TriangleMesh& mesh, const Pose& pose,
                                      const CameraIntrinsics& k) {
  const Mat3 r = pose.rotation.to_matrix();
  ScreenMesh sm;
  sm.verts.reserve(mesh.vertices.size());
  sm.faces = mesh.faces;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 pc = r * mesh.vertices[i] + pose.translation;
    if (!(pc.z > 0.0)) {
      throw BehindCameraError("vertex " + std::to_string(i) + " behind camera (z' = " +
                                  std::to_string(pc.z) + ")",
                              static_cast<int>(i));
    }
    sm.verts.push_back({k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy, pc.z});
  }
  return sm;
}

/// Diagonal (pixels) of the screen-space AABB of the mesh rendered at the
/// canonical pose (identity rotation, translation (0, 0, z_r)). z_r must
/// exceed the mesh extent along the longitudinal (z) axis.
inline double canonical_bbox_diag(const TriangleMesh& mesh, const CameraIntrinsics& k,
                                  double z_r) {
  double zmin = mesh.vertices[0].z, zmax = mesh.vertices[0].z;
  for (const auto& v : mesh.vertices) {
    zmin = std::min(zmin, v.z);
    zmax = std::max(zmax, v.z);
  }
  if (!(z_r > zmax - zmin)) {
    throw InvalidCanonicalDistanceError("canonical distance must exceed the longitudinal extent");
  }
  const ScreenMesh sm =
      transform_to_screen(mesh, Pose{UnitQuaternion::identity(), {0.0, 0.0, z_r}}, k);
  double x0 = sm.verts[0].x, x1 = x0, y0 = sm.verts[0].y, y1 = y0;
  for (const auto& v : sm.verts) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  return std::hypot(x1 - x0, y1 - y0);
}

/// Screen-space AABB of the transformed vertices; the synthetic detector's
/// bounding box.
inline BBox screen_bbox(const ScreenMesh& sm) {
  BBox b{sm.verts[0].x, sm.verts[0].y, sm.verts[0].x, sm.verts[0].y};
  for (const auto& v : sm.verts) {
    b.x1 = std::min(b.x1, v.x);
    b.x2 = std::max(b.x2, v.x);
    b.y1 = std::min(b.y1, v.y);
    b.y2 = std::max(b.y2, v.y);
  }
  return b;
}

}  // namespace silrefine
