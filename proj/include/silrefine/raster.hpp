#pragma once

// Silhouette rasterization. Two forward passes over the same screen-space
// triangles: a hard binary pass (pixel centre inside any face, top-left tie
// rule) used for IoU scoring, and a soft pass used for optimization. The
// soft pass maps each pixel through a sigmoid of the signed distance to the
// union of faces (computed as the per-face max, so the 0.5 level set lies
// exactly on the silhouette boundary), which keeps occupancy in [0,1] and
// admits analytic gradients (soft_backward) with respect to the screen
// vertices. Summing per-face tails instead (a probabilistic union) dilates
// the silhouette by roughly sigma*ln(#nearby faces) and biases depth
// estimates, so the aggregation is a max on purpose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "silrefine/mesh.hpp"

namespace silrefine {

struct DimensionMismatchError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool operator==(const BinaryMask& o) const {
    return width == o.width && height == o.height && bits == o.bits;
  }
};

struct SoftSilhouette {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // occupancy in [0,1], row-major
  double sharpness = 1.5;      // sigma, pixels

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Row-major scalar field with mask dimensions (loss gradients etc.).
struct ScalarGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ScalarGrid() = default;
  ScalarGrid(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0) {}
};

// dL/d(x', y') per screen vertex.
using VertexGradient = std::vector<Vec2>;

namespace detail {

inline double orient2d(const Vec2& a, const Vec2& b, const Vec2& p) {
  return cross(b - a, p - a);
}

// Tie rule for pixel centres exactly on an edge, for triangles normalized
// to positive orientation (y grows downward): horizontal edges with the
// interior below them and edges running upward count as inside, so every
// shared edge belongs to exactly one of its two faces.
inline bool edge_tie_included(const Vec2& from, const Vec2& to) {
  const double dy = to.y - from.y;
  const double dx = to.x - from.x;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

struct Tri2 {
  Vec2 a, b, c;
};

inline Tri2 face_triangle(const ScreenMesh& sm, const std::array<int, 3>& f) {
  return {{sm.verts[f[0]].x, sm.verts[f[0]].y},
          {sm.verts[f[1]].x, sm.verts[f[1]].y},
          {sm.verts[f[2]].x, sm.verts[f[2]].y}};
}

// Distance from p to segment (p0, p1) plus the data needed for its
// derivative: the clamped projection parameter t and the closest point.
struct SegDist {
  double dist2;
  double t;
  Vec2 closest;
};

inline SegDist point_segment_distance2(const Vec2& p, const Vec2& p0, const Vec2& p1) {
  const Vec2 e = p1 - p0;
  const double ee = e.dot(e);
  double t = ee > 0.0 ? std::clamp((p - p0).dot(e) / ee, 0.0, 1.0) : 0.0;
  const Vec2 c = p0 + e * t;
  const Vec2 d = p - c;
  return {d.dot(d), t, c};
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Beyond this many sigmas the sigmoid saturates past double precision, so
// truncating a face's influence to its bbox + margin is bit-exact.
constexpr double kSaturationSigmas = 38.0;

struct PixelRange {
  int x0, x1, y0, y1;  // inclusive
  bool empty() const { return x0 > x1 || y0 > y1; }
};

inline PixelRange face_pixel_range(const Tri2& t, double margin, int w, int h) {
  const double minx = std::min({t.a.x, t.b.x, t.c.x}) - margin;
  const double maxx = std::max({t.a.x, t.b.x, t.c.x}) + margin;
  const double miny = std::min({t.a.y, t.b.y, t.c.y}) - margin;
  const double maxy = std::max({t.a.y, t.b.y, t.c.y}) + margin;
  PixelRange r;
  r.x0 = std::max(0, static_cast<int>(std::floor(minx - 0.5)));
  r.x1 = std::min(w - 1, static_cast<int>(std::ceil(maxx + 0.5)));
  r.y0 = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
  r.y1 = std::min(h - 1, static_cast<int>(std::ceil(maxy + 0.5)));
  return r;
}

// Signed distance (positive inside) from p to the triangle boundary, with
// the closest edge (vertex index pair within the face) and its projection
// parameter for the backward pass.
struct SignedDist {
  double sd;
  int edge;  // 0: (0,1), 1: (1,2), 2: (2,0)
  double t;
  Vec2 u;  // unit vector from closest point towards p (or inward normal at 0)
};

inline SignedDist signed_distance(const Vec2& p, const Tri2& t) {
  const Vec2 v[3] = {t.a, t.b, t.c};
  SignedDist best{0.0, 0, 0.0, {0.0, 0.0}};
  double best2 = std::numeric_limits<double>::infinity();
  SegDist seg_best{};
  for (int e = 0; e < 3; ++e) {
    const SegDist s = point_segment_distance2(p, v[e], v[(e + 1) % 3]);
    if (s.dist2 < best2) {
      best2 = s.dist2;
      best.edge = e;
      seg_best = s;
    }
  }
  const double dist = std::sqrt(best2);
  const double w0 = orient2d(t.b, t.c, p);
  const double w1 = orient2d(t.c, t.a, p);
  const double w2 = orient2d(t.a, t.b, p);
  // Winding-agnostic inside test; w0 + w1 + w2 = 2 * signed area.
  const bool inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) ||
                      (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
  best.t = seg_best.t;
  best.sd = inside ? dist : -dist;
  if (dist > 1e-12) {
    best.u = (p - seg_best.closest) * (1.0 / dist);
  } else {
    // On the boundary: fall back to the inward edge normal, the limit of u
    // from the inside.
    const Vec2 e = v[(best.edge + 1) % 3] - v[best.edge];
    const double en = e.norm();
    const double flip = (w0 + w1 + w2) >= 0.0 ? 1.0 : -1.0;
    best.u = en > 0.0 ? Vec2{-e.y * flip / en, e.x * flip / en} : Vec2{0.0, 0.0};
  }
  return best;
}

}  // namespace detail

/// Hard binary silhouette: a pixel is set iff its centre (x+0.5, y+0.5)
/// lies inside any face; ties on edges follow the top-left rule above.
inline BinaryMask rasterize_hard(const ScreenMesh& sm, const CameraIntrinsics& k) {
  BinaryMask mask(k.width, k.height);
  for (const auto& f : sm.faces) {
    detail::Tri2 t = detail::face_triangle(sm, f);
    double area2 = detail::orient2d(t.a, t.b, t.c);
    if (area2 == 0.0) continue;  // collinear: empty
    if (area2 < 0.0) std::swap(t.b, t.c);
    const detail::PixelRange r = detail::face_pixel_range(t, 0.0, k.width, k.height);
    if (r.empty()) continue;
    const bool in0 = detail::edge_tie_included(t.b, t.c);
    const bool in1 = detail::edge_tie_included(t.c, t.a);
    const bool in2 = detail::edge_tie_included(t.a, t.b);
    for (int y = r.y0; y <= r.y1; ++y) {
      for (int x = r.x0; x <= r.x1; ++x) {
        const Vec2 p{x + 0.5, y + 0.5};
        const double w0 = detail::orient2d(t.b, t.c, p);
        const double w1 = detail::orient2d(t.c, t.a, p);
        const double w2 = detail::orient2d(t.a, t.b, p);
        if ((w0 > 0.0 || (w0 == 0.0 && in0)) && (w1 > 0.0 || (w1 == 0.0 && in1)) &&
            (w2 > 0.0 || (w2 == 0.0 && in2))) {
          mask.set(x, y, true);
        }
      }
    }
  }
  return mask;
}

namespace detail {

// Union signed distance per pixel (max over faces, -inf where no face is
// within the saturation margin) plus the index of the winning face.
struct UnionField {
  std::vector<double> sd;
  std::vector<int> face;
};

inline UnionField union_signed_distance(const ScreenMesh& sm, const CameraIntrinsics& k,
                                        double sigma) {
  UnionField field;
  field.sd.assign(static_cast<std::size_t>(k.width) * k.height,
                  -std::numeric_limits<double>::infinity());
  field.face.assign(field.sd.size(), -1);
  const double margin = kSaturationSigmas * sigma;
  for (std::size_t fi = 0; fi < sm.faces.size(); ++fi) {
    const Tri2 t = face_triangle(sm, sm.faces[fi]);
    if (orient2d(t.a, t.b, t.c) == 0.0) continue;
    const PixelRange r = face_pixel_range(t, margin, k.width, k.height);
    if (r.empty()) continue;
    for (int y = r.y0; y <= r.y1; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * k.width;
      for (int x = r.x0; x <= r.x1; ++x) {
        const double sd = signed_distance({x + 0.5, y + 0.5}, t).sd;
        if (sd > field.sd[row + x]) {
          field.sd[row + x] = sd;
          field.face[row + x] = static_cast<int>(fi);
        }
      }
    }
  }
  return field;
}

}  // namespace detail

/// Soft silhouette: occupancy = sigmoid(sd(p) / sigma) with sd the signed
/// distance (positive inside) from the pixel centre to the union of faces,
/// realized as the per-face maximum. Exactly 0.5 on the silhouette
/// boundary, saturating to 1 inside and 0 outside. Caveat: edges interior
/// to the union (shared face edges, overlapping faces) also read 0.5; the
/// dip is confined to a ~sigma band that moves rigidly with the screen
/// mesh.
inline SoftSilhouette rasterize_soft(const ScreenMesh& sm, const CameraIntrinsics& k,
                                     double sigma) {
  if (!(sigma > 0.0)) throw Error("sigma must be positive");
  const detail::UnionField field = detail::union_signed_distance(sm, k, sigma);
  SoftSilhouette s;
  s.width = k.width;
  s.height = k.height;
  s.sharpness = sigma;
  s.values.resize(field.sd.size());
  for (std::size_t i = 0; i < field.sd.size(); ++i) {
    s.values[i] = std::isinf(field.sd[i]) ? 0.0 : detail::sigmoid(field.sd[i] / sigma);
  }
  return s;
}

/// Chain rule through the soft silhouette: given dL/dOccupancy per pixel,
/// returns dL/d(x', y') per screen vertex. The gradient flows through the
/// face realizing the per-pixel max, into the two endpoints of its closest
/// edge (Danskin). Matches central finite differences of rasterize_soft.
inline VertexGradient soft_backward(const ScreenMesh& sm, const CameraIntrinsics& k, double sigma,
                                    const ScalarGrid& dl_docc) {
  if (!(sigma > 0.0)) throw Error("sigma must be positive");
  if (dl_docc.width != k.width || dl_docc.height != k.height) {
    throw DimensionMismatchError("gradient grid does not match image size");
  }
  const detail::UnionField field = detail::union_signed_distance(sm, k, sigma);
  VertexGradient grad(sm.verts.size(), Vec2{0.0, 0.0});
  const double margin = detail::kSaturationSigmas * sigma;
  for (std::size_t fi = 0; fi < sm.faces.size(); ++fi) {
    const auto& f = sm.faces[fi];
    const detail::Tri2 t = detail::face_triangle(sm, f);
    if (detail::orient2d(t.a, t.b, t.c) == 0.0) continue;
    const detail::PixelRange r = detail::face_pixel_range(t, margin, k.width, k.height);
    if (r.empty()) continue;
    for (int y = r.y0; y <= r.y1; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * k.width;
      for (int x = r.x0; x <= r.x1; ++x) {
        if (field.face[row + x] != static_cast<int>(fi)) continue;
        const double dl = dl_docc.values[row + x];
        if (dl == 0.0) continue;
        const detail::SignedDist sd = detail::signed_distance({x + 0.5, y + 0.5}, t);
        const double d = detail::sigmoid(sd.sd / sigma);
        const double g_sd = dl * d * (1.0 - d) / sigma;
        if (g_sd == 0.0) continue;
        const double s = sd.sd >= 0.0 ? 1.0 : -1.0;
        // Danskin: d dist/d p0 = -(1-t) u, d dist/d p1 = -t u at the
        // closest edge; the third vertex gets nothing.
        const int i0 = f[sd.edge];
        const int i1 = f[(sd.edge + 1) % 3];
        const Vec2 gu = sd.u * (g_sd * s);
        grad[i0] += gu * -(1.0 - sd.t);
        grad[i1] += gu * -sd.t;
      }
    }
  }
  return grad;
}

inline double hard_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw DimensionMismatchError("mask dimensions differ");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool pa = a.bits[i] != 0, pb = b.bits[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Differentiable IoU: sum(s*m) / sum(s + m - s*m). Equals hard_iou when s
/// is binary; 0 when the union is empty.
inline double soft_iou(const SoftSilhouette& s, const BinaryMask& m) {
  if (s.width != m.width || s.height != m.height) {
    throw DimensionMismatchError("mask dimensions differ");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double sv = s.values[i];
    const double mv = m.bits[i] != 0 ? 1.0 : 0.0;
    num += sv * mv;
    den += sv + mv - sv * mv;
  }
  return den == 0.0 ? 0.0 : num / den;
}

// ---------------------------------------------------------------------------
// PGM serialization (P5, maxval 255). 0 = background, 255 = foreground.

inline void save_pgm(const BinaryMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<std::uint8_t> row(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) row[i] = mask.bits[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Quantized view of a soft silhouette, for visualization only.
inline void save_pgm(const SoftSilhouette& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << s.width << ' ' << s.height << "\n255\n";
  std::vector<std::uint8_t> row(s.values.size());
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    row[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.values[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline BinaryMask load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("unsupported PGM header in " + path.string());
  }
  in.get();  // single whitespace after maxval
  BinaryMask mask(w, h);
  std::vector<std::uint8_t> raw(mask.bits.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated PGM payload in " + path.string());
  for (std::size_t i = 0; i < raw.size(); ++i) mask.bits[i] = raw[i] > 0 ? 1 : 0;
  return mask;
}

}  // namespace silrefine
