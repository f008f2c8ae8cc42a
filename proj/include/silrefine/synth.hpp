#pragma once

// Synthetic scene generation: samples poses that keep the object fully in
// frame, renders ground-truth masks, and emits perturbed initial
// predictions for the refiner to recover. Deterministic for a given seed
// (uniform doubles are derived from raw mt19937_64 words, not from
// std::uniform_real_distribution, so outputs are reproducible across
// standard libraries).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "silrefine/io.hpp"
#include "silrefine/mesh.hpp"
#include "silrefine/raster.hpp"

namespace silrefine {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1).
  double canonical() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(canonical() * (hi - lo + 1));
  }
  double sign() { return canonical() < 0.5 ? -1.0 : 1.0; }

 private:
  std::mt19937_64 eng_;
};

struct SynthConfig {
  int n_scenes = 100;
  int instances_per_scene = 1;
  double z_min = 8.0;        // metres
  double z_max = 30.0;       // metres
  double noise_frac = 0.05;  // per-axis offset magnitude as a fraction of depth
  double margin_px = 4.0;    // minimum distance of the silhouette from the border
  int retry_cap = 100;
  std::uint64_t seed = 0;
};

struct SynthOutput {
  SceneSet scenes;
  // masks[scene][instance], aligned with scenes.scenes[i].instances.
  std::vector<std::vector<BinaryMask>> masks;
  PredictionSet initial;  // perturbed predictions; Detection::mask points at the GT mask
};

namespace detail {

inline Vec3 rotated_half_extents(const TriangleMesh& mesh, const Mat3& r) {
  Vec3 lo = r * mesh.vertices[0], hi = lo;
  for (const auto& v : mesh.vertices) {
    const Vec3 p = r * v;
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  return (hi - lo) * 0.5;
}

inline bool fully_in_frame(const ScreenMesh& sm, const CameraIntrinsics& k, double margin) {
  for (const auto& v : sm.verts) {
    if (v.x < margin || v.x > k.width - margin || v.y < margin || v.y > k.height - margin) {
      return false;
    }
  }
  return true;
}

}  // namespace detail

/// Samples n_scenes scenes: uniform yaw about the object's vertical axis,
/// depth uniform in [z_min, z_max], x/y uniform over placements that keep
/// the whole silhouette margin_px inside the frame. The emitted initial
/// predictions carry the GT mask and bbox plus a translation offset of
/// noise_frac * depth with an independent random sign per axis.
inline SynthOutput synth_generate(const MeshCorpus& corpus, const CameraIntrinsics& k,
                                  const SynthConfig& cfg) {
  if (corpus.models.empty()) throw Error("empty mesh corpus");
  validate(k);
  Rng rng(cfg.seed);
  SynthOutput out;
  out.scenes.intrinsics = k;

  for (int si = 0; si < cfg.n_scenes; ++si) {
    Scene scene;
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04d", si);
    scene.image_id = id;
    std::vector<BinaryMask> scene_masks;
    ImagePredictions preds;
    preds.image_id = scene.image_id;

    for (int ii = 0; ii < cfg.instances_per_scene; ++ii) {
      const TriangleMesh& mesh =
          corpus.models[rng.uniform_int(0, static_cast<int>(corpus.models.size()) - 1)];

      bool placed = false;
      for (int attempt = 0; attempt < cfg.retry_cap && !placed; ++attempt) {
        const double yaw = rng.uniform(0.0, 2.0 * kPi);
        const auto q = UnitQuaternion::from_axis_angle({0.0, 1.0, 0.0}, yaw);
        const double z = rng.uniform(cfg.z_min, cfg.z_max);
        const Vec3 half = detail::rotated_half_extents(mesh, q.to_matrix());
        const double near_z = z - half.z;
        if (!(near_z > 0.0)) continue;
        // Conservative screen half-size estimate at the nearest depth.
        const double sx = k.fx * half.x / near_z;
        const double sy = k.fy * half.y / near_z;
        const double u_lo = cfg.margin_px + sx, u_hi = k.width - cfg.margin_px - sx;
        const double v_lo = cfg.margin_px + sy, v_hi = k.height - cfg.margin_px - sy;
        if (u_lo >= u_hi || v_lo >= v_hi) continue;  // does not fit at this depth
        const double u = rng.uniform(u_lo, u_hi);
        const double v = rng.uniform(v_lo, v_hi);
        const Vec3 t{(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
        const Pose pose{q, t};
        if (!all_vertices_frontal(mesh, pose)) continue;
        const ScreenMesh sm = transform_to_screen(mesh, pose, k);
        if (!detail::fully_in_frame(sm, k, cfg.margin_px * 0.5)) continue;

        SceneInstance gt;
        gt.mesh_name = mesh.name;
        gt.class_id = mesh.class_id;
        gt.pose = pose;
        scene.instances.push_back(gt);
        scene_masks.push_back(rasterize_hard(sm, k));

        Detection det;
        det.bbox = screen_bbox(sm);
        det.mask = std::make_shared<BinaryMask>(scene_masks.back());
        det.score = rng.uniform(0.7, 1.0);
        det.class_id = mesh.class_id;
        det.pose.rotation = q;
        det.pose.translation = t + Vec3{rng.sign() * cfg.noise_frac * z,
                                        rng.sign() * cfg.noise_frac * z,
                                        rng.sign() * cfg.noise_frac * z};
        preds.detections.push_back(std::move(det));
        placed = true;
      }
      if (!placed) {
        throw Error("could not place '" + mesh.name + "' in frame after " +
                    std::to_string(cfg.retry_cap) + " attempts");
      }
    }
    out.scenes.scenes.push_back(std::move(scene));
    out.masks.push_back(std::move(scene_masks));
    out.initial.push_back(std::move(preds));
  }
  return out;
}

}  // namespace silrefine
