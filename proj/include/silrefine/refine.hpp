#pragma once

// Mesh-vs-mask translation refinement: silhouette losses, the analytic
// screen-space/translation Jacobian, geometric state initialization from
// the detected bounding box, the fixed-rotation descent loop, and the
// homoscedastic-uncertainty loss combiner.

#include <cmath>
#include <string>
#include <vector>

#include "silrefine/detection.hpp"
#include "silrefine/mesh.hpp"
#include "silrefine/raster.hpp"

namespace silrefine {

enum class LossKind { L2, NegIoU };
enum class OptimizerKind { Adam, Sgd };

struct RefineConfig {
  double learning_rate = 0.05;
  int epochs = 20;              // gradient steps per detection
  double early_stop_iou = 0.95;  // terminate once hard S^mm exceeds this
  double sigma = 1.5;            // soft rasterizer sharpness, pixels
  LossKind loss_kind = LossKind::NegIoU;
  OptimizerKind optimizer = OptimizerKind::Adam;
};

inline void validate(const RefineConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || cfg.epochs < 1 || !(cfg.early_stop_iou > 0.0) ||
      !(cfg.early_stop_iou <= 1.0) || !(cfg.sigma > 0.0)) {
    throw Error("invalid refine config");
  }
}

struct LossValue {
  double loss = 0.0;
  ScalarGrid grad;  // dLoss/dOccupancy
};

/// Sum of squared per-pixel differences between the mask and the soft
/// silhouette; gradient 2(s - m).
inline LossValue mask_l2_loss(const BinaryMask& m, const SoftSilhouette& s) {
  if (m.width != s.width || m.height != s.height) {
    throw DimensionMismatchError("mask and silhouette dimensions differ");
  }
  LossValue out;
  out.grad = ScalarGrid(s.width, s.height);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double diff = (m.bits[i] != 0 ? 1.0 : 0.0) - s.values[i];
    out.loss += diff * diff;
    out.grad.values[i] = -2.0 * diff;
  }
  return out;
}

/// loss = -soft_iou(s, m); gradient by the quotient rule on
/// sum(s m) / sum(s + m - s m).
inline LossValue neg_iou_loss(const BinaryMask& m, const SoftSilhouette& s) {
  if (m.width != s.width || m.height != s.height) {
    throw DimensionMismatchError("mask and silhouette dimensions differ");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double sv = s.values[i];
    const double mv = m.bits[i] != 0 ? 1.0 : 0.0;
    num += sv * mv;
    den += sv + mv - sv * mv;
  }
  LossValue out;
  out.grad = ScalarGrid(s.width, s.height);
  if (den == 0.0) return out;  // empty union: zero loss, zero gradient
  out.loss = -num / den;
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double mv = m.bits[i] != 0 ? 1.0 : 0.0;
    // dIoU/ds_i = (m_i den - num (1 - m_i)) / den^2
    out.grad.values[i] = -(mv * den - num * (1.0 - mv)) * inv_den2;
  }
  return out;
}

inline LossValue evaluate_loss(LossKind kind, const BinaryMask& m, const SoftSilhouette& s) {
  return kind == LossKind::L2 ? mask_l2_loss(m, s) : neg_iou_loss(m, s);
}

/// d(screen x', y')/dT per vertex: for (x', y', z') = R v + T,
/// du/dT = (fx/z', 0, -fx x'/z'^2) and dv/dT = (0, fy/z', -fy y'/z'^2).
struct VertexTranslationJacobian {
  Vec3 du_dt;
  Vec3 dv_dt;
};

inline std::vector<VertexTranslationJacobian> translation_jacobian(const TriangleMesh& mesh,
                                                                   const Pose& pose,
                                                                   const CameraIntrinsics& k) {
  const Mat3 r = pose.rotation.to_matrix();
  std::vector<VertexTranslationJacobian> jac;
  jac.reserve(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 pc = r * mesh.vertices[i] + pose.translation;
    if (!(pc.z > 0.0)) {
      throw BehindCameraError("vertex " + std::to_string(i) + " behind camera",
                              static_cast<int>(i));
    }
    const double inv_z = 1.0 / pc.z;
    jac.push_back({{k.fx * inv_z, 0.0, -k.fx * pc.x * inv_z * inv_z},
                   {0.0, k.fy * inv_z, -k.fy * pc.y * inv_z * inv_z}});
  }
  return jac;
}

inline Vec3 chain_translation_gradient(const std::vector<VertexTranslationJacobian>& jac,
                                       const VertexGradient& vg) {
  if (jac.size() != vg.size()) throw DimensionMismatchError("jacobian/gradient length mismatch");
  Vec3 g;
  for (std::size_t i = 0; i < jac.size(); ++i) {
    g += jac[i].du_dt * vg[i].x + jac[i].dv_dt * vg[i].y;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Geometric state initialization.

struct NoValidInitError : Error {
  using Error::Error;
};

enum class InitSource { Regressed, Geometric };

struct InitChoice {
  Vec3 translation;
  InitSource source = InitSource::Regressed;
  double iou = 0.0;  // S^mm of the chosen state
};

/// Compares the regressed T0 against the bbox-derived alternative
/// (restore_xy at depth z0) by hard-mask IoU against the detection mask and
/// keeps the better one; ties keep T0.
inline InitChoice geometric_state_init(const Detection& det, const TriangleMesh& mesh,
                                       const CameraIntrinsics& k, const UnitQuaternion& r0,
                                       const Vec3& t0) {
  if (!det.mask) throw Error("detection has no mask pixels loaded");
  const Vec2 xy = restore_xy(k, det.bbox.centre(), t0.z);
  const Vec3 t_hat{xy.x, xy.y, t0.z};

  auto try_iou = [&](const Vec3& t, double& iou) {
    const Pose pose{r0, t};
    if (!all_vertices_frontal(mesh, pose)) return false;
    iou = hard_iou(rasterize_hard(transform_to_screen(mesh, pose, k), k), *det.mask);
    return true;
  };

  double iou0 = 0.0, iou_hat = 0.0;
  const bool ok0 = try_iou(t0, iou0);
  const bool ok_hat = try_iou(t_hat, iou_hat);
  if (!ok0 && !ok_hat) {
    throw NoValidInitError("both candidate initial states render behind the camera");
  }
  if (ok_hat && (!ok0 || iou_hat > iou0)) {
    return {t_hat, InitSource::Geometric, iou_hat};
  }
  return {t0, InitSource::Regressed, iou0};
}

// ---------------------------------------------------------------------------
// Translation refinement loop.

struct TraceRecord {
  int iteration = 0;
  Vec3 translation;
  double loss = 0.0;
  double iou = 0.0;  // hard S^mm at this iterate
};

struct RefineResult {
  Vec3 translation;   // iterate with the highest recorded S^mm
  double best_iou = 0.0;
  std::vector<TraceRecord> trace;
  InitSource initial_source = InitSource::Regressed;
  UnitQuaternion rotation;  // the fixed R0, never modified by the loop
};

struct DivergedError : Error {
  explicit DivergedError(const std::string& msg, std::vector<TraceRecord> t)
      : Error(msg), trace(std::move(t)) {}
  std::vector<TraceRecord> trace;
};

/// Fixed-rotation translation refinement: per step, render the soft
/// silhouette, evaluate cfg.loss_kind against the detection mask, chain the
/// pixel gradient through soft_backward and the translation Jacobian, and
/// step T. Steps that would push any vertex behind the camera are halved up
/// to five times. Records (T, loss, hard S^mm) per iterate, stops early once
/// S^mm exceeds cfg.early_stop_iou, and returns the iterate with the highest
/// recorded S^mm.
inline RefineResult refine_translation(const TriangleMesh& mesh, const CameraIntrinsics& k,
                                       const UnitQuaternion& r0, const Vec3& t_init,
                                       const BinaryMask& m, const RefineConfig& cfg) {
  validate(cfg);
  RefineResult res;
  res.rotation = r0;

  Vec3 t = t_init;
  Vec3 adam_m, adam_v;  // per-axis first/second moment estimates
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Pose pose{r0, t};
  if (!all_vertices_frontal(mesh, pose)) {
    throw BehindCameraError("initial state renders behind the camera");
  }
  ScreenMesh sm = transform_to_screen(mesh, pose, k);
  LossValue lv = evaluate_loss(cfg.loss_kind, m, rasterize_soft(sm, k, cfg.sigma));
  double smm = hard_iou(rasterize_hard(sm, k), m);
  res.trace.push_back({0, t, lv.loss, smm});

  for (int step = 1; step <= cfg.epochs && !(smm > cfg.early_stop_iou); ++step) {
    const VertexGradient vg = soft_backward(sm, k, cfg.sigma, lv.grad);
    const Vec3 g = chain_translation_gradient(translation_jacobian(mesh, Pose{r0, t}, k), vg);

    Vec3 delta;
    if (cfg.optimizer == OptimizerKind::Adam) {
      for (int i = 0; i < 3; ++i) {
        adam_m[i] = kBeta1 * adam_m[i] + (1.0 - kBeta1) * g[i];
        adam_v[i] = kBeta2 * adam_v[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = adam_m[i] / (1.0 - std::pow(kBeta1, step));
        const double vhat = adam_v[i] / (1.0 - std::pow(kBeta2, step));
        delta[i] = -cfg.learning_rate * mhat / (std::sqrt(vhat) + kEps);
      }
    } else {
      delta = g * -cfg.learning_rate;
    }

    // Reject-and-halve: keep the iterate inside the renderer's domain.
    Vec3 t_next = t + delta;
    int halvings = 0;
    while (!all_vertices_frontal(mesh, Pose{r0, t_next}) && halvings < 5) {
      delta = delta * 0.5;
      t_next = t + delta;
      ++halvings;
    }
    if (!all_vertices_frontal(mesh, Pose{r0, t_next})) {
      throw DivergedError("step pushes mesh behind the camera after 5 halvings", res.trace);
    }

    t = t_next;
    sm = transform_to_screen(mesh, Pose{r0, t}, k);
    lv = evaluate_loss(cfg.loss_kind, m, rasterize_soft(sm, k, cfg.sigma));
    smm = hard_iou(rasterize_hard(sm, k), m);
    res.trace.push_back({step, t, lv.loss, smm});
  }

  // Keep the iterate with the highest S^mm (earliest on ties).
  const TraceRecord* best = &res.trace.front();
  for (const auto& rec : res.trace) {
    if (rec.iou > best->iou) best = &rec;
  }
  res.translation = best->translation;
  res.best_iou = best->iou;
  return res;
}

// ---------------------------------------------------------------------------
// Homoscedastic-uncertainty loss combiner (shape / rotation / translation).

/// Per-task log-variances s_k = log sigma_k^2; effective task weight is
/// exp(-s_k).
struct UncertaintyWeights {
  double s_shape = 0.0;
  double s_rot = 0.0;
  double s_trans = 0.0;
};

struct TaskLosses {
  double shape = 0.0;
  double rot = 0.0;
  double trans = 0.0;
};

struct CombinedLoss {
  double total = 0.0;
  double d_shape = 0.0;  // dTotal/ds_shape
  double d_rot = 0.0;
  double d_trans = 0.0;
};

/// total = sum_k (L_k exp(-s_k) + s_k); dTotal/ds_k = 1 - L_k exp(-s_k).
/// Stationary at s_k = log L_k.
inline CombinedLoss uncertainty_weighted_loss(const TaskLosses& l, const UncertaintyWeights& w) {
  CombinedLoss out;
  const double ws = std::exp(-w.s_shape), wr = std::exp(-w.s_rot), wt = std::exp(-w.s_trans);
  out.total = l.shape * ws + w.s_shape + l.rot * wr + w.s_rot + l.trans * wt + w.s_trans;
  out.d_shape = 1.0 - l.shape * ws;
  out.d_rot = 1.0 - l.rot * wr;
  out.d_trans = 1.0 - l.trans * wt;
  return out;
}

}  // namespace silrefine
