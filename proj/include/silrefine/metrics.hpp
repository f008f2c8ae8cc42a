#pragma once

// The A3DP evaluation engine: the c0..c9 threshold ladders (absolute and
// depth-relative translation variants), multi-view silhouette shape
// similarity, COCO-style greedy matching, and average precision under the
// 11-point and 101-point interpolation schemes.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "silrefine/detection.hpp"
#include "silrefine/mesh.hpp"
#include "silrefine/raster.hpp"

namespace silrefine {

enum class LadderKind { Abs, Rel };
enum class Interp { Points11, Points101 };

struct Criterion {
  double shape_min = 0.0;   // required shape similarity (>=)
  double rot_max = 0.0;     // rotation distance bound, degrees (<)
  double trans_max = 0.0;   // translation bound: metres (Abs) or ratio (Rel) (<)
};

struct ThresholdLadder {
  LadderKind kind = LadderKind::Abs;
  std::vector<Criterion> criteria;  // c0 (loose) .. c9 (strict)
};

/// c0..c9: shape 0.50..0.95 step 0.05, rotation 50..5 degrees step 5,
/// translation 2.8..0.1 m step 0.3 (Abs) or ratio 0.10..0.01 step 0.01 (Rel).
inline ThresholdLadder threshold_ladder(LadderKind kind) {
  ThresholdLadder ladder;
  ladder.kind = kind;
  for (int i = 0; i < 10; ++i) {
    Criterion c;
    c.shape_min = 0.50 + 0.05 * i;
    c.rot_max = 50.0 - 5.0 * i;
    c.trans_max = kind == LadderKind::Abs ? 2.8 - 0.3 * i : 0.10 - 0.01 * i;
    ladder.criteria.push_back(c);
  }
  return ladder;
}

struct GroundTruth {
  int class_id = -1;
  Pose pose;
};

struct RenderError : Error {
  using Error::Error;
};
struct MissingSimilarityError : Error {
  using Error::Error;
};
struct ImageIdMismatchError : Error {
  using Error::Error;
};

/// Mean silhouette IoU of the two meshes rendered at a fixed location over
/// 10 views, yawing the object by 36-degree steps about its vertical (y)
/// axis. Symmetric; 1.0 for identical meshes.
inline double shape_similarity(const TriangleMesh& a, const TriangleMesh& b,
                               const CameraIntrinsics& k, double z_fix) {
  auto render = [&](const TriangleMesh& mesh, const UnitQuaternion& yaw) {
    const ScreenMesh sm = transform_to_screen(mesh, Pose{yaw, {0.0, 0.0, z_fix}}, k);
    for (const auto& v : sm.verts) {
      if (v.x < 0.0 || v.x > k.width || v.y < 0.0 || v.y > k.height) {
        throw RenderError("mesh does not render fully in frame at the fixed distance");
      }
    }
    return rasterize_hard(sm, k);
  };
  double sum = 0.0;
  for (int view = 0; view < 10; ++view) {
    const auto yaw =
        UnitQuaternion::from_axis_angle({0.0, 1.0, 0.0}, rad_from_deg(36.0 * view));
    sum += hard_iou(render(a, yaw), render(b, yaw));
  }
  return sum / 10.0;
}

/// Symmetric class-pair similarity lookup (the dataset's N_c x N_c matrix,
/// here computed from meshes).
class ShapeSimilarityTable {
 public:
  void set(int class_a, int class_b, double similarity) {
    table_[key(class_a, class_b)] = similarity;
  }
  double at(int class_a, int class_b) const {
    const auto it = table_.find(key(class_a, class_b));
    if (it == table_.end()) {
      throw MissingSimilarityError("no shape similarity for class pair (" +
                                   std::to_string(class_a) + ", " + std::to_string(class_b) +
                                   ")");
    }
    return it->second;
  }
  bool contains(int class_a, int class_b) const { return table_.count(key(class_a, class_b)); }

 private:
  static std::pair<int, int> key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }
  std::map<std::pair<int, int>, double> table_;
};

/// Builds the similarity table for every (pred, gt) class pair from the
/// corpus meshes, rendered with a fixed internal camera at a per-pair
/// distance of four AABB diagonals.
inline ShapeSimilarityTable build_shape_table(const std::vector<const TriangleMesh*>& meshes) {
  const CameraIntrinsics k{500.0, 500.0, 256.0, 256.0, 512, 512};
  auto extent = [](const TriangleMesh& m) {
    Vec3 lo = m.vertices[0], hi = m.vertices[0];
    for (const auto& v : m.vertices) {
      lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
      hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
    }
    return (hi - lo).norm();
  };
  ShapeSimilarityTable table;
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    for (std::size_t j = i; j < meshes.size(); ++j) {
      const double z_fix = 4.0 * std::max(extent(*meshes[i]), extent(*meshes[j]));
      table.set(meshes[i]->class_id, meshes[j]->class_id,
                shape_similarity(*meshes[i], *meshes[j], k, z_fix));
    }
  }
  return table;
}

/// All three criteria must hold simultaneously: shape similarity at least
/// shape_min, rotation distance below rot_max, translation distance (mode
/// per ladder kind) below trans_max.
inline bool is_true_positive(const Detection& pred, const GroundTruth& gt, const Criterion& c,
                             LadderKind kind, const ShapeSimilarityTable& shape_table) {
  if (shape_table.at(pred.class_id, gt.class_id) < c.shape_min) return false;
  if (!(rotation_distance(pred.pose.rotation, gt.pose.rotation) < c.rot_max)) return false;
  const DistanceMode mode =
      kind == LadderKind::Abs ? DistanceMode::Absolute : DistanceMode::Relative;
  return translation_distance(pred.pose.translation, gt.pose.translation, mode) < c.trans_max;
}

struct MatchResult {
  std::vector<bool> tp;          // aligned with the input prediction order
  std::vector<bool> gt_matched;  // aligned with the input ground-truth order
};

/// Greedy score-ordered matching: each prediction claims the unmatched
/// ground truth with the smallest translation distance among those it is a
/// true positive against; each ground truth is claimed at most once.
inline MatchResult match_detections(const std::vector<Detection>& preds,
                                    const std::vector<GroundTruth>& gts, const Criterion& c,
                                    LadderKind kind, const ShapeSimilarityTable& shape_table) {
  MatchResult res;
  res.tp.assign(preds.size(), false);
  res.gt_matched.assign(gts.size(), false);
  const DistanceMode mode =
      kind == LadderKind::Abs ? DistanceMode::Absolute : DistanceMode::Relative;

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

  for (std::size_t pi : order) {
    int best_gt = -1;
    double best_dist = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (res.gt_matched[gi]) continue;
      if (!is_true_positive(preds[pi], gts[gi], c, kind, shape_table)) continue;
      const double dist =
          translation_distance(preds[pi].pose.translation, gts[gi].pose.translation, mode);
      if (best_gt < 0 || dist < best_dist) {
        best_gt = static_cast<int>(gi);
        best_dist = dist;
      }
    }
    if (best_gt >= 0) {
      res.tp[pi] = true;
      res.gt_matched[best_gt] = true;
    }
  }
  return res;
}

/// AP over a score-ordered TP/FP list: builds the precision-recall curve,
/// interpolates with rho(r) = max precision at recall >= r, and averages
/// over 11 or 101 equally spaced recall levels; levels beyond the achieved
/// recall contribute 0.
inline double average_precision(const std::vector<bool>& labels, int n_gt, Interp interp) {
  if (n_gt < 0) throw Error("negative ground-truth count");
  if (n_gt == 0) return 0.0;
  std::vector<double> recall, precision;
  int tp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    tp += labels[i] ? 1 : 0;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  const int bins = interp == Interp::Points11 ? 11 : 101;
  double sum = 0.0;
  for (int bi = 0; bi < bins; ++bi) {
    // Both sides are correctly rounded quotients, so >= is exact here.
    const double r = static_cast<double>(bi) / (bins - 1);
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= r) best = std::max(best, precision[i]);
    }
    sum += best;
  }
  return sum / bins;
}

struct CriterionResult {
  Criterion criterion;
  double ap = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct ImageMatchRecord {
  std::string image_id;
  int n_pred = 0;
  int n_gt = 0;
  std::vector<int> tp_per_criterion;  // c0..c9
};

struct EvalReport {
  LadderKind kind = LadderKind::Abs;
  Interp interp = Interp::Points101;
  std::vector<CriterionResult> per_criterion;
  double mean_ap = 0.0;
  std::vector<ImageMatchRecord> images;
};

/// Evaluates predictions against ground truth: per criterion, matches each
/// image independently, pools all labels into one global score-ranked list
/// (COCO convention) and computes AP; the report carries per-criterion APs
/// and their mean.
inline EvalReport evaluate(const std::map<std::string, std::vector<Detection>>& preds,
                           const std::map<std::string, std::vector<GroundTruth>>& gts,
                           LadderKind kind, Interp interp,
                           const ShapeSimilarityTable& shape_table) {
  for (const auto& [image_id, dets] : preds) {
    if (!gts.count(image_id)) {
      throw ImageIdMismatchError("predictions reference unknown image '" + image_id + "'");
    }
  }
  const ThresholdLadder ladder = threshold_ladder(kind);
  EvalReport report;
  report.kind = kind;
  report.interp = interp;

  int n_gt_total = 0;
  for (const auto& [image_id, g] : gts) n_gt_total += static_cast<int>(g.size());

  for (const auto& [image_id, g] : gts) {
    ImageMatchRecord rec;
    rec.image_id = image_id;
    rec.n_gt = static_cast<int>(g.size());
    const auto it = preds.find(image_id);
    rec.n_pred = it != preds.end() ? static_cast<int>(it->second.size()) : 0;
    rec.tp_per_criterion.assign(ladder.criteria.size(), 0);
    report.images.push_back(std::move(rec));
  }

  struct Pooled {
    double score;
    bool tp;
    std::string image_id;
    std::size_t index;
  };

  for (std::size_t ci = 0; ci < ladder.criteria.size(); ++ci) {
    const Criterion& c = ladder.criteria[ci];
    std::vector<Pooled> pooled;
    for (const auto& [image_id, dets] : preds) {
      const auto& g = gts.at(image_id);
      const MatchResult match = match_detections(dets, g, c, kind, shape_table);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        pooled.push_back({dets[i].score, match.tp[i], image_id, i});
      }
    }
    std::sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return a.index < b.index;
    });
    std::vector<bool> labels;
    labels.reserve(pooled.size());
    CriterionResult cres;
    cres.criterion = c;
    for (const Pooled& p : pooled) {
      labels.push_back(p.tp);
      cres.tp += p.tp ? 1 : 0;
      cres.fp += p.tp ? 0 : 1;
      if (p.tp) {
        for (auto& rec : report.images) {
          if (rec.image_id == p.image_id) {
            ++rec.tp_per_criterion[ci];
            break;
          }
        }
      }
    }
    cres.fn = n_gt_total - cres.tp;
    cres.ap = average_precision(labels, n_gt_total, interp);
    report.per_criterion.push_back(cres);
  }

  double sum = 0.0;
  for (const auto& cr : report.per_criterion) sum += cr.ap;
  report.mean_ap = report.per_criterion.empty() ? 0.0 : sum / report.per_criterion.size();
  return report;
}

}  // namespace silrefine
