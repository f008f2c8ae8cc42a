#pragma once

// Cross-model detection fusion: class-aware NMS, the model-voting scheme
// that keeps only detections corroborated by at least N_v members, and the
// S^mm-weighted translation merge.

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "silrefine/detection.hpp"

namespace silrefine {

inline double bbox_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace detail {

// Indices sorted by descending score; ties keep the lower original index
// first, which makes every consumer deterministic.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace detail

/// Greedy class-aware NMS: walk detections by descending score, suppress
/// any whose bbox IoU with an already-kept detection of the same class
/// exceeds iou_thresh.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<Detection> kept;
  for (std::size_t idx : detail::score_order(dets)) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == cand.class_id && bbox_iou(k.bbox, cand.bbox) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Clusters detections across models around descending-score anchors: a
/// cluster takes at most one detection per model, admitted when its bbox
/// IoU with the anchor reaches iou_thresh. Clusters backed by fewer than
/// min_votes distinct models are dropped.
inline std::vector<std::vector<Detection>> model_voting(const ModelOutputs& outputs,
                                                        int min_votes, double iou_thresh) {
  const int n_models = outputs.model_count();
  if (n_models < 1) throw Error("model voting needs at least one model");
  if (min_votes < 1 || min_votes > n_models) {
    throw Error("vote count must be between 1 and the number of models");
  }

  struct Entry {
    const Detection* det;
    int model;
  };
  std::vector<Entry> pool;
  for (int m = 0; m < n_models; ++m) {
    for (const Detection& d : outputs.per_model[m]) pool.push_back({&d, m});
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Entry& a, const Entry& b) { return a.det->score > b.det->score; });

  std::vector<bool> used(pool.size(), false);
  std::vector<std::vector<Detection>> clusters;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    std::vector<Detection> cluster{*pool[i].det};
    std::vector<bool> model_in(static_cast<std::size_t>(n_models), false);
    model_in[pool[i].model] = true;
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      if (used[j] || model_in[pool[j].model]) continue;
      if (bbox_iou(pool[i].det->bbox, pool[j].det->bbox) >= iou_thresh) {
        used[j] = true;
        model_in[pool[j].model] = true;
        cluster.push_back(*pool[j].det);
      }
    }
    if (static_cast<int>(cluster.size()) >= min_votes) clusters.push_back(std::move(cluster));
  }
  return clusters;
}

/// Weighted mean of member translations with weights S^mm_i; an all-zero
/// weight vector falls back to the unweighted mean.
inline Vec3 weighted_translation_merge(const std::vector<std::pair<Vec3, double>>& cluster) {
  if (cluster.empty()) throw Error("empty cluster");
  double wsum = 0.0;
  Vec3 acc;
  for (const auto& [t, w] : cluster) {
    acc += t * w;
    wsum += w;
  }
  if (wsum > 0.0) return acc * (1.0 / wsum);
  acc = Vec3{};
  for (const auto& [t, w] : cluster) acc += t;
  return acc * (1.0 / static_cast<double>(cluster.size()));
}

namespace detail {

// Deterministic, permutation-invariant preference between two detections
// scored by (primary key, then score, then content).
inline bool detection_preferred(const Detection& a, double key_a, const Detection& b,
                                double key_b) {
  if (key_a != key_b) return key_a > key_b;
  if (a.score != b.score) return a.score > b.score;
  const auto tie_a = std::array<double, 7>{a.pose.translation.x, a.pose.translation.y,
                                           a.pose.translation.z, a.pose.rotation.a,
                                           a.pose.rotation.b,    a.pose.rotation.c,
                                           a.pose.rotation.d};
  const auto tie_b = std::array<double, 7>{b.pose.translation.x, b.pose.translation.y,
                                           b.pose.translation.z, b.pose.rotation.a,
                                           b.pose.rotation.b,    b.pose.rotation.c,
                                           b.pose.rotation.d};
  return tie_a < tie_b;
}

}  // namespace detail

/// Fuses a voted cluster into one detection: S^mm-weighted translation,
/// rotation from the member with the highest S^mm, mean score, and
/// bbox/mask/class from the highest-score member. Missing S^mm counts as 0.
inline Detection merge_cluster(const std::vector<Detection>& cluster) {
  if (cluster.empty()) throw Error("empty cluster");

  std::vector<std::pair<Vec3, double>> weighted;
  weighted.reserve(cluster.size());
  for (const Detection& d : cluster) {
    weighted.emplace_back(d.pose.translation, d.iou_score.value_or(0.0));
  }

  const Detection* best_iou = &cluster.front();
  const Detection* best_score = &cluster.front();
  double score_sum = 0.0;
  for (const Detection& d : cluster) {
    score_sum += d.score;
    if (detail::detection_preferred(d, d.iou_score.value_or(0.0), *best_iou,
                                    best_iou->iou_score.value_or(0.0))) {
      best_iou = &d;
    }
    if (detail::detection_preferred(d, d.score, *best_score, best_score->score)) {
      best_score = &d;
    }
  }

  Detection merged = *best_score;  // bbox, mask, class from the top-score member
  merged.pose.rotation = best_iou->pose.rotation;
  merged.pose.translation = weighted_translation_merge(weighted);
  merged.score = score_sum / static_cast<double>(cluster.size());
  merged.iou_score = best_iou->iou_score;
  return merged;
}

}  // namespace silrefine
