#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "silrefine/geometry.hpp"
#include "silrefine/raster.hpp"

namespace silrefine {

/// One detected instance: the tuple (B, M, score, class, pose). The mask
/// pixels are shared (detections are copied freely during NMS/ensembling);
/// mask_ref carries the on-disk location for serialized predictions.
struct Detection {
  BBox bbox;
  std::string mask_ref;
  std::shared_ptr<const BinaryMask> mask;
  double score = 0.0;
  int class_id = -1;
  Pose pose;
  std::optional<double> iou_score;  // S^mm, when a mesh render has been scored
};

/// Detections of one image from each of N_m ensemble members.
struct ModelOutputs {
  std::vector<std::vector<Detection>> per_model;

  int model_count() const { return static_cast<int>(per_model.size()); }
};

}  // namespace silrefine
