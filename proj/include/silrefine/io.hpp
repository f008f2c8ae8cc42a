#pragma once

// File formats: the scene/ground-truth and prediction JSON schemas, the
// mesh-corpus manifest, refine configs, per-detection trace CSVs and the
// red/green overlay PPMs. Mask paths inside JSON files are resolved
// relative to the file's directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "silrefine/detection.hpp"
#include "silrefine/mesh.hpp"
#include "silrefine/metrics.hpp"
#include "silrefine/raster.hpp"
#include "silrefine/refine.hpp"

namespace silrefine {

struct SchemaError : Error {
  using Error::Error;
};

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Mesh corpus: a directory of .obj files plus manifest.json mapping each
// file name to its class id and sub-category name.

struct MeshCorpus {
  std::vector<TriangleMesh> models;

  const TriangleMesh* find_class(int class_id) const {
    for (const auto& m : models) {
      if (m.class_id == class_id) return &m;
    }
    return nullptr;
  }
  const TriangleMesh* find_name(const std::string& name) const {
    for (const auto& m : models) {
      if (m.name == name) return &m;
    }
    return nullptr;
  }
};

inline MeshCorpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.empty()) {
    throw SchemaError("manifest must map obj file names to {class_id, name}");
  }
  MeshCorpus corpus;
  for (const auto& [file, entry] : manifest.items()) {
    std::ifstream obj(dir / file);
    if (!obj) throw IoError("cannot open mesh " + (dir / file).string());
    TriangleMesh mesh = load_obj(obj);
    mesh.class_id = entry.at("class_id").get<int>();
    mesh.name = entry.at("name").get<std::string>();
    corpus.models.push_back(std::move(mesh));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Scenes (ground truth).

struct SceneInstance {
  std::string mesh_name;
  int class_id = -1;
  Pose pose;
  std::string mask_ref;  // optional rendered GT mask, path relative to the file
};

struct Scene {
  std::string image_id;
  std::vector<SceneInstance> instances;
};

struct SceneSet {
  CameraIntrinsics intrinsics;
  std::vector<Scene> scenes;
};

namespace detail {

inline nlohmann::json to_json(const Vec3& v) { return {v.x, v.y, v.z}; }
inline nlohmann::json to_json(const UnitQuaternion& q) { return {q.a, q.b, q.c, q.d}; }

inline Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline UnitQuaternion quat_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw SchemaError("expected a quaternion [a,b,c,d]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline void check_schema_version(const nlohmann::json& j, const std::string& what) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion) {
    throw SchemaError(what + ": missing or unsupported schema_version");
  }
}

}  // namespace detail

inline void save_scenes(const SceneSet& set, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["intrinsics"] = {{"fx", set.intrinsics.fx}, {"fy", set.intrinsics.fy},
                     {"cx", set.intrinsics.cx}, {"cy", set.intrinsics.cy},
                     {"width", set.intrinsics.width}, {"height", set.intrinsics.height}};
  nlohmann::json images = nlohmann::json::array();
  for (const Scene& s : set.scenes) {
    nlohmann::json inst = nlohmann::json::array();
    for (const SceneInstance& g : s.instances) {
      nlohmann::json e;
      e["mesh"] = g.mesh_name;
      e["class_id"] = g.class_id;
      e["quaternion"] = detail::to_json(g.pose.rotation);
      e["translation"] = detail::to_json(g.pose.translation);
      if (!g.mask_ref.empty()) e["mask"] = g.mask_ref;
      inst.push_back(std::move(e));
    }
    images.push_back({{"image_id", s.image_id}, {"instances", std::move(inst)}});
  }
  j["images"] = std::move(images);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline SceneSet load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad scene file " + path.string() + ": " + e.what());
  }
  detail::check_schema_version(j, path.string());
  SceneSet set;
  const auto& k = j.at("intrinsics");
  set.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(),
                    k.at("cx").get<double>(), k.at("cy").get<double>(),
                    k.at("width").get<int>(), k.at("height").get<int>()};
  validate(set.intrinsics);
  for (const auto& img : j.at("images")) {
    Scene s;
    s.image_id = img.at("image_id").get<std::string>();
    for (const auto& e : img.at("instances")) {
      SceneInstance g;
      g.mesh_name = e.at("mesh").get<std::string>();
      g.class_id = e.at("class_id").get<int>();
      g.pose.rotation = detail::quat_from(e.at("quaternion"));
      g.pose.translation = detail::vec3_from(e.at("translation"));
      if (e.contains("mask")) g.mask_ref = e["mask"].get<std::string>();
      s.instances.push_back(std::move(g));
    }
    set.scenes.push_back(std::move(s));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Predictions.

struct ImagePredictions {
  std::string image_id;
  std::vector<Detection> detections;
};

using PredictionSet = std::vector<ImagePredictions>;

/// Quaternions are written in scalar-first (a,b,c,d) order; the
/// UnitQuaternion type keeps them canonicalized, so storage is canonical.
inline void save_predictions(const PredictionSet& set, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  nlohmann::json images = nlohmann::json::array();
  for (const ImagePredictions& img : set) {
    nlohmann::json dets = nlohmann::json::array();
    for (const Detection& d : img.detections) {
      nlohmann::json e;
      e["bbox"] = {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2};
      if (!d.mask_ref.empty()) e["mask"] = d.mask_ref;
      e["score"] = d.score;
      e["class_id"] = d.class_id;
      e["quaternion"] = detail::to_json(d.pose.rotation);
      e["translation"] = detail::to_json(d.pose.translation);
      if (d.iou_score) e["iou_score"] = *d.iou_score;
      dets.push_back(std::move(e));
    }
    images.push_back({{"image_id", img.image_id}, {"detections", std::move(dets)}});
  }
  j["images"] = std::move(images);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

/// load_masks: also read each referenced PGM into Detection::mask.
inline PredictionSet load_predictions(const std::filesystem::path& path, bool load_masks = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad prediction file " + path.string() + ": " + e.what());
  }
  detail::check_schema_version(j, path.string());
  PredictionSet set;
  const auto base = path.parent_path();
  for (const auto& img : j.at("images")) {
    ImagePredictions ip;
    ip.image_id = img.at("image_id").get<std::string>();
    for (const auto& e : img.at("detections")) {
      Detection d;
      const auto& bb = e.at("bbox");
      if (!bb.is_array() || bb.size() != 4) throw SchemaError("bbox must be [x1,y1,x2,y2]");
      d.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                bb[3].get<double>()};
      if (e.contains("mask") && !e["mask"].is_null()) {
        d.mask_ref = e["mask"].get<std::string>();
        if (load_masks) {
          d.mask = std::make_shared<BinaryMask>(load_pgm(base / d.mask_ref));
        }
      }
      d.score = e.at("score").get<double>();
      d.class_id = e.at("class_id").get<int>();
      d.pose.rotation = detail::quat_from(e.at("quaternion"));
      d.pose.translation = detail::vec3_from(e.at("translation"));
      if (e.contains("iou_score") && !e["iou_score"].is_null()) {
        d.iou_score = e["iou_score"].get<double>();
      }
      ip.detections.push_back(std::move(d));
    }
    set.push_back(std::move(ip));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Refine config.

inline RefineConfig load_refine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad config " + path.string() + ": " + e.what());
  }
  RefineConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") {
      cfg.learning_rate = value.get<double>();
    } else if (key == "epochs") {
      cfg.epochs = value.get<int>();
    } else if (key == "early_stop_iou") {
      cfg.early_stop_iou = value.get<double>();
    } else if (key == "sigma" || key == "σ") {
      cfg.sigma = value.get<double>();
    } else if (key == "loss_kind") {
      const auto s = value.get<std::string>();
      if (s == "l2") {
        cfg.loss_kind = LossKind::L2;
      } else if (s == "neg_iou") {
        cfg.loss_kind = LossKind::NegIoU;
      } else {
        throw SchemaError("loss_kind must be 'l2' or 'neg_iou'");
      }
    } else if (key == "optimizer") {
      const auto s = value.get<std::string>();
      if (s == "adam") {
        cfg.optimizer = OptimizerKind::Adam;
      } else if (s == "sgd") {
        cfg.optimizer = OptimizerKind::Sgd;
      } else {
        throw SchemaError("optimizer must be 'adam' or 'sgd'");
      }
    } else {
      throw SchemaError("unknown refine config field '" + key + "'");
    }
  }
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Per-detection refinement trace.

inline void save_trace_csv(const RefineResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,Tx,Ty,Tz,loss,iou\n";
  char buf[200];
  for (const TraceRecord& r : result.trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                  r.translation.x, r.translation.y, r.translation.z, r.loss, r.iou);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Overlay rendering: mesh mask in red, reference mask in green, overlap
// yellow (PPM P6).

struct OverlayCounts {
  std::size_t red = 0;     // mesh mask only
  std::size_t green = 0;   // reference mask only
  std::size_t yellow = 0;  // overlap
};

inline OverlayCounts write_overlay_ppm(const BinaryMask& mesh_mask, const BinaryMask& ref_mask,
                                       const std::filesystem::path& path) {
  if (mesh_mask.width != ref_mask.width || mesh_mask.height != ref_mask.height) {
    throw DimensionMismatchError("overlay mask dimensions differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << mesh_mask.width << ' ' << mesh_mask.height << "\n255\n";
  OverlayCounts counts;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mesh_mask.width) * 3);
  for (int y = 0; y < mesh_mask.height; ++y) {
    for (int x = 0; x < mesh_mask.width; ++x) {
      const bool r = mesh_mask.at(x, y);
      const bool g = ref_mask.at(x, y);
      counts.red += r && !g;
      counts.green += g && !r;
      counts.yellow += r && g;
      row[x * 3 + 0] = r ? 255 : 0;
      row[x * 3 + 1] = g ? 255 : 0;
      row[x * 3 + 2] = 0;
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
  return counts;
}

// ---------------------------------------------------------------------------
// Evaluation report.

inline void save_report(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = report.kind == LadderKind::Abs ? "abs" : "rel";
  j["interpolation"] = report.interp == Interp::Points11 ? 11 : 101;
  j["mean_ap"] = report.mean_ap;
  nlohmann::json crit = nlohmann::json::array();
  for (std::size_t i = 0; i < report.per_criterion.size(); ++i) {
    const CriterionResult& c = report.per_criterion[i];
    crit.push_back({{"criterion", "c" + std::to_string(i)},
                    {"shape_min", c.criterion.shape_min},
                    {"rot_max_deg", c.criterion.rot_max},
                    {"trans_max", c.criterion.trans_max},
                    {"ap", c.ap},
                    {"tp", c.tp},
                    {"fp", c.fp},
                    {"fn", c.fn}});
  }
  j["per_criterion"] = std::move(crit);
  nlohmann::json images = nlohmann::json::array();
  for (const ImageMatchRecord& rec : report.images) {
    images.push_back({{"image_id", rec.image_id},
                      {"n_pred", rec.n_pred},
                      {"n_gt", rec.n_gt},
                      {"tp_per_criterion", rec.tp_per_criterion}});
  }
  j["images"] = std::move(images);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace silrefine
