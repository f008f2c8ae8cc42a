// silrefine: silhouette-based 6-DoF translation refinement and evaluation.
//
// Subcommands:
//   synth     generate synthetic scenes, GT masks and perturbed predictions
//   refine    refine predicted translations against instance masks
//   ensemble  vote and merge predictions from several models
//   eval      A3DP-Abs / A3DP-Rel evaluation against ground truth
//   render    red/green overlay images of mesh renders vs masks

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "silrefine/ensemble.hpp"
#include "silrefine/io.hpp"
#include "silrefine/metrics.hpp"
#include "silrefine/refine.hpp"
#include "silrefine/synth.hpp"

namespace fs = std::filesystem;
using namespace silrefine;

namespace {

fs::path resolve_corpus_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SILREFINE_CORPUS")) return env;
  throw Error("no mesh corpus: pass --corpus or set SILREFINE_CORPUS");
}

// Dataset-crop-sized defaults, scaled down by an integer factor for
// desk-scale runs; explicit intrinsic flags override.
struct CameraFlags {
  int scale = 1;
  double fx = 0, fy = 0, cx = -1, cy = -1;
  int width = 0, height = 0;

  CameraIntrinsics resolve() const {
    CameraIntrinsics k{2304.0 / scale, 2304.0 / scale, 1692.0 / scale, 615.0 / scale,
                       3384 / scale, 1230 / scale};
    if (width > 0) k.width = width;
    if (height > 0) k.height = height;
    if (fx > 0) k.fx = fx;
    if (fy > 0) k.fy = fy;
    if (cx >= 0) k.cx = cx;
    if (cy >= 0) k.cy = cy;
    validate(k);
    return k;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--scale", scale, "integer downscale of the dataset-sized camera")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--width", width, "image width in pixels");
    cmd->add_option("--height", height, "image height in pixels");
    cmd->add_option("--fx", fx, "focal length x in pixels");
    cmd->add_option("--fy", fy, "focal length y in pixels");
    cmd->add_option("--cx", cx, "principal point x");
    cmd->add_option("--cy", cy, "principal point y");
  }
};

int run_synth(const std::string& corpus_dir, const std::string& out_dir, const SynthConfig& cfg,
              const CameraIntrinsics& k) {
  const MeshCorpus corpus = load_corpus(resolve_corpus_dir(corpus_dir));
  SynthOutput out = synth_generate(corpus, k, cfg);

  fs::create_directories(fs::path(out_dir) / "masks");
  for (std::size_t si = 0; si < out.scenes.scenes.size(); ++si) {
    Scene& scene = out.scenes.scenes[si];
    for (std::size_t ii = 0; ii < scene.instances.size(); ++ii) {
      char name[64];
      std::snprintf(name, sizeof name, "masks/%s_i%02zu.pgm", scene.image_id.c_str(), ii);
      save_pgm(out.masks[si][ii], fs::path(out_dir) / name);
      scene.instances[ii].mask_ref = name;
      out.initial[si].detections[ii].mask_ref = name;
    }
  }
  save_scenes(out.scenes, fs::path(out_dir) / "scenes.json");
  save_predictions(out.initial, fs::path(out_dir) / "initial_predictions.json");
  std::cout << "wrote " << out.scenes.scenes.size() << " scenes to " << out_dir << "\n";
  return 0;
}

int run_refine(const std::string& corpus_dir, const std::string& config_path,
               const std::string& scenes_path, const std::string& pred_path,
               const std::string& out_path, const std::string& trace_dir, int jobs) {
  const MeshCorpus corpus = load_corpus(resolve_corpus_dir(corpus_dir));
  const RefineConfig cfg =
      config_path.empty() ? RefineConfig{} : load_refine_config(config_path);
  const SceneSet scenes = load_scenes(scenes_path);
  PredictionSet preds = load_predictions(pred_path, /*load_masks=*/true);
  const CameraIntrinsics& k = scenes.intrinsics;

  if (!trace_dir.empty()) fs::create_directories(trace_dir);

  struct Task {
    std::size_t image;
    std::size_t det;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t d = 0; d < preds[i].detections.size(); ++d) tasks.push_back({i, d});
  }

  std::vector<std::string> errors(tasks.size());
  std::vector<RefineResult> results(tasks.size());
  std::vector<char> ok(tasks.size(), 0);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t t = next.fetch_add(1); t < tasks.size(); t = next.fetch_add(1)) {
      Detection& det = preds[tasks[t].image].detections[tasks[t].det];
      try {
        const TriangleMesh* mesh = corpus.find_class(det.class_id);
        if (!mesh) throw Error("no mesh for class " + std::to_string(det.class_id));
        if (!det.mask) throw Error("detection has no mask");
        const InitChoice init =
            geometric_state_init(det, *mesh, k, det.pose.rotation, det.pose.translation);
        RefineResult res =
            refine_translation(*mesh, k, det.pose.rotation, init.translation, *det.mask, cfg);
        res.initial_source = init.source;
        results[t] = std::move(res);
        ok[t] = 1;
      } catch (const std::exception& e) {
        errors[t] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::max(1, jobs);
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  int n_errors = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Detection& det = preds[tasks[t].image].detections[tasks[t].det];
    const std::string& image_id = preds[tasks[t].image].image_id;
    if (!ok[t]) {
      ++n_errors;
      std::cerr << "error: " << image_id << " detection " << tasks[t].det << ": " << errors[t]
                << "\n";
      continue;
    }
    const RefineResult& res = results[t];
    det.pose.translation = res.translation;
    det.iou_score = res.best_iou;
    if (!trace_dir.empty()) {
      char name[192];
      std::snprintf(name, sizeof name, "%s_det%02zu.csv", image_id.c_str(), tasks[t].det);
      save_trace_csv(res, fs::path(trace_dir) / name);
    }
  }
  save_predictions(preds, out_path);
  std::cout << "refined " << tasks.size() - n_errors << "/" << tasks.size() << " detections -> "
            << out_path << "\n";
  return n_errors == 0 ? 0 : 1;
}

int run_ensemble(const std::vector<std::string>& inputs, const std::string& out_path, int votes,
                 double iou_thresh) {
  std::vector<PredictionSet> models;
  for (const auto& path : inputs) models.push_back(load_predictions(path));
  const int n_m = static_cast<int>(models.size());
  const int n_v = votes > 0 ? votes : n_m;
  if (n_v > n_m) throw Error("--votes exceeds the number of prediction files");

  std::set<std::string> image_ids;
  for (const auto& m : models) {
    for (const auto& img : m) image_ids.insert(img.image_id);
  }

  PredictionSet merged;
  for (const auto& id : image_ids) {
    ModelOutputs outputs;
    for (const auto& m : models) {
      std::vector<Detection> dets;
      for (const auto& img : m) {
        if (img.image_id == id) dets = img.detections;
      }
      outputs.per_model.push_back(nms(dets, iou_thresh));
    }
    ImagePredictions out_img;
    out_img.image_id = id;
    for (const auto& cluster : model_voting(outputs, n_v, iou_thresh)) {
      out_img.detections.push_back(merge_cluster(cluster));
    }
    merged.push_back(std::move(out_img));
  }
  save_predictions(merged, out_path);
  std::cout << "merged " << n_m << " models over " << image_ids.size() << " images -> "
            << out_path << "\n";
  return 0;
}

int run_eval(const std::string& corpus_dir, const std::string& pred_path,
             const std::string& gt_path, const std::string& kind_str, int interp_points,
             const std::string& out_path) {
  const MeshCorpus corpus = load_corpus(resolve_corpus_dir(corpus_dir));
  const SceneSet scenes = load_scenes(gt_path);
  const PredictionSet preds = load_predictions(pred_path);

  const LadderKind kind = kind_str == "rel" ? LadderKind::Rel : LadderKind::Abs;
  // The official pairing: Rel reports 11-point AP, Abs 101-point.
  Interp interp = kind == LadderKind::Rel ? Interp::Points11 : Interp::Points101;
  if (interp_points == 11) interp = Interp::Points11;
  if (interp_points == 101) interp = Interp::Points101;

  std::map<std::string, std::vector<GroundTruth>> gts;
  std::set<int> classes;
  for (const Scene& s : scenes.scenes) {
    for (const SceneInstance& inst : s.instances) {
      gts[s.image_id].push_back({inst.class_id, inst.pose});
      classes.insert(inst.class_id);
    }
  }
  std::map<std::string, std::vector<Detection>> pred_map;
  for (const auto& img : preds) {
    if (img.detections.empty()) continue;
    pred_map[img.image_id] = img.detections;
    for (const auto& d : img.detections) classes.insert(d.class_id);
  }

  std::vector<const TriangleMesh*> meshes;
  for (int c : classes) {
    const TriangleMesh* mesh = corpus.find_class(c);
    if (!mesh) throw Error("no mesh for class " + std::to_string(c));
    meshes.push_back(mesh);
  }
  const ShapeSimilarityTable table = build_shape_table(meshes);

  const EvalReport report = evaluate(pred_map, gts, kind, interp, table);
  if (!out_path.empty()) save_report(report, out_path);

  const char* kind_name = kind == LadderKind::Rel ? "A3DP-Rel" : "A3DP-Abs";
  std::printf("%s (%d-point interpolation)\n", kind_name,
              interp == Interp::Points11 ? 11 : 101);
  std::printf("%-8s %-8s %-8s\n", "mean", "c-0", "c-5");
  std::printf("%-8.4f %-8.4f %-8.4f\n", report.mean_ap, report.per_criterion[0].ap,
              report.per_criterion[5].ap);
  for (std::size_t i = 0; i < report.per_criterion.size(); ++i) {
    const auto& c = report.per_criterion[i];
    std::printf("  c%zu: shape>=%.2f rot<%.0f trans<%.2f  AP=%.4f (tp=%d fp=%d fn=%d)\n", i,
                c.criterion.shape_min, c.criterion.rot_max, c.criterion.trans_max, c.ap, c.tp,
                c.fp, c.fn);
  }
  return 0;
}

int run_render(const std::string& corpus_dir, const std::string& scenes_path,
               const std::string& pred_path, const std::string& out_dir) {
  const MeshCorpus corpus = load_corpus(resolve_corpus_dir(corpus_dir));
  const SceneSet scenes = load_scenes(scenes_path);
  const PredictionSet preds = load_predictions(pred_path);
  const CameraIntrinsics& k = scenes.intrinsics;
  const fs::path scene_base = fs::path(scenes_path).parent_path();
  fs::create_directories(out_dir);

  for (const Scene& scene : scenes.scenes) {
    BinaryMask gt_mask(k.width, k.height);
    for (const SceneInstance& inst : scene.instances) {
      BinaryMask m;
      if (!inst.mask_ref.empty()) {
        m = load_pgm(scene_base / inst.mask_ref);
      } else {
        const TriangleMesh* mesh = corpus.find_name(inst.mesh_name);
        if (!mesh) throw Error("no mesh named '" + inst.mesh_name + "'");
        m = rasterize_hard(transform_to_screen(*mesh, inst.pose, k), k);
      }
      if (m.width != gt_mask.width || m.height != gt_mask.height) {
        throw DimensionMismatchError("mask size does not match scene intrinsics");
      }
      for (std::size_t i = 0; i < gt_mask.bits.size(); ++i) gt_mask.bits[i] |= m.bits[i];
    }

    BinaryMask mesh_mask(k.width, k.height);
    for (const auto& img : preds) {
      if (img.image_id != scene.image_id) continue;
      for (const Detection& det : img.detections) {
        const TriangleMesh* mesh = corpus.find_class(det.class_id);
        if (!mesh) throw Error("no mesh for class " + std::to_string(det.class_id));
        const BinaryMask m = rasterize_hard(transform_to_screen(*mesh, det.pose, k), k);
        for (std::size_t i = 0; i < mesh_mask.bits.size(); ++i) mesh_mask.bits[i] |= m.bits[i];
      }
    }

    const double smm = hard_iou(mesh_mask, gt_mask);
    char name[192];
    std::snprintf(name, sizeof name, "%s_smm_%.3f.ppm", scene.image_id.c_str(), smm);
    write_overlay_ppm(mesh_mask, gt_mask, fs::path(out_dir) / name);
  }
  std::cout << "wrote " << scenes.scenes.size() << " overlays to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"silhouette-based 6-DoF pose refinement toolkit"};
  app.require_subcommand(1);

  std::string corpus_dir;
  app.add_option("--corpus", corpus_dir, "mesh corpus directory (or SILREFINE_CORPUS)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes and predictions");
  std::string synth_out = "synth_out";
  SynthConfig synth_cfg;
  CameraFlags cam;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--scenes", synth_cfg.n_scenes, "number of scenes");
  synth->add_option("--instances", synth_cfg.instances_per_scene, "instances per scene");
  synth->add_option("--seed", synth_cfg.seed, "random seed");
  synth->add_option("--zmin", synth_cfg.z_min, "minimum depth, metres");
  synth->add_option("--zmax", synth_cfg.z_max, "maximum depth, metres");
  synth->add_option("--noise", synth_cfg.noise_frac, "per-axis noise as a fraction of depth");
  synth->add_option("--margin", synth_cfg.margin_px, "frame margin in pixels");
  cam.add_flags(synth);

  // refine
  auto* refine = app.add_subcommand("refine", "refine predicted translations");
  std::string config_path, scenes_path, pred_path, refined_out = "refined.json", trace_dir;
  int jobs = 1;
  refine->add_option("--config", config_path, "refine config JSON");
  refine->add_option("--scenes", scenes_path, "scene/ground-truth JSON (for intrinsics)")
      ->required();
  refine->add_option("--pred", pred_path, "input predictions JSON")->required();
  refine->add_option("--out", refined_out, "output predictions JSON");
  refine->add_option("--trace-dir", trace_dir, "directory for per-detection trace CSVs");
  refine->add_option("--jobs", jobs, "worker threads");

  // ensemble
  auto* ensemble = app.add_subcommand("ensemble", "vote and merge model predictions");
  std::vector<std::string> ensemble_inputs;
  std::string ensemble_out = "ensemble.json";
  int votes = 0;
  double iou_thresh = 0.5;
  ensemble->add_option("inputs", ensemble_inputs, "prediction JSON files")->required();
  ensemble->add_option("--out", ensemble_out, "merged output JSON");
  ensemble->add_option("--votes", votes, "vote count N_v (default: number of models)");
  ensemble->add_option("--iou-thresh", iou_thresh, "bbox IoU threshold for NMS and voting");

  // eval
  auto* eval = app.add_subcommand("eval", "A3DP evaluation");
  std::string eval_pred, eval_gt, kind = "abs", report_out;
  int interp_points = 0;
  eval->add_option("--pred", eval_pred, "predictions JSON")->required();
  eval->add_option("--gt", eval_gt, "ground-truth scenes JSON")->required();
  eval->add_option("--kind", kind, "abs|rel")->check(CLI::IsMember({"abs", "rel"}));
  eval->add_option("--interp", interp_points, "11|101 (default: 11 for rel, 101 for abs)")
      ->check(CLI::IsMember({11, 101}));
  eval->add_option("--out", report_out, "report JSON path");

  // render
  auto* render = app.add_subcommand("render", "overlay renders vs masks");
  std::string render_scenes, render_pred, render_out = "overlays";
  render->add_option("--scenes", render_scenes, "scenes JSON")->required();
  render->add_option("--pred", render_pred, "predictions JSON")->required();
  render->add_option("--out", render_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return run_synth(corpus_dir, synth_out, synth_cfg, cam.resolve());
    }
    if (refine->parsed()) {
      return run_refine(corpus_dir, config_path, scenes_path, pred_path, refined_out, trace_dir,
                        jobs);
    }
    if (ensemble->parsed()) {
      return run_ensemble(ensemble_inputs, ensemble_out, votes, iou_thresh);
    }
    if (eval->parsed()) {
      return run_eval(corpus_dir, eval_pred, eval_gt, kind, interp_points, report_out);
    }
    if (render->parsed()) {
      return run_render(corpus_dir, render_scenes, render_pred, render_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "silrefine: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
