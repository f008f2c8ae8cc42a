#include "silrefine/metrics.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "test_support.hpp"

using namespace silrefine;
using testsupport::make_box;

namespace {

ShapeSimilarityTable identity_table(const std::vector<int>& classes) {
  ShapeSimilarityTable t;
  for (int a : classes) {
    for (int b : classes) t.set(a, b, a == b ? 1.0 : 0.0);
  }
  return t;
}

Detection make_pred(double score, int class_id, const Vec3& t,
                    const UnitQuaternion& q = UnitQuaternion::identity()) {
  Detection d;
  d.score = score;
  d.class_id = class_id;
  d.pose = {q, t};
  return d;
}

}  // namespace

TEST(ThresholdLadder, VerbatimEndpointsAndMonotoneStrictening) {
  const ThresholdLadder abs = threshold_ladder(LadderKind::Abs);
  ASSERT_EQ(abs.criteria.size(), 10u);
  EXPECT_DOUBLE_EQ(abs.criteria[0].shape_min, 0.5);
  EXPECT_DOUBLE_EQ(abs.criteria[0].rot_max, 50.0);
  EXPECT_DOUBLE_EQ(abs.criteria[0].trans_max, 2.8);
  EXPECT_NEAR(abs.criteria[9].shape_min, 0.95, 1e-12);
  EXPECT_NEAR(abs.criteria[9].rot_max, 5.0, 1e-12);
  EXPECT_NEAR(abs.criteria[9].trans_max, 0.1, 1e-12);
  EXPECT_NEAR(abs.criteria[5].trans_max, 1.3, 1e-12);  // 2.8 - 5 * 0.3

  const ThresholdLadder rel = threshold_ladder(LadderKind::Rel);
  ASSERT_EQ(rel.criteria.size(), 10u);
  EXPECT_DOUBLE_EQ(rel.criteria[0].trans_max, 0.10);
  EXPECT_NEAR(rel.criteria[9].trans_max, 0.01, 1e-12);

  for (const auto& ladder : {abs, rel}) {
    for (int i = 1; i < 10; ++i) {
      EXPECT_GE(ladder.criteria[i].shape_min, ladder.criteria[i - 1].shape_min);
      EXPECT_LE(ladder.criteria[i].rot_max, ladder.criteria[i - 1].rot_max);
      EXPECT_LE(ladder.criteria[i].trans_max, ladder.criteria[i - 1].trans_max);
    }
  }
}

TEST(ShapeSimilarity, IdenticalMeshesAndSymmetry) {
  const CameraIntrinsics k{500, 500, 128, 128, 256, 256};
  const TriangleMesh cube = make_box(1.0, 1.0, 1.0, "cube", 0);
  const TriangleMesh slab = make_box(1.2, 0.6, 0.9, "slab", 1);
  EXPECT_DOUBLE_EQ(shape_similarity(cube, cube, k, 10.0), 1.0);
  EXPECT_DOUBLE_EQ(shape_similarity(cube, slab, k, 10.0),
                   shape_similarity(slab, cube, k, 10.0));
}

TEST(ShapeSimilarity, HalfScaleCubeMatchesRenderingOracle) {
  const CameraIntrinsics k{500, 500, 128, 128, 256, 256};
  const TriangleMesh cube = make_box(1.0, 1.0, 1.0, "cube", 0);
  const TriangleMesh half = make_box(0.5, 0.5, 0.5, "half", 1);
  const double z_fix = 40.0;

  // Rendering oracle: assemble the mean ourselves, view by view.
  double sum = 0.0;
  double view0 = 0.0;
  for (int view = 0; view < 10; ++view) {
    const auto yaw = UnitQuaternion::from_axis_angle({0, 1, 0}, rad_from_deg(36.0 * view));
    const Pose pose{yaw, {0, 0, z_fix}};
    const double iou = hard_iou(rasterize_hard(transform_to_screen(cube, pose, k), k),
                                rasterize_hard(transform_to_screen(half, pose, k), k));
    if (view == 0) view0 = iou;
    sum += iou;
  }
  EXPECT_DOUBLE_EQ(shape_similarity(cube, half, k, z_fix), sum / 10.0);
  // Fronto-parallel faces at near-orthographic distance: IoU about 0.25.
  EXPECT_NEAR(view0, 0.25, 0.05);
}

TEST(ShapeSimilarity, OutOfFrameRejected) {
  const CameraIntrinsics k{500, 500, 128, 128, 256, 256};
  const TriangleMesh cube = make_box(1.0, 1.0, 1.0, "cube", 0);
  EXPECT_THROW(shape_similarity(cube, cube, k, 1.001), RenderError);
}

TEST(ShapeTable, BuildsAllPairsAndErrorsOnMissing) {
  const TriangleMesh a = make_box(1.0, 1.0, 1.0, "a", 0);
  const TriangleMesh b = make_box(0.8, 1.1, 0.9, "b", 1);
  const ShapeSimilarityTable table = build_shape_table({&a, &b});
  EXPECT_DOUBLE_EQ(table.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(table.at(0, 1), table.at(1, 0));
  EXPECT_GT(table.at(0, 1), 0.0);
  EXPECT_LT(table.at(0, 1), 1.0);
  EXPECT_THROW(table.at(0, 7), MissingSimilarityError);
}

TEST(IsTruePositive, ThresholdExamples) {
  const auto table = identity_table({0, 1});
  const GroundTruth gt{0, {UnitQuaternion::identity(), {0, 0, 10}}};
  const ThresholdLadder abs = threshold_ladder(LadderKind::Abs);

  const Detection exact = make_pred(0.9, 0, {0, 0, 10});
  for (const auto& c : abs.criteria) {
    EXPECT_TRUE(is_true_positive(exact, gt, c, LadderKind::Abs, table));
  }

  // Translation off by 3.0 m fails the loosest absolute criterion (2.8 m).
  const Detection off3 = make_pred(0.9, 0, {0, 0, 13});
  EXPECT_FALSE(is_true_positive(off3, gt, abs.criteria[0], LadderKind::Abs, table));

  // Rotation 90 degrees about z reads 45 on the quaternion-dot metric: passes c0.
  const Detection rot45 =
      make_pred(0.9, 0, {0, 0, 10}, UnitQuaternion::from_axis_angle({0, 0, 1}, rad_from_deg(90)));
  EXPECT_TRUE(is_true_positive(rot45, gt, abs.criteria[0], LadderKind::Abs, table));
  EXPECT_FALSE(is_true_positive(rot45, gt, abs.criteria[1], LadderKind::Abs, table));

  // Relative mode: 0.5 m at 10 m is a ratio of 0.05 (passes c0 = 0.10,
  // fails c6 = 0.04).
  const Detection rel = make_pred(0.9, 0, {0, 0, 10.5});
  const ThresholdLadder relladder = threshold_ladder(LadderKind::Rel);
  EXPECT_TRUE(is_true_positive(rel, gt, relladder.criteria[0], LadderKind::Rel, table));
  EXPECT_FALSE(is_true_positive(rel, gt, relladder.criteria[6], LadderKind::Rel, table));

  // Wrong class with zero similarity fails the shape gate.
  const Detection wrong_class = make_pred(0.9, 1, {0, 0, 10});
  EXPECT_FALSE(is_true_positive(wrong_class, gt, abs.criteria[0], LadderKind::Abs, table));
}

TEST(MatchDetections, GreedyClaimsAndLabels) {
  const auto table = identity_table({0});
  const Criterion c{0.5, 50.0, 2.8};
  const std::vector<GroundTruth> gts{{0, {UnitQuaternion::identity(), {0, 0, 10}}},
                                     {0, {UnitQuaternion::identity(), {5, 0, 20}}}};

  // One pred, one claim.
  {
    const std::vector<Detection> preds{make_pred(0.9, 0, {0, 0, 10})};
    const MatchResult m = match_detections(preds, gts, c, LadderKind::Abs, table);
    EXPECT_TRUE(m.tp[0]);
    EXPECT_TRUE(m.gt_matched[0]);
    EXPECT_FALSE(m.gt_matched[1]);
  }

  // Two identical preds: the higher-score one is TP, the other FP.
  {
    const std::vector<Detection> preds{make_pred(0.8, 0, {0, 0, 10.1}),
                                       make_pred(0.9, 0, {0, 0, 10})};
    const MatchResult m = match_detections(preds, gts, c, LadderKind::Abs, table);
    EXPECT_FALSE(m.tp[0]);
    EXPECT_TRUE(m.tp[1]);
  }

  // A pred matching nothing is FP.
  {
    const std::vector<Detection> preds{make_pred(0.9, 0, {0, 0, 100})};
    const MatchResult m = match_detections(preds, gts, c, LadderKind::Abs, table);
    EXPECT_FALSE(m.tp[0]);
  }

  // Nearest-translation claim: a pred between the two gts claims the closer.
  {
    const std::vector<Detection> preds{make_pred(0.9, 0, {4.4, 0, 19.0})};
    const MatchResult m = match_detections(preds, gts, c, LadderKind::Abs, table);
    EXPECT_TRUE(m.tp[0]);
    EXPECT_FALSE(m.gt_matched[0]);
    EXPECT_TRUE(m.gt_matched[1]);
  }
}

TEST(AveragePrecision, ExamplesMatchBinByBinReference) {
  // Single TP with one ground truth: precision 1 at recall 1 fills every bin.
  EXPECT_DOUBLE_EQ(average_precision({true}, 1, Interp::Points11), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({true}, 1, Interp::Points101), 1.0);

  // No predictions.
  EXPECT_DOUBLE_EQ(average_precision({}, 3, Interp::Points11), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({}, 0, Interp::Points101), 0.0);

  // [FP(0.9), TP(0.8)] with one gt: max precision at any recall is 0.5.
  EXPECT_DOUBLE_EQ(average_precision({false, true}, 1, Interp::Points11), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({false, true}, 1, Interp::Points101), 0.5);

  // Brute-force bin-by-bin reference on random label lists.
  std::mt19937 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(u(rng) * 8);
    const int n_gt = 1 + static_cast<int>(u(rng) * 4);
    std::vector<bool> labels;
    for (int i = 0; i < n; ++i) labels.push_back(u(rng) < 0.5);

    for (Interp interp : {Interp::Points11, Interp::Points101}) {
      const int bins = interp == Interp::Points11 ? 11 : 101;
      double want = 0.0;
      for (int bi = 0; bi < bins; ++bi) {
        const double r = static_cast<double>(bi) / (bins - 1);
        double best = 0.0;
        int tp = 0;
        for (int i = 0; i < n; ++i) {
          tp += labels[i] ? 1 : 0;
          const double recall = static_cast<double>(tp) / n_gt;
          const double precision = static_cast<double>(tp) / (i + 1);
          if (recall >= r) best = std::max(best, precision);
        }
        want += best;
      }
      want /= bins;
      EXPECT_DOUBLE_EQ(average_precision(labels, n_gt, interp), want);
    }
  }
}

TEST(AveragePrecision, InterpolatedCurveIsNonIncreasing) {
  std::mt19937 rng(73);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<bool> labels;
    for (int i = 0; i < 12; ++i) labels.push_back(u(rng) < 0.5);
    // Evaluate rho_interp on a fine grid via single-bin APs.
    double prev = 1.0;
    for (int bi = 0; bi <= 100; ++bi) {
      const double r = bi / 100.0;
      double best = 0.0;
      int tp = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        tp += labels[i] ? 1 : 0;
        if (static_cast<double>(tp) / 4 >= r) {
          best = std::max(best, static_cast<double>(tp) / (i + 1));
        }
      }
      EXPECT_LE(best, prev + 1e-12);
      prev = best;
    }
  }
}

TEST(Evaluate, HandEnumeratedFixture) {
  const auto table = identity_table({0});
  std::map<std::string, std::vector<GroundTruth>> gts;
  gts["a"] = {{0, {UnitQuaternion::identity(), {0, 0, 10}}}};
  gts["b"] = {{0, {UnitQuaternion::identity(), {2, 0, 12}}}};

  std::map<std::string, std::vector<Detection>> preds;
  preds["a"] = {make_pred(0.9, 0, {0, 0, 10}),    // exact TP
                make_pred(0.8, 0, {0, 0, 30})};   // 20 m off: FP everywhere
  preds["b"] = {make_pred(0.85, 0, {2, 0, 12.5})};  // 0.5 m off: TP for c0..c7

  const EvalReport rep =
      evaluate(preds, gts, LadderKind::Abs, Interp::Points101, table);
  ASSERT_EQ(rep.per_criterion.size(), 10u);
  // Sorted labels: [TP(0.9), TP(0.85), FP(0.8)] for c0..c7 -> AP 1.0;
  // [TP(0.9), FP, FP] for c8, c9 -> 51/101.
  for (int i = 0; i <= 7; ++i) EXPECT_DOUBLE_EQ(rep.per_criterion[i].ap, 1.0);
  for (int i = 8; i <= 9; ++i) EXPECT_DOUBLE_EQ(rep.per_criterion[i].ap, 51.0 / 101.0);
  EXPECT_DOUBLE_EQ(rep.mean_ap, (8.0 + 2.0 * 51.0 / 101.0) / 10.0);

  const EvalReport rep11 = evaluate(preds, gts, LadderKind::Abs, Interp::Points11, table);
  EXPECT_DOUBLE_EQ(rep11.mean_ap, (8.0 + 2.0 * 6.0 / 11.0) / 10.0);

  // Mean equals the average of the per-criterion APs.
  double sum = 0.0;
  for (const auto& c : rep.per_criterion) sum += c.ap;
  EXPECT_DOUBLE_EQ(rep.mean_ap, sum / 10.0);
}

TEST(Evaluate, PerfectAndShiftedPredictions) {
  const auto table = identity_table({0});
  std::map<std::string, std::vector<GroundTruth>> gts;
  gts["img"] = {{0, {UnitQuaternion::identity(), {0, 0, 10}}},
                {0, {UnitQuaternion::identity(), {4, 1, 25}}}};

  std::map<std::string, std::vector<Detection>> perfect;
  perfect["img"] = {make_pred(0.9, 0, {0, 0, 10}), make_pred(0.8, 0, {4, 1, 25})};
  const EvalReport rep = evaluate(perfect, gts, LadderKind::Abs, Interp::Points101, table);
  EXPECT_DOUBLE_EQ(rep.mean_ap, 1.0);

  // Shift every prediction by +3 m in z: even c0 (2.8 m) rejects them.
  std::map<std::string, std::vector<Detection>> shifted = perfect;
  for (auto& [id, dets] : shifted) {
    for (auto& d : dets) d.pose.translation.z += 3.0;
  }
  const EvalReport rep0 = evaluate(shifted, gts, LadderKind::Abs, Interp::Points101, table);
  EXPECT_DOUBLE_EQ(rep0.per_criterion[0].ap, 0.0);
  EXPECT_DOUBLE_EQ(rep0.mean_ap, 0.0);

  // 1.5 m translation errors pass c0 but fail c5 (1.3 m).
  std::map<std::string, std::vector<Detection>> off;
  off["img"] = {make_pred(0.9, 0, {0, 0, 11.5}), make_pred(0.8, 0, {4, 1, 26.5})};
  const EvalReport rep15 = evaluate(off, gts, LadderKind::Abs, Interp::Points101, table);
  EXPECT_DOUBLE_EQ(rep15.per_criterion[0].ap, 1.0);
  EXPECT_DOUBLE_EQ(rep15.per_criterion[5].ap, 0.0);

  // Unknown image id in predictions.
  std::map<std::string, std::vector<Detection>> bad;
  bad["nope"] = {make_pred(0.9, 0, {0, 0, 10})};
  EXPECT_THROW(evaluate(bad, gts, LadderKind::Abs, Interp::Points101, table),
               ImageIdMismatchError);
}

TEST(Evaluate, CriterionMonotonicity) {
  const auto table = identity_table({0, 1});
  std::mt19937 rng(79);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, std::vector<GroundTruth>> gts;
    std::map<std::string, std::vector<Detection>> preds;
    for (int img = 0; img < 2; ++img) {
      const std::string id = "img" + std::to_string(img);
      const int n_gt = 1 + static_cast<int>(u(rng) * 2);
      for (int g = 0; g < n_gt; ++g) {
        gts[id].push_back({static_cast<int>(u(rng) * 2),
                           {UnitQuaternion::identity(), {u(rng) * 8, u(rng) * 2, 8 + u(rng) * 20}}});
      }
      const int n_pred = static_cast<int>(u(rng) * 4);
      for (int p = 0; p < n_pred; ++p) {
        const GroundTruth& target = gts[id][static_cast<std::size_t>(u(rng) * n_gt)];
        const Vec3 jitter{(u(rng) - 0.5) * 3, (u(rng) - 0.5) * 3, (u(rng) - 0.5) * 3};
        preds[id].push_back(make_pred(
            u(rng), u(rng) < 0.8 ? target.class_id : 1 - target.class_id,
            target.pose.translation + jitter,
            UnitQuaternion::from_axis_angle({0, 1, 0}, (u(rng) - 0.5) * 1.5)));
      }
      if (preds[id].empty()) preds.erase(id);
    }
    for (LadderKind kind : {LadderKind::Abs, LadderKind::Rel}) {
      for (Interp interp : {Interp::Points11, Interp::Points101}) {
        const EvalReport rep = evaluate(preds, gts, kind, interp, table);
        for (int i = 1; i < 10; ++i) {
          EXPECT_LE(rep.per_criterion[i].ap, rep.per_criterion[i - 1].ap + 1e-12);
        }
      }
    }
  }
}

TEST(Evaluate, RemovingAFalsePositiveNeverDecreasesAP) {
  const auto table = identity_table({0});
  std::map<std::string, std::vector<GroundTruth>> gts;
  gts["img"] = {{0, {UnitQuaternion::identity(), {0, 0, 10}}}};

  std::map<std::string, std::vector<Detection>> with_fp;
  with_fp["img"] = {make_pred(0.95, 0, {0, 0, 50}),  // high-score FP
                    make_pred(0.9, 0, {0, 0, 10})};
  std::map<std::string, std::vector<Detection>> without_fp;
  without_fp["img"] = {make_pred(0.9, 0, {0, 0, 10})};

  for (Interp interp : {Interp::Points11, Interp::Points101}) {
    const double ap_with =
        evaluate(with_fp, gts, LadderKind::Abs, interp, table).mean_ap;
    const double ap_without =
        evaluate(without_fp, gts, LadderKind::Abs, interp, table).mean_ap;
    EXPECT_GE(ap_without, ap_with);
  }
}

// A low-score tail whose recall gain stays inside one 11-point bin: cutting
// it cannot change the 11-point AP (coarse bins swallow the lost recall)
// but strictly lowers the 101-point AP, the direction behind "miss
// detections are more penalised" under the fine interpolation. Note that
// with max-interpolation both APs are monotone in the prediction list, so
// no cutoff can strictly raise either one.
TEST(Evaluate, CutoffSensitivityDivergesBetweenInterpolators) {
  const int n_gt = 20;
  std::vector<bool> full, cut;
  for (int i = 0; i < 10; ++i) full.push_back(true);  // scores 0.99 .. 0.90
  for (int i = 0; i < 4; ++i) full.push_back(false);  // tail FPs ~0.4
  full.push_back(true);                               // tail TP at 0.3
  cut.assign(full.begin(), full.begin() + 10);        // cutoff at 0.5

  const double ap11_full = average_precision(full, n_gt, Interp::Points11);
  const double ap11_cut = average_precision(cut, n_gt, Interp::Points11);
  const double ap101_full = average_precision(full, n_gt, Interp::Points101);
  const double ap101_cut = average_precision(cut, n_gt, Interp::Points101);

  EXPECT_DOUBLE_EQ(ap11_cut, ap11_full);  // 11-point unaffected by the cutoff
  EXPECT_LT(ap101_cut, ap101_full);       // 101-point strictly penalised
}
