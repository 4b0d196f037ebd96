#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "ppd/eval.hpp"
#include "ppd/rng.hpp"
#include "ppd/trainer.hpp"

using ppd::RigidTransform;
using ppd::Vec3;

namespace fs = std::filesystem;

namespace {

ppd::NetConfig tiny_net() {
  ppd::NetConfig n;
  n.enc_hidden = 16;
  n.z_s = 8;
  n.z_p = 4;
  n.z_pc = 4;
  n.shape_hidden = 8;
  n.shape_layers = 2;
  n.pose_hidden = 8;
  n.pose_layers = 2;
  n.disc_hidden = 8;
  n.disc_hidden2 = 16;
  return n;
}

ppd::Dataset tiny_laptop(uint64_t seed) {
  ppd::GenConfig cfg;
  cfg.category = ppd::Category::kToyLaptop;
  cfg.samples = 1;
  cfg.poses = 3;
  cfg.test_samples = 1;
  cfg.test_poses = 2;
  cfg.seed = seed;
  cfg.surface_points = 128;
  cfg.occ_points = 256;
  fs::path dir = fs::temp_directory_path() /
                 ("ppd_eval_ds_" + std::to_string(seed));
  fs::remove_all(dir);
  ppd::generate_dataset(cfg, dir.string());
  auto ds = ppd::load_dataset(dir.string());
  fs::remove_all(dir);
  return ds;
}

}  // namespace

TEST(LabelMap, VoteTableOracle) {
  // three parts, two labels, crafted votes
  std::vector<std::vector<long>> votes = {{10, 2}, {0, 0}, {3, 30}};
  auto map = ppd::label_map_from_votes(votes);
  EXPECT_EQ(map.label_of_part[0], 0);
  EXPECT_EQ(map.label_of_part[1], -1);  // zero votes -> unused
  EXPECT_EQ(map.label_of_part[2], 1);
  EXPECT_EQ(map.votes_cast, 45);
  EXPECT_EQ(map.votes_counted(), map.votes_cast);

  // single part covering everything maps to the majority label
  auto single = ppd::label_map_from_votes({{7, 12}});
  EXPECT_EQ(single.label_of_part[0], 1);

  // two parts covering two labels -> identity-like map
  auto two = ppd::label_map_from_votes({{20, 1}, {2, 18}});
  EXPECT_EQ(two.label_of_part[0], 0);
  EXPECT_EQ(two.label_of_part[1], 1);
}

TEST(LabelMap, AssignPointRules) {
  // argmax among covering parts
  int p = ppd::assign_point({0.2, 0.9, 0.7}, {{}, {}, {}}, {0, 0, 0});
  EXPECT_EQ(p, 1);
  // nobody covers: nearest region point wins; empty regions never win
  int q = ppd::assign_point({0.1, 0.2, 0.3},
                            {{{1, 0, 0}}, {}, {{0.1, 0, 0}}}, {0, 0, 0});
  EXPECT_EQ(q, 2);
  // nothing reconstructed at all
  EXPECT_EQ(ppd::assign_point({0.1}, {{}}, {0, 0, 0}), -1);
}

TEST(LabelIou, CraftedOverlaps) {
  // identical assignments -> 1.0
  std::vector<int> gt = {0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(ppd::iou_from_assignments(gt, gt, 2), 1.0);
  // disjoint two-label fixture -> 0
  std::vector<int> flip = {1, 1, 1, 1, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(ppd::iou_from_assignments(flip, gt, 2), 0.0);
  // 75% / 50% per-label overlap -> 0.625
  std::vector<int> pred = {0, 0, 0, -1, 1, 1, -1, -1};
  EXPECT_DOUBLE_EQ(ppd::iou_from_assignments(pred, gt, 2), 0.625);
}

TEST(LabelIou, InvariantToPartPermutation) {
  // permuting reconstructed part indices permutes vote rows; the map keeps
  // the predicted label sequence identical
  std::vector<std::vector<long>> votes = {{10, 2}, {3, 30}};
  auto map_a = ppd::label_map_from_votes(votes);
  auto map_b = ppd::label_map_from_votes({{3, 30}, {10, 2}});
  std::vector<int> parts = {0, 1, 1, 0};
  std::vector<int> pred_a, pred_b;
  for (int part : parts) {
    pred_a.push_back(map_a.label_of_part[part]);
    pred_b.push_back(map_b.label_of_part[1 - part]);
  }
  EXPECT_EQ(pred_a, pred_b);
}

TEST(Epe, CoreIdentityAndScalarOracle) {
  ppd::Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 32; ++i)
    pts.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                   rng.uniform(-0.5, 0.5)});
  std::vector<int> assign(32, 0);
  std::vector<RigidTransform> deltas = {RigidTransform::identity()};
  std::vector<Vec3> zero_flow(32, {0, 0, 0});
  EXPECT_DOUBLE_EQ(ppd::epe_core(pts, assign, deltas, zero_flow), 0.0);

  // random rigid fixture with known assignment vs a scalar loop
  for (int trial = 0; trial < 5; ++trial) {
    ppd::JointParams jp;
    jp.e = Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}
               .normalized();
    jp.s = rng.uniform(0, 2);
    jp.q_c = {rng.uniform(-.2, .2), rng.uniform(-.2, .2), rng.uniform(-.2, .2)};
    RigidTransform delta =
        ppd::compose_part_pose(ppd::JointKind::kRevolute, jp);
    std::vector<RigidTransform> ds2 = {RigidTransform::identity(), delta};
    std::vector<int> asg;
    std::vector<Vec3> flow;
    for (int i = 0; i < 32; ++i) {
      asg.push_back(i % 2);
      flow.push_back({rng.uniform(-.1, .1), rng.uniform(-.1, .1),
                      rng.uniform(-.1, .1)});
    }
    double got = ppd::epe_core(pts, asg, ds2, flow);
    double want = 0;
    for (int i = 0; i < 32; ++i) {
      Vec3 pred = ds2[asg[i]].apply(pts[i]) - pts[i];
      want += (pred - flow[i]).norm();
    }
    want /= 32;
    ASSERT_NEAR(got, want, 1e-10);
  }
}

TEST(Epe, CanonicalTargetIsZero) {
  auto ds = tiny_laptop(7);
  auto model = ppd::Model<double>::init(tiny_net(), ppd::PartBudget{}, 3);
  ppd::EvalOptions opt;
  opt.eval_points = 64;
  int canon = ds.canonical_record_of_sample(0);
  double e = ppd::epe(model, ds, canon, canon, opt);
  EXPECT_LT(e, 1e-9);
}

TEST(Epe, IdentityBaselineEqualsMeanGtFlow) {
  auto ds = tiny_laptop(9);
  auto model = ppd::Model<double>::init(tiny_net(), ppd::PartBudget{}, 5);
  ppd::EvalOptions opt;
  opt.eval_points = 64;
  int canon = ds.canonical_record_of_sample(0);
  int target = ds.samples[0].record_indices[1];
  double base = ppd::epe(model, ds, target, canon, opt, true);
  // oracle: mean gt flow magnitude over the canonical surface points
  const auto& crec = ds.records[canon];
  const auto& trec = ds.records[target];
  double want = 0;
  for (int i = 0; i < 64; ++i) {
    Vec3 x{crec.surface[i * 3], crec.surface[i * 3 + 1],
           crec.surface[i * 3 + 2]};
    int part = crec.surface_labels[i];
    auto B = ppd::gt_part_pose(ds.samples[0].shape.parts[part],
                               trec.states[part]);
    want += (B.apply(x) - x).norm();
  }
  want /= 64;
  EXPECT_NEAR(base, want, 1e-9);
}

TEST(ChamferFscore, KnownCasesAndBruteForce) {
  ppd::Rng rng(11);
  std::vector<Vec3> a;
  for (int i = 0; i < 100; ++i)
    a.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                 rng.uniform(-0.5, 0.5)});
  auto same = ppd::chamfer_and_fscore(a, a, 0.01);
  EXPECT_DOUBLE_EQ(same.chamfer, 0.0);
  EXPECT_DOUBLE_EQ(same.fscore, 100.0);

  // offset by 2*tau along x -> F-score 0
  std::vector<Vec3> shifted;
  for (const auto& p : a) shifted.push_back({p.x + 0.02, p.y, p.z});
  auto off = ppd::chamfer_and_fscore(shifted, a, 0.01);
  EXPECT_DOUBLE_EQ(off.fscore, 0.0);

  // random 100-point sets vs a brute-force scan
  std::vector<Vec3> b;
  for (int i = 0; i < 100; ++i)
    b.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                 rng.uniform(-0.5, 0.5)});
  auto got = ppd::chamfer_and_fscore(a, b, 0.01);
  auto nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double mean = 0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      mean += best;
    }
    return mean / from.size();
  };
  double want = 0.5 * (nn(a, b) + nn(b, a));
  EXPECT_NEAR(got.chamfer, want, 1e-12);

  // monotone in tau
  double prev = -1;
  for (double tau : {0.005, 0.01, 0.02, 0.05, 0.2}) {
    double f = ppd::chamfer_and_fscore(a, b, tau).fscore;
    ASSERT_GE(f, prev);
    prev = f;
  }

  // empty reconstruction fallback
  auto empty = ppd::chamfer_and_fscore({}, a, 0.01);
  EXPECT_DOUBLE_EQ(empty.chamfer, 1.0);
  EXPECT_DOUBLE_EQ(empty.fscore, 0.0);
}

TEST(JointAccuracy, HandTabulatedThresholds) {
  // five parts with errors straddling the thresholds
  std::vector<ppd::JointErrors> errs(5);
  double degs[5] = {2, 8, 12, 40, 100};
  for (int i = 0; i < 5; ++i) {
    errs[i].exactly_one = true;
    errs[i].kind_match = true;
    errs[i].gt_kind = ppd::JointKind::kRevolute;
    errs[i].direction_error = degs[i];
  }
  errs[4].kind_match = false;  // drops out at every threshold
  EXPECT_DOUBLE_EQ(
      ppd::accuracy_at(errs, 5, &ppd::JointErrors::direction_error), 20.0);
  EXPECT_DOUBLE_EQ(
      ppd::accuracy_at(errs, 10, &ppd::JointErrors::direction_error), 40.0);
  EXPECT_DOUBLE_EQ(
      ppd::accuracy_at(errs, 15, &ppd::JointErrors::direction_error), 60.0);
  EXPECT_DOUBLE_EQ(
      ppd::accuracy_at(errs, 180, &ppd::JointErrors::direction_error), 80.0);
}

TEST(Integration, EvalPipelineRunsOnRandomModel) {
  auto ds = tiny_laptop(13);
  auto model = ppd::Model<double>::init(tiny_net(), ppd::PartBudget{}, 7);
  ppd::EvalOptions opt;
  opt.vote_points = 64;
  opt.eval_points = 64;
  auto train_ids = ds.record_ids("train");
  auto test_ids = ds.record_ids("test");
  int n_labels = static_cast<int>(ds.samples[0].shape.parts.size());

  auto map = ppd::build_label_map(model, ds, train_ids, opt, n_labels);
  EXPECT_EQ(map.votes_counted(), map.votes_cast);

  double iou = ppd::label_iou(model, map, ds, test_ids, opt, n_labels);
  EXPECT_GE(iou, 0.0);
  EXPECT_LE(iou, 100.0);

  double oiou = ppd::occupancy_iou(model, ds, test_ids, opt);
  EXPECT_GE(oiou, 0.0);
  EXPECT_LE(oiou, 1.0);

  auto ja = ppd::joint_accuracy(model, map, ds, test_ids, opt);
  for (double a : ja.direction_acc) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 100.0);
  }
  EXPECT_GE(ja.parts_per_gt_part, 0.0);

  // correlation helper returns a value in [-1, 1]
  double r = ppd::state_correlation(model, ds, test_ids, 1, 1, opt);
  EXPECT_GE(r, -1.0);
  EXPECT_LE(r, 1.0);
}
