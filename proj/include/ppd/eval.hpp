#pragma once

// Metric suite and the unsupervised part-labeling protocol: vote-based
// label maps, label IoU, endpoint error, Chamfer-L1 / F-score and joint
// parameter accuracy.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppd/datagen.hpp"
#include "ppd/fields.hpp"
#include "ppd/geometry.hpp"
#include "ppd/nets.hpp"

namespace ppd {

// ---------------------------------------------------------------------------
// label map

struct PartLabelMap {
  std::vector<int> label_of_part;  // -1 marks an unused part
  std::vector<std::vector<long>> votes;  // [part][gt label]
  long votes_cast = 0;

  long votes_counted() const {
    long acc = 0;
    for (const auto& row : votes)
      for (long v : row) acc += v;
    return acc;
  }
};

// Nearest reconstructed part for one point: the indicator argmax when any
// part covers the point (indicator > 0.5), otherwise the part with the
// nearest sampled region point. Parts with no region anywhere never win the
// fallback. Returns -1 only if nothing is reconstructed at all.
inline int assign_point(const std::vector<double>& part_indicators,
                        const std::vector<std::vector<Vec3>>& part_regions,
                        const Vec3& x) {
  int best = -1;
  double best_val = 0.5;
  for (size_t i = 0; i < part_indicators.size(); ++i)
    if (part_indicators[i] > best_val) {
      best_val = part_indicators[i];
      best = static_cast<int>(i);
    }
  if (best >= 0) return best;
  double best_d = 0;
  for (size_t i = 0; i < part_regions.size(); ++i)
    for (const auto& p : part_regions[i]) {
      double d = (p - x).norm();
      if (best < 0 || d < best_d) {
        best = static_cast<int>(i);
        best_d = d;
      }
    }
  return best;
}

inline PartLabelMap label_map_from_votes(
    const std::vector<std::vector<long>>& votes) {
  PartLabelMap map;
  map.votes = votes;
  for (const auto& row : votes) {
    long best_v = 0;
    int best_l = -1;
    for (size_t l = 0; l < row.size(); ++l)
      if (row[l] > best_v) {
        best_v = row[l];
        best_l = static_cast<int>(l);
      }
    map.label_of_part.push_back(best_l);  // zero votes -> unused
  }
  for (const auto& row : votes)
    for (long v : row) map.votes_cast += v;
  return map;
}

// ---------------------------------------------------------------------------
// per-instance evaluation context

struct EvalOptions {
  int vote_points = 1024;    // surface points per instance when voting
  int eval_points = 4096;    // surface points per instance when scoring
  int region_grid = 16;      // grid used for part regions / fallback
  double tau = 0.01;         // F-score threshold
  bool use_rz = true;        // stage-2 checkpoints decode the full residual
};

template <class T>
struct InstanceEval {
  InstancePose pose;
  std::vector<Vec3> surface;
  std::vector<uint8_t> surface_labels;
  std::vector<std::vector<double>> part_ind_at_surface;
  std::vector<std::vector<Vec3>> part_regions;
};

template <class T>
InstanceEval<T> eval_instance(const Model<T>& model, const InstanceRecord& rec,
                              const EvalOptions& opt, int max_points) {
  InstanceEval<T> ev;
  const int P = static_cast<int>(rec.surface.size() / 3);
  const int take = max_points > 0 ? std::min(P, max_points) : P;
  for (int i = 0; i < take; ++i)
    ev.surface.push_back({rec.surface[i * 3], rec.surface[i * 3 + 1],
                          rec.surface[i * 3 + 2]});
  ev.surface_labels.assign(rec.surface_labels.begin(),
                           rec.surface_labels.begin() + take);
  ev.pose = decode_instance(model, ev.surface, opt.use_rz);

  auto fs_surface = eval_field_values(model, ev.pose, ev.surface);
  ev.part_ind_at_surface = std::move(fs_surface.per_part);

  auto grid_pts = grid_cell_centers(opt.region_grid);
  auto fs_grid = eval_field_values(model, ev.pose, grid_pts);
  ev.part_regions.resize(model.part_count());
  for (int i = 0; i < model.part_count(); ++i)
    for (size_t k = 0; k < grid_pts.size(); ++k)
      if (fs_grid.per_part[i][k] > 0.5)
        ev.part_regions[i].push_back(grid_pts[k]);
  return ev;
}

template <class T>
int nearest_part_of(const InstanceEval<T>& ev, int point_idx) {
  std::vector<double> vals;
  for (const auto& pv : ev.part_ind_at_surface) vals.push_back(pv[point_idx]);
  return assign_point(vals, ev.part_regions, ev.surface[point_idx]);
}

// Appendix-style labeling: every training surface point votes for its
// ground-truth label on the nearest reconstructed part.
template <class T>
PartLabelMap build_label_map(const Model<T>& model, const Dataset& data,
                             const std::vector<int>& record_ids,
                             const EvalOptions& opt, int n_gt_labels) {
  std::vector<std::vector<long>> votes(
      model.part_count(), std::vector<long>(n_gt_labels, 0));
  bool any = false;
  for (int rid : record_ids) {
    auto ev = eval_instance(model, data.records[rid], opt, opt.vote_points);
    for (const auto& reg : ev.part_regions) any = any || !reg.empty();
    for (size_t p = 0; p < ev.surface.size(); ++p) {
      int part = nearest_part_of(ev, static_cast<int>(p));
      if (part >= 0) votes[part][ev.surface_labels[p]]++;
    }
  }
  if (!any)
    throw std::runtime_error(
        "build_label_map: model reconstructs nothing on the given instances");
  return label_map_from_votes(votes);
}

// ---------------------------------------------------------------------------
// label IoU

// Per-label IoU of two assignment sequences, averaged over the labels
// present in the ground truth.
inline double iou_from_assignments(const std::vector<int>& pred,
                                   const std::vector<int>& gt, int n_labels) {
  double acc = 0;
  int used = 0;
  for (int l = 0; l < n_labels; ++l) {
    long inter = 0, uni = 0, gt_count = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      bool p = pred[i] == l, g = gt[i] == l;
      inter += p && g;
      uni += p || g;
      gt_count += g;
    }
    if (gt_count == 0) continue;
    acc += uni ? double(inter) / double(uni) : 0.0;
    ++used;
  }
  return used ? acc / used : 0.0;
}

template <class T>
double label_iou(const Model<T>& model, const PartLabelMap& map,
                 const Dataset& data, const std::vector<int>& record_ids,
                 const EvalOptions& opt, int n_gt_labels) {
  double acc = 0;
  for (int rid : record_ids) {
    auto ev = eval_instance(model, data.records[rid], opt, opt.eval_points);
    std::vector<int> pred, gt;
    for (size_t p = 0; p < ev.surface.size(); ++p) {
      int part = nearest_part_of(ev, static_cast<int>(p));
      pred.push_back(part >= 0 ? map.label_of_part[part] : -1);
      gt.push_back(ev.surface_labels[p]);
    }
    acc += iou_from_assignments(pred, gt, n_gt_labels);
  }
  return record_ids.empty() ? 0.0 : 100.0 * acc / record_ids.size();
}

// ---------------------------------------------------------------------------
// endpoint error

// Core: mean ||(Delta_i x - x) - gt_flow|| over points with an assignment.
inline double epe_core(const std::vector<Vec3>& points,
                       const std::vector<int>& assignment,
                       const std::vector<RigidTransform>& deltas,
                       const std::vector<Vec3>& gt_flow) {
  double acc = 0;
  long n = 0;
  for (size_t i = 0; i < points.size(); ++i) {
    int part = assignment[i];
    Vec3 pred = part >= 0 ? deltas[part].apply(points[i]) - points[i]
                          : Vec3{0, 0, 0};
    acc += (pred - gt_flow[i]).norm();
    ++n;
  }
  return n ? acc / n : 0.0;
}

// Estimated deformation between a target instance and the canonically posed
// instance of the same sample, measured on the canonical gt surface points.
// With `identity_baseline` the predicted flow is zero everywhere.
template <class T>
double epe(const Model<T>& model, const Dataset& data, int target_rid,
           int canonical_rid, const EvalOptions& opt,
           bool identity_baseline = false) {
  const InstanceRecord& target = data.records[target_rid];
  const InstanceRecord& canon = data.records[canonical_rid];
  const SampledShape& shape = data.samples[target.sample_id].shape;

  auto ev_c = eval_instance(model, canon, opt, opt.eval_points);
  auto pose_t = decode_instance(
      model,
      [&] {
        std::vector<Vec3> pts;
        const int P = static_cast<int>(target.surface.size() / 3);
        int take = opt.eval_points > 0 ? std::min(P, opt.eval_points) : P;
        for (int i = 0; i < take; ++i)
          pts.push_back({target.surface[i * 3], target.surface[i * 3 + 1],
                         target.surface[i * 3 + 2]});
        return pts;
      }(),
      opt.use_rz);

  std::vector<RigidTransform> deltas;
  for (size_t i = 0; i < pose_t.poses.size(); ++i)
    deltas.push_back(identity_baseline
                         ? RigidTransform::identity()
                         : pose_t.poses[i].compose(ev_c.pose.poses[i].inverse()));

  std::vector<int> assignment;
  for (size_t p = 0; p < ev_c.surface.size(); ++p)
    assignment.push_back(identity_baseline
                             ? -1
                             : nearest_part_of(ev_c, static_cast<int>(p)));

  std::vector<Vec3> gt_flow;
  for (size_t p = 0; p < ev_c.surface.size(); ++p) {
    int gt_part = ev_c.surface_labels[p];
    RigidTransform gt_pose =
        gt_part_pose(shape.parts[gt_part], target.states[gt_part]);
    gt_flow.push_back(gt_pose.apply(ev_c.surface[p]) - ev_c.surface[p]);
  }
  return epe_core(ev_c.surface, assignment, deltas, gt_flow);
}

// ---------------------------------------------------------------------------
// chamfer / f-score

struct ChamferFscore {
  double chamfer = 0;  // L1 (mean of the two directed means)
  double fscore = 0;   // percent
};

inline ChamferFscore chamfer_and_fscore(const std::vector<Vec3>& pred,
                                        const std::vector<Vec3>& gt,
                                        double tau = 0.01) {
  ChamferFscore out;
  if (pred.empty() || gt.empty()) {
    out.chamfer = 1.0;  // fallback for empty reconstructions
    out.fscore = 0.0;
    return out;
  }
  auto directed = [](const std::vector<Vec3>& from,
                     const std::vector<Vec3>& to, double tau, double* within) {
    double mean = 0;
    long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : mean, hits)
    for (long i = 0; i < static_cast<long>(from.size()); ++i) {
      double best = 1e300;
      for (const auto& q : to) {
        double dx = from[i].x - q.x, dy = from[i].y - q.y,
               dz = from[i].z - q.z;
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      best = std::sqrt(best);
      mean += best;
      hits += best < tau;
    }
    *within = double(hits) / from.size();
    return mean / from.size();
  };
  double precision = 0, recall = 0;
  double d_pred = directed(pred, gt, tau, &precision);
  double d_gt = directed(gt, pred, tau, &recall);
  out.chamfer = 0.5 * (d_pred + d_gt);
  out.fscore = precision + recall > 0
                   ? 100.0 * 2 * precision * recall / (precision + recall)
                   : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// joint parameter accuracy

struct JointErrors {
  bool exactly_one = false;
  bool kind_match = false;
  double state_error = 1e9;      // degrees (revolute) or length (prismatic)
  double direction_error = 1e9;  // degrees, folded
  double axis_distance = 1e9;    // revolute only
  JointKind gt_kind = JointKind::kFixed;
};

// Accuracy at a threshold: all three conditions hold (single assignment,
// kind match, error under the threshold).
inline double accuracy_at(const std::vector<JointErrors>& errs, double thresh,
                          double JointErrors::*field) {
  if (errs.empty()) return 0;
  long ok = 0;
  for (const auto& e : errs)
    ok += e.exactly_one && e.kind_match && e.*field < thresh;
  return 100.0 * ok / errs.size();
}

struct JointAccuracy {
  std::vector<double> thresholds_deg;      // for state (revolute) / direction
  std::vector<double> thresholds_len;      // for prismatic state / axis dist
  std::vector<double> state_acc;           // per threshold (deg for revolute,
                                           // len for prismatic, matched kind)
  std::vector<double> direction_acc;
  std::vector<double> axis_dist_acc;
  double part_type_accuracy = 0;           // percent over gt dynamic parts
  double parts_per_gt_part = 0;            // mean assigned count
  json to_json() const {
    return {{"thresholds_deg", thresholds_deg},
            {"thresholds_len", thresholds_len},
            {"state_acc", state_acc},
            {"direction_acc", direction_acc},
            {"axis_dist_acc", axis_dist_acc},
            {"part_type_accuracy", part_type_accuracy},
            {"parts_per_gt_part", parts_per_gt_part}};
  }
};

template <class T>
JointAccuracy joint_accuracy(const Model<T>& model, const PartLabelMap& map,
                             const Dataset& data,
                             const std::vector<int>& record_ids,
                             const EvalOptions& opt,
                             std::vector<double> thresholds_deg = {5, 10, 15,
                                                                   30, 45, 90},
                             std::vector<double> thresholds_len = {
                                 0.01, 0.025, 0.05, 0.1, 0.2, 0.4}) {
  JointAccuracy out;
  out.thresholds_deg = thresholds_deg;
  out.thresholds_len = thresholds_len;

  // gt dynamic parts exist per sample; identify by part index in the shape
  std::vector<JointErrors> errs;     // one entry per (record, gt dynamic part)
  std::map<int, std::vector<int>> assigned;  // gt label -> recon parts
  for (size_t i = 0; i < map.label_of_part.size(); ++i)
    if (map.label_of_part[i] >= 0)
      assigned[map.label_of_part[i]].push_back(static_cast<int>(i));

  long type_ok = 0, type_total = 0, assigned_total = 0;
  bool counted_types = false;
  std::vector<double> per_part_counts;

  for (int rid : record_ids) {
    const InstanceRecord& rec = data.records[rid];
    const SampledShape& shape = data.samples[rec.sample_id].shape;
    std::vector<Vec3> pts;
    const int P = static_cast<int>(rec.surface.size() / 3);
    int take = opt.eval_points > 0 ? std::min(P, opt.eval_points) : P;
    for (int i = 0; i < take; ++i)
      pts.push_back({rec.surface[i * 3], rec.surface[i * 3 + 1],
                     rec.surface[i * 3 + 2]});
    auto pose = decode_instance(model, pts, opt.use_rz);

    for (size_t g = 0; g < shape.parts.size(); ++g) {
      const auto& gt = shape.parts[g].joint;
      if (gt.kind == JointKind::kFixed) continue;
      JointErrors e;
      e.gt_kind = gt.kind;
      auto it = assigned.find(static_cast<int>(g));
      int count = it == assigned.end() ? 0 : static_cast<int>(it->second.size());
      e.exactly_one = count == 1;
      if (!counted_types) {
        ++type_total;
        assigned_total += count;
        per_part_counts.push_back(count);
      }
      if (e.exactly_one) {
        int part = it->second[0];
        const auto& spec = model.part_table()[part];
        e.kind_match = spec.kind == gt.kind;
        if (!counted_types && e.kind_match) ++type_ok;
        if (e.kind_match) {
          const JointParams& jp = pose.joints[part];
          double s_pred = pose.states[part];
          double s_gt = rec.states[g];
          if (gt.kind == JointKind::kRevolute)
            e.state_error = std::abs(s_pred - s_gt) * 180.0 / kPiD;
          else
            e.state_error = std::abs(s_pred - s_gt);
          Vec3 u_pred = jp.direction();
          e.direction_error = folded_angle_deg(u_pred, gt.axis);
          if (gt.kind == JointKind::kRevolute)
            e.axis_distance =
                line_line_distance(jp.q(), u_pred, gt.pivot, gt.axis);
        }
      }
      errs.push_back(e);
    }
    counted_types = true;  // the map is global; count types once
  }

  if (thresholds_len.size() != thresholds_deg.size())
    throw std::runtime_error(
        "joint_accuracy: angle/length threshold lists must pair up");
  for (size_t k = 0; k < thresholds_deg.size(); ++k) {
    // state accuracy uses degrees for revolute parts, lengths for prismatic
    long ok = 0;
    for (const auto& e : errs) {
      double thr = e.gt_kind == JointKind::kRevolute ? thresholds_deg[k]
                                                     : thresholds_len[k];
      ok += e.exactly_one && e.kind_match && e.state_error < thr;
    }
    out.state_acc.push_back(errs.empty() ? 0 : 100.0 * ok / errs.size());
    out.direction_acc.push_back(
        accuracy_at(errs, thresholds_deg[k], &JointErrors::direction_error));
    out.axis_dist_acc.push_back(
        accuracy_at(errs, thresholds_len[k], &JointErrors::axis_distance));
  }

  out.part_type_accuracy = type_total ? 100.0 * type_ok / type_total : 0.0;
  out.parts_per_gt_part =
      type_total ? double(assigned_total) / type_total : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// aggregate helpers

// Mean IoU between the binarized reconstructed occupancy grid and the
// ground-truth grid of each record.
template <class T>
double occupancy_iou(const Model<T>& model, const Dataset& data,
                     const std::vector<int>& record_ids,
                     const EvalOptions& opt) {
  double acc = 0;
  for (int rid : record_ids) {
    const InstanceRecord& rec = data.records[rid];
    std::vector<Vec3> pts;
    const int P = static_cast<int>(rec.surface.size() / 3);
    int take = opt.eval_points > 0 ? std::min(P, opt.eval_points) : P;
    for (int i = 0; i < take; ++i)
      pts.push_back({rec.surface[i * 3], rec.surface[i * 3 + 1],
                     rec.surface[i * 3 + 2]});
    auto pose = decode_instance(model, pts, opt.use_rz);
    auto grid = sample_grid(model, pose, 16);
    long inter = 0, uni = 0;
    for (size_t k = 0; k < grid.values.size(); ++k) {
      bool p = grid.values[k] > 0.5, g = rec.ind16[k] > 0;
      inter += p && g;
      uni += p || g;
    }
    acc += uni ? double(inter) / uni : 1.0;
  }
  return record_ids.empty() ? 0.0 : acc / record_ids.size();
}

// Pearson correlation between the predicted joint state of one recon part
// and the gt state of one gt part over a set of records.
template <class T>
double state_correlation(const Model<T>& model, const Dataset& data,
                         const std::vector<int>& record_ids, int recon_part,
                         int gt_part, const EvalOptions& opt) {
  std::vector<double> xs, ys;
  for (int rid : record_ids) {
    const InstanceRecord& rec = data.records[rid];
    std::vector<Vec3> pts;
    const int P = static_cast<int>(rec.surface.size() / 3);
    int take = opt.eval_points > 0 ? std::min(P, opt.eval_points) : P;
    for (int i = 0; i < take; ++i)
      pts.push_back({rec.surface[i * 3], rec.surface[i * 3 + 1],
                     rec.surface[i * 3 + 2]});
    auto pose = decode_instance(model, pts, opt.use_rz);
    xs.push_back(pose.states[recon_part]);
    ys.push_back(rec.states[gt_part]);
  }
  const size_t n = xs.size();
  if (n < 2) return 0;
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx < 1e-18 || syy < 1e-18) return 0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ppd
