#pragma once

// Procedural articulated categories with analytic occupancy: three toy
// categories (laptop, drawer, eyeglasses) built from unions of boxes with
// exact ground-truth labels, joint parameters and per-pose states. Replaces
// mesh-fusion pipelines at desk scale with the same downstream contract.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppd/config.hpp"
#include "ppd/fields.hpp"
#include "ppd/geometry.hpp"
#include "ppd/rng.hpp"
#include "ppd/version.hpp"

namespace ppd {

enum class Category { kToyLaptop, kToyDrawer, kToyEyeglasses };

inline const char* category_name(Category c) {
  switch (c) {
    case Category::kToyLaptop: return "toy-laptop";
    case Category::kToyDrawer: return "toy-drawer";
    case Category::kToyEyeglasses: return "toy-eyeglasses";
  }
  return "?";
}

inline Category category_from(const std::string& s) {
  if (s == "toy-laptop") return Category::kToyLaptop;
  if (s == "toy-drawer") return Category::kToyDrawer;
  if (s == "toy-eyeglasses") return Category::kToyEyeglasses;
  throw std::runtime_error("unknown category '" + s +
                           "' (toy-laptop | toy-drawer | toy-eyeglasses)");
}

// Axis-aligned box in the part's rest frame.
struct Box {
  Vec3 center;
  Vec3 half;
};

struct GtJoint {
  JointKind kind = JointKind::kFixed;
  Vec3 axis{1, 0, 0};
  Vec3 pivot{0, 0, 0};
  double max_state = 0;  // radians (revolute) or length (prismatic)
};

struct PartTemplate {
  std::vector<Box> boxes;
  GtJoint joint;
};

struct SampledShape {
  Category category = Category::kToyLaptop;
  uint64_t seed = 0;
  std::vector<PartTemplate> parts;  // part 0 is the fixed base
  Vec3 norm_center{0, 0, 0};        // recorded normalization
  double norm_scale = 1.0;
};

// Ground-truth pose of a part at a given joint state (physical articulation:
// revolute parts rotate about the axis through the pivot).
inline RigidTransform gt_part_pose(const PartTemplate& p, double state) {
  switch (p.joint.kind) {
    case JointKind::kFixed: return RigidTransform::identity();
    case JointKind::kPrismatic:
      return RigidTransform::translation(p.joint.axis * state);
    case JointKind::kRevolute:
      return rotation_about_line(p.joint.axis, state, p.joint.pivot);
  }
  return RigidTransform::identity();
}

inline std::array<Vec3, 8> box_corners(const Box& b) {
  std::array<Vec3, 8> c;
  int k = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        c[k++] = {b.center.x + sx * b.half.x, b.center.y + sy * b.half.y,
                  b.center.z + sz * b.half.z};
  return c;
}

// ---------------------------------------------------------------------------
// category builders (raw, unnormalized)

namespace detail_gen {

inline SampledShape build_laptop(Rng& rng) {
  SampledShape s;
  s.category = Category::kToyLaptop;
  double hx = rng.uniform(0.20, 0.28);
  double hy = rng.uniform(0.25, 0.35);
  double hz = rng.uniform(0.012, 0.025);
  double lhx = hx * rng.uniform(0.92, 1.0);
  double lhy = hy * rng.uniform(0.95, 1.0);
  double lhz = rng.uniform(0.008, 0.018);

  PartTemplate base;
  base.boxes.push_back({{0, 0, 0}, {hx, hy, hz}});
  base.joint.kind = JointKind::kFixed;
  s.parts.push_back(base);

  // lid rests on the base, hinged along +y at the x = +hx edge; positive
  // states swing the far edge upward
  PartTemplate lid;
  lid.boxes.push_back({{hx - lhx, 0, hz + lhz}, {lhx, lhy, lhz}});
  lid.joint.kind = JointKind::kRevolute;
  lid.joint.axis = {0, 1, 0};
  lid.joint.pivot = {hx, 0, hz + lhz};
  lid.joint.max_state = 135.0 * kPiD / 180.0;
  s.parts.push_back(lid);
  return s;
}

inline SampledShape build_drawer(Rng& rng) {
  SampledShape s;
  s.category = Category::kToyDrawer;
  double HX = rng.uniform(0.25, 0.35);
  double HY = rng.uniform(0.18, 0.28);
  double HZ = rng.uniform(0.15, 0.25);
  double t = rng.uniform(0.015, 0.03);
  double gap = 0.006;

  PartTemplate shell;  // open toward +x
  shell.boxes.push_back({{-HX + t, 0, 0}, {t, HY, HZ}});                 // back
  shell.boxes.push_back({{0, -(HY - t), 0}, {HX, t, HZ}});               // left
  shell.boxes.push_back({{0, HY - t, 0}, {HX, t, HZ}});                  // right
  shell.boxes.push_back({{0, 0, -(HZ - t)}, {HX, HY - 2 * t, t}});       // bottom
  shell.boxes.push_back({{0, 0, HZ - t}, {HX, HY - 2 * t, t}});          // top
  shell.joint.kind = JointKind::kFixed;
  s.parts.push_back(shell);

  PartTemplate drawer;
  double dx0 = -HX + 2 * t + gap;
  double half_dx = (HX - dx0) / 2;
  drawer.boxes.push_back({{dx0 + half_dx, 0, 0},
                          {half_dx, HY - 2 * t - gap, HZ - 2 * t - gap}});
  drawer.joint.kind = JointKind::kPrismatic;
  drawer.joint.axis = {1, 0, 0};
  drawer.joint.max_state = rng.uniform(0.5, 0.8) * 2 * half_dx;
  s.parts.push_back(drawer);
  return s;
}

inline SampledShape build_eyeglasses(Rng& rng) {
  SampledShape s;
  s.category = Category::kToyEyeglasses;
  double W = rng.uniform(0.22, 0.30);   // frame half width (y)
  double fx = rng.uniform(0.010, 0.020);
  double fz = rng.uniform(0.05, 0.09);
  double L = rng.uniform(0.35, 0.50);   // temple length
  double tt = rng.uniform(0.008, 0.015);
  double tz = fz * rng.uniform(0.35, 0.6);

  PartTemplate frame;
  frame.boxes.push_back({{0, 0, 0}, {fx, W, fz}});
  frame.joint.kind = JointKind::kFixed;
  s.parts.push_back(frame);

  // temples extend toward -x and fold inward about +-z
  for (int side : {+1, -1}) {
    PartTemplate temple;
    temple.boxes.push_back({{-fx - L / 2, side * (W - tt), 0},
                            {L / 2, tt, tz}});
    temple.joint.kind = JointKind::kRevolute;
    temple.joint.axis = {0, 0, side > 0 ? 1.0 : -1.0};
    temple.joint.pivot = {-fx, side * (W - tt), 0};
    temple.joint.max_state = 90.0 * kPiD / 180.0;
    s.parts.push_back(temple);
  }
  return s;
}

}  // namespace detail_gen

// Per-category box extents and ground-truth joints derived from the box
// geometry; deterministic given the seed.
inline SampledShape sample_shape(Category cat, uint64_t seed) {
  Rng rng(seed);
  SampledShape s;
  switch (cat) {
    case Category::kToyLaptop: s = detail_gen::build_laptop(rng); break;
    case Category::kToyDrawer: s = detail_gen::build_drawer(rng); break;
    case Category::kToyEyeglasses: s = detail_gen::build_eyeglasses(rng); break;
  }
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// pose sampling + normalization

struct PoseStates {
  std::vector<double> states;  // one per part, 0 for fixed
  bool canonical = false;
};

struct PosedSampleSet {
  SampledShape shape;  // normalized
  std::vector<PoseStates> instances;
};

// Instance 0 is the canonical pose (all states zero); the rest draw each
// joint state uniformly from its range. The shape is then normalized so the
// maximum extent over the whole pose set becomes exactly 1, centered at the
// origin. Prismatic states scale with the shape; angles do not.
inline PosedSampleSet sample_poses(const SampledShape& raw, int n,
                                   uint64_t seed) {
  if (n < 1) throw std::runtime_error("sample_poses: need n >= 1");
  PosedSampleSet out;
  out.shape = raw;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (int i = 0; i < n; ++i) {
    PoseStates ps;
    ps.canonical = i == 0;
    for (const auto& part : raw.parts) {
      double s = 0;
      if (i > 0 && part.joint.kind != JointKind::kFixed)
        s = rng.uniform(0.0, part.joint.max_state);
      ps.states.push_back(s);
    }
    out.instances.push_back(ps);
  }

  // bounding box over the full pose set from posed box corners
  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  for (const auto& inst : out.instances)
    for (size_t p = 0; p < raw.parts.size(); ++p) {
      RigidTransform B = gt_part_pose(raw.parts[p], inst.states[p]);
      for (const auto& box : raw.parts[p].boxes)
        for (const auto& c : box_corners(box)) {
          Vec3 w = B.apply(c);
          lo = {std::min(lo.x, w.x), std::min(lo.y, w.y), std::min(lo.z, w.z)};
          hi = {std::max(hi.x, w.x), std::max(hi.y, w.y), std::max(hi.z, w.z)};
        }
    }
  Vec3 center = (lo + hi) * 0.5;
  double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  double scale = 1.0 / extent;

  SampledShape& s = out.shape;
  s.norm_center = center;
  s.norm_scale = scale;
  for (auto& part : s.parts) {
    for (auto& box : part.boxes) {
      box.center = (box.center - center) * scale;
      box.half = box.half * scale;
    }
    if (part.joint.kind != JointKind::kFixed) {
      part.joint.pivot = (part.joint.pivot - center) * scale;
      if (part.joint.kind == JointKind::kPrismatic)
        part.joint.max_state *= scale;
    }
  }
  for (auto& inst : out.instances)
    for (size_t p = 0; p < s.parts.size(); ++p)
      if (s.parts[p].joint.kind == JointKind::kPrismatic)
        inst.states[p] *= scale;
  return out;
}

// ---------------------------------------------------------------------------
// analytic occupancy and surface sampling

inline bool point_in_box(const Vec3& local, const Box& b, double pad = 0.0) {
  return std::abs(local.x - b.center.x) <= b.half.x + pad &&
         std::abs(local.y - b.center.y) <= b.half.y + pad &&
         std::abs(local.z - b.center.z) <= b.half.z + pad;
}

// indicator 1 iff the point, mapped into a part's rest frame by the inverse
// ground-truth pose, lies inside one of that part's boxes; the label is the
// containing part, ties resolved by the nearest posed box center.
inline void analytic_occupancy(const SampledShape& shape,
                               const std::vector<double>& states,
                               const std::vector<Vec3>& coords,
                               std::vector<uint8_t>* indicators,
                               std::vector<uint8_t>* labels) {
  const size_t n = coords.size();
  indicators->assign(n, 0);
  labels->assign(n, 0);
  std::vector<RigidTransform> inv;
  for (size_t p = 0; p < shape.parts.size(); ++p)
    inv.push_back(gt_part_pose(shape.parts[p], states[p]).inverse());
  for (size_t i = 0; i < n; ++i) {
    int best_part = -1;
    double best_center_d = 0;
    for (size_t p = 0; p < shape.parts.size(); ++p) {
      Vec3 local = inv[p].apply(coords[i]);
      for (const auto& box : shape.parts[p].boxes) {
        if (!point_in_box(local, box)) continue;
        double d = (local - box.center).norm();
        if (best_part < 0 || d < best_center_d) {
          best_part = static_cast<int>(p);
          best_center_d = d;
        }
      }
    }
    if (best_part >= 0) {
      (*indicators)[i] = 1;
      (*labels)[i] = static_cast<uint8_t>(best_part);
    }
  }
}

// Area-weighted sampling on box faces, transformed by the ground-truth
// poses; points falling strictly inside the union of boxes are rejected so
// only visible surface remains.
inline void surface_sample(const SampledShape& shape,
                           const std::vector<double>& states, int count,
                           Rng& rng, std::vector<Vec3>* points,
                           std::vector<uint8_t>* labels) {
  struct Face {
    int part, box, axis, sign;
    double area;
  };
  std::vector<Face> faces;
  double total_area = 0;
  for (size_t p = 0; p < shape.parts.size(); ++p)
    for (size_t b = 0; b < shape.parts[p].boxes.size(); ++b) {
      const Vec3 h = shape.parts[p].boxes[b].half;
      const double areas[3] = {4 * h.y * h.z, 4 * h.x * h.z, 4 * h.x * h.y};
      for (int axis = 0; axis < 3; ++axis)
        for (int sign : {-1, 1}) {
          faces.push_back({int(p), int(b), axis, sign, areas[axis]});
          total_area += areas[axis];
        }
    }
  std::vector<double> cum;
  double acc = 0;
  for (const auto& f : faces) cum.push_back(acc += f.area);

  std::vector<RigidTransform> pose, inv;
  for (size_t p = 0; p < shape.parts.size(); ++p) {
    pose.push_back(gt_part_pose(shape.parts[p], states[p]));
    inv.push_back(pose.back().inverse());
  }
  const double eps = 1e-9;
  points->clear();
  labels->clear();
  long attempts = 0, max_attempts = 400L * count + 10000;
  while (static_cast<int>(points->size()) < count) {
    if (++attempts > max_attempts)
      throw std::runtime_error("surface_sample: rejection cap exceeded");
    double u = rng.uniform() * total_area;
    size_t fi = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (fi >= faces.size()) fi = faces.size() - 1;
    const Face& f = faces[fi];
    const Box& box = shape.parts[f.part].boxes[f.box];
    Vec3 local = box.center;
    double uv[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    int k = 0;
    for (int axis = 0; axis < 3; ++axis) {
      double h = axis == 0 ? box.half.x : axis == 1 ? box.half.y : box.half.z;
      double off = axis == f.axis ? f.sign * h : uv[k++] * h;
      if (axis == 0) local.x += off;
      if (axis == 1) local.y += off;
      if (axis == 2) local.z += off;
    }
    Vec3 world = pose[f.part].apply(local);
    // reject points strictly inside any box (occluded contact surface)
    bool hidden = false;
    for (size_t p = 0; p < shape.parts.size() && !hidden; ++p) {
      Vec3 lp = inv[p].apply(world);
      for (const auto& ob : shape.parts[p].boxes) {
        if (int(p) == f.part && &ob == &box) continue;
        if (point_in_box(lp, ob, -eps)) {
          hidden = true;
          break;
        }
      }
    }
    if (hidden) continue;
    points->push_back(world);
    labels->push_back(static_cast<uint8_t>(f.part));
  }
}

// ---------------------------------------------------------------------------
// dataset records

struct InstanceRecord {
  int sample_id = 0, pose_id = 0;
  bool canonical = false;
  std::vector<float> surface;  // P*3
  std::vector<uint8_t> surface_labels;
  std::vector<float> occ16;
  std::vector<uint8_t> ind16, lab16;
  std::vector<float> occ32;
  std::vector<uint8_t> ind32, lab32;
  std::vector<float> states;  // per part
};

struct SampleEntry {
  int id = 0;
  std::string split;  // "train" | "test"
  SampledShape shape;  // normalized
  std::vector<int> record_indices;
};

struct Dataset {
  Category category = Category::kToyLaptop;
  json manifest;
  std::vector<SampleEntry> samples;
  std::vector<InstanceRecord> records;

  std::vector<int> record_ids(const std::string& split) const {
    std::vector<int> out;
    for (const auto& s : samples)
      if (s.split == split)
        out.insert(out.end(), s.record_indices.begin(),
                   s.record_indices.end());
    return out;
  }
  const SampleEntry& sample_of(const InstanceRecord& r) const {
    return samples[r.sample_id];
  }
  int canonical_record_of_sample(int sample_id) const {
    for (int idx : samples[sample_id].record_indices)
      if (records[idx].canonical) return idx;
    throw std::runtime_error("dataset: sample has no canonical instance");
  }
};

struct GenConfig {
  Category category = Category::kToyLaptop;
  int samples = 20;
  int poses = 50;
  int test_samples = 0;
  int test_poses = -1;  // defaults to `poses`
  uint64_t seed = 1;
  int surface_points = 4096;
  int occ_points = 4096;  // per grid set
};

namespace detail_gen {

inline void write_u32(std::ofstream& o, uint32_t v) {
  o.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::ifstream& i) {
  uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
template <class V>
void write_vec(std::ofstream& o, const std::vector<V>& v) {
  write_u32(o, static_cast<uint32_t>(v.size()));
  o.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(V));
}
template <class V>
std::vector<V> read_vec(std::ifstream& i) {
  uint32_t n = read_u32(i);
  std::vector<V> v(n);
  i.read(reinterpret_cast<char*>(v.data()), n * sizeof(V));
  return v;
}

inline void write_record(const std::string& path, const InstanceRecord& r) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("dataset: cannot write record " + path);
  write_vec(o, r.surface);
  write_vec(o, r.surface_labels);
  write_vec(o, r.occ16);
  write_vec(o, r.ind16);
  write_vec(o, r.lab16);
  write_vec(o, r.occ32);
  write_vec(o, r.ind32);
  write_vec(o, r.lab32);
  write_vec(o, r.states);
  if (!o) throw std::runtime_error("dataset: write failed for " + path);
}

inline InstanceRecord read_record(const std::string& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw std::runtime_error("dataset: cannot read record " + path);
  InstanceRecord r;
  r.surface = read_vec<float>(i);
  r.surface_labels = read_vec<uint8_t>(i);
  r.occ16 = read_vec<float>(i);
  r.ind16 = read_vec<uint8_t>(i);
  r.lab16 = read_vec<uint8_t>(i);
  r.occ32 = read_vec<float>(i);
  r.ind32 = read_vec<uint8_t>(i);
  r.lab32 = read_vec<uint8_t>(i);
  r.states = read_vec<float>(i);
  if (!i) throw std::runtime_error("dataset: truncated record " + path);
  return r;
}

inline json shape_to_json(const SampledShape& s) {
  json parts = json::array();
  for (const auto& p : s.parts) {
    json boxes = json::array();
    for (const auto& b : p.boxes)
      boxes.push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                       {"half", {b.half.x, b.half.y, b.half.z}}});
    json jp = {{"kind", joint_kind_name(p.joint.kind)}, {"boxes", boxes}};
    if (p.joint.kind != JointKind::kFixed) {
      jp["axis"] = {p.joint.axis.x, p.joint.axis.y, p.joint.axis.z};
      jp["max_state"] = p.joint.max_state;
      if (p.joint.kind == JointKind::kRevolute)
        jp["pivot"] = {p.joint.pivot.x, p.joint.pivot.y, p.joint.pivot.z};
    }
    parts.push_back(jp);
  }
  return {{"seed", s.seed},
          {"norm_center", {s.norm_center.x, s.norm_center.y, s.norm_center.z}},
          {"norm_scale", s.norm_scale},
          {"parts", parts}};
}

inline SampledShape shape_from_json(Category cat, const json& j) {
  SampledShape s;
  s.category = cat;
  s.seed = j.at("seed").get<uint64_t>();
  s.norm_center = {j.at("norm_center")[0], j.at("norm_center")[1],
                   j.at("norm_center")[2]};
  s.norm_scale = j.at("norm_scale");
  for (const auto& jp : j.at("parts")) {
    PartTemplate p;
    p.joint.kind = joint_kind_from(jp.at("kind").get<std::string>());
    if (p.joint.kind != JointKind::kFixed) {
      p.joint.axis = {jp.at("axis")[0], jp.at("axis")[1], jp.at("axis")[2]};
      p.joint.max_state = jp.at("max_state");
      if (p.joint.kind == JointKind::kRevolute)
        p.joint.pivot = {jp.at("pivot")[0], jp.at("pivot")[1],
                         jp.at("pivot")[2]};
    }
    for (const auto& jb : jp.at("boxes"))
      p.boxes.push_back({{jb.at("center")[0], jb.at("center")[1],
                          jb.at("center")[2]},
                         {jb.at("half")[0], jb.at("half")[1],
                          jb.at("half")[2]}});
    s.parts.push_back(p);
  }
  return s;
}

// Stratified draw from the 32^3 grid: half inside, half outside where
// possible, deterministic per rng stream.
inline std::vector<int> stratified_pick(const std::vector<uint8_t>& ind,
                                        int want, Rng& rng) {
  std::vector<int> inside, outside;
  for (size_t i = 0; i < ind.size(); ++i)
    (ind[i] ? inside : outside).push_back(static_cast<int>(i));
  auto shuffle = [&](std::vector<int>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(inside);
  shuffle(outside);
  int half = want / 2;
  int n_in = std::min<int>(half, static_cast<int>(inside.size()));
  int n_out = std::min<int>(want - n_in, static_cast<int>(outside.size()));
  n_in = std::min<int>(want - n_out, static_cast<int>(inside.size()));
  std::vector<int> pick(inside.begin(), inside.begin() + n_in);
  pick.insert(pick.end(), outside.begin(), outside.begin() + n_out);
  return pick;
}

}  // namespace detail_gen

inline InstanceRecord build_instance_record(const SampledShape& shape,
                                            const PoseStates& pose,
                                            int sample_id, int pose_id,
                                            const GenConfig& cfg,
                                            uint64_t sub_seed) {
  Rng rng(sub_seed);
  InstanceRecord rec;
  rec.sample_id = sample_id;
  rec.pose_id = pose_id;
  rec.canonical = pose.canonical;
  for (double s : pose.states) rec.states.push_back(static_cast<float>(s));

  std::vector<Vec3> surf;
  std::vector<uint8_t> surf_lab;
  surface_sample(shape, pose.states, cfg.surface_points, rng, &surf,
                 &surf_lab);
  for (const auto& p : surf) {
    rec.surface.push_back(static_cast<float>(p.x));
    rec.surface.push_back(static_cast<float>(p.y));
    rec.surface.push_back(static_cast<float>(p.z));
  }
  rec.surface_labels = surf_lab;

  // full 16^3 grid
  auto pts16 = grid_cell_centers(16);
  analytic_occupancy(shape, pose.states, pts16, &rec.ind16, &rec.lab16);
  for (const auto& p : pts16) {
    rec.occ16.push_back(static_cast<float>(p.x));
    rec.occ16.push_back(static_cast<float>(p.y));
    rec.occ16.push_back(static_cast<float>(p.z));
  }

  // stratified subset of the 32^3 grid
  auto pts32 = grid_cell_centers(32);
  std::vector<uint8_t> ind32_full, lab32_full;
  analytic_occupancy(shape, pose.states, pts32, &ind32_full, &lab32_full);
  auto pick = detail_gen::stratified_pick(ind32_full, cfg.occ_points, rng);
  for (int idx : pick) {
    rec.occ32.push_back(static_cast<float>(pts32[idx].x));
    rec.occ32.push_back(static_cast<float>(pts32[idx].y));
    rec.occ32.push_back(static_cast<float>(pts32[idx].z));
    rec.ind32.push_back(ind32_full[idx]);
    rec.lab32.push_back(lab32_full[idx]);
  }
  return rec;
}

inline void generate_dataset(const GenConfig& cfg, const std::string& out_dir,
                             bool force = false) {
  namespace fs = std::filesystem;
  fs::path dir(out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw std::runtime_error("gen: output directory not empty (use --force): " +
                             out_dir);
  fs::create_directories(dir);

  const int test_poses = cfg.test_poses < 0 ? cfg.poses : cfg.test_poses;
  const int total_samples = cfg.samples + cfg.test_samples;

  json jsamples = json::array();
  std::vector<std::pair<SampledShape, std::vector<PoseStates>>> all;
  for (int s = 0; s < total_samples; ++s) {
    bool is_test = s >= cfg.samples;
    Rng fork = Rng(cfg.seed).fork(1000 + s);
    SampledShape raw = sample_shape(cfg.category, fork.next_u64());
    int n = is_test ? test_poses : cfg.poses;
    auto posed = sample_poses(raw, n, Rng(cfg.seed).fork(5000 + s).next_u64());
    all.push_back({posed.shape, posed.instances});
    json js = detail_gen::shape_to_json(posed.shape);
    js["id"] = s;
    js["split"] = is_test ? "test" : "train";
    json insts = json::array();
    for (int p = 0; p < n; ++p) {
      char name[64];
      std::snprintf(name, sizeof(name), "s%03d_p%03d.bin", s, p);
      json ji = {{"pose_id", p},
                 {"canonical", posed.instances[p].canonical},
                 {"states", posed.instances[p].states},
                 {"file", name}};
      insts.push_back(ji);
    }
    js["instances"] = insts;
    jsamples.push_back(js);
  }

  // instance records are independent; generation is parallel, writes ordered
  std::vector<std::pair<std::string, InstanceRecord>> outputs;
  std::vector<std::pair<int, int>> work;
  for (int s = 0; s < total_samples; ++s)
    for (int p = 0; p < static_cast<int>(all[s].second.size()); ++p)
      work.push_back({s, p});
  outputs.resize(work.size());
#pragma omp parallel for schedule(dynamic)
  for (long wi = 0; wi < static_cast<long>(work.size()); ++wi) {
    auto [s, p] = work[wi];
    uint64_t sub = Rng(cfg.seed).fork(77777 + 1000 * s + p).next_u64();
    char name[64];
    std::snprintf(name, sizeof(name), "s%03d_p%03d.bin", s, p);
    outputs[wi] = {name, build_instance_record(all[s].first, all[s].second[p],
                                               s, p, cfg, sub)};
  }
  for (const auto& [name, rec] : outputs)
    detail_gen::write_record((dir / name).string(), rec);

  json manifest;
  manifest["version"] = kVersion;
  manifest["category"] = category_name(cfg.category);
  manifest["seed"] = cfg.seed;
  manifest["config"] = {{"samples", cfg.samples},
                        {"poses", cfg.poses},
                        {"test_samples", cfg.test_samples},
                        {"test_poses", test_poses},
                        {"surface_points", cfg.surface_points},
                        {"occ_points", cfg.occ_points}};
  manifest["grids"] = {16, 32};
  manifest["record_layout"] = {
      "u32 count + f32[count] for: surface(P*3)",
      "u32 count + u8[count] for: surface_labels(P)",
      "u32 count + f32[count] for: occ16_coords(4096*3)",
      "u32 count + u8[count] for: ind16(4096)",
      "u32 count + u8[count] for: lab16(4096)",
      "u32 count + f32[count] for: occ32_coords(occ_points*3)",
      "u32 count + u8[count] for: ind32(occ_points)",
      "u32 count + u8[count] for: lab32(occ_points)",
      "u32 count + f32[count] for: gt_states(num_parts)",
      "all little-endian"};
  manifest["samples"] = jsamples;
  std::ofstream mo(dir / "manifest.json");
  mo << manifest.dump(2) << "\n";
  if (!mo)
    throw std::runtime_error("gen: failed to write manifest in " + out_dir);
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path root(dir);
  std::ifstream mi(root / "manifest.json");
  if (!mi)
    throw std::runtime_error("dataset: missing manifest.json in " + dir);
  Dataset ds;
  ds.manifest = json::parse(mi);
  ds.category = category_from(ds.manifest.at("category").get<std::string>());
  for (const auto& js : ds.manifest.at("samples")) {
    SampleEntry entry;
    entry.id = js.at("id");
    entry.split = js.at("split");
    entry.shape = detail_gen::shape_from_json(ds.category, js);
    for (const auto& ji : js.at("instances")) {
      std::string file = ji.at("file");
      InstanceRecord rec = detail_gen::read_record((root / file).string());
      rec.sample_id = entry.id;
      rec.pose_id = ji.at("pose_id");
      rec.canonical = ji.at("canonical");
      entry.record_indices.push_back(static_cast<int>(ds.records.size()));
      ds.records.push_back(std::move(rec));
    }
    ds.samples.push_back(std::move(entry));
  }
  return ds;
}

}  // namespace ppd
