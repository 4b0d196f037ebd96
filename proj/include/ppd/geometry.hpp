#pragma once

// Joint parameterization and rigid-transform algebra for part poses.
// Two layers: plain double-precision structs used by data generation and
// evaluation, and graph-building counterparts used during training so that
// pose parameters receive gradients.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ppd/tensor.hpp"

namespace ppd {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double c) const { return {x * c, y * c, z * c}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

using Mat3 = std::array<double, 9>;  // row-major

inline Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
          m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
  return c;
}

// Extrinsic rotations applied in X, then Y, then Z order: R = Rz * Ry * Rx.
inline Mat3 euler_xyz(const Vec3& r) {
  double ca = std::cos(r.x), sa = std::sin(r.x);
  double cb = std::cos(r.y), sb = std::sin(r.y);
  double cg = std::cos(r.z), sg = std::sin(r.z);
  return {cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa,
          sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa,
          -sb,     cb * sa,                cb * ca};
}

// Rodrigues' formula; u must have unit norm.
inline Mat3 axis_angle(const Vec3& u, double s) {
  double c = std::cos(s), sn = std::sin(s), v = 1 - c;
  return {c + u.x * u.x * v,        u.x * u.y * v - u.z * sn, u.x * u.z * v + u.y * sn,
          u.y * u.x * v + u.z * sn, c + u.y * u.y * v,        u.y * u.z * v - u.x * sn,
          u.z * u.x * v - u.y * sn, u.z * u.y * v + u.x * sn, c + u.z * u.z * v};
}

// u = R(r) e. The initial direction e must have unit norm.
inline Vec3 joint_direction(const Vec3& e, const Vec3& r) {
  if (std::abs(e.norm() - 1.0) > 1e-6)
    throw std::runtime_error("joint_direction: initial direction has norm " +
                             std::to_string(e.norm()) + ", expected 1");
  return mat3_apply(euler_xyz(r), e);
}

struct RigidTransform {
  std::array<double, 16> m{};  // row-major homogeneous

  static RigidTransform identity() {
    RigidTransform t;
    t.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return t;
  }
  static RigidTransform translation(const Vec3& v) {
    RigidTransform t = identity();
    t.m[3] = v.x;
    t.m[7] = v.y;
    t.m[11] = v.z;
    return t;
  }
  static RigidTransform from_rotation(const Mat3& r) {
    RigidTransform t = identity();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t.m[i * 4 + j] = r[i * 3 + j];
    return t;
  }

  Vec3 translation_part() const { return {m[3], m[7], m[11]}; }
  Mat3 rotation_part() const {
    return {m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
  }

  Vec3 apply(const Vec3& x) const {
    return {m[0] * x.x + m[1] * x.y + m[2] * x.z + m[3],
            m[4] * x.x + m[5] * x.y + m[6] * x.z + m[7],
            m[8] * x.x + m[9] * x.y + m[10] * x.z + m[11]};
  }

  // B^-1 x = R^T (x - t)
  Vec3 inverse_apply(const Vec3& x) const {
    double dx = x.x - m[3], dy = x.y - m[7], dz = x.z - m[11];
    return {m[0] * dx + m[4] * dy + m[8] * dz,
            m[1] * dx + m[5] * dy + m[9] * dz,
            m[2] * dx + m[6] * dy + m[10] * dz};
  }

  RigidTransform compose(const RigidTransform& o) const {  // this * o
    RigidTransform r;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += m[i * 4 + k] * o.m[k * 4 + j];
        r.m[i * 4 + j] = s;
      }
    return r;
  }

  RigidTransform inverse() const {
    RigidTransform r = identity();
    // transpose rotation block
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i * 4 + j] = m[j * 4 + i];
    Vec3 t = translation_part();
    Vec3 ti = {-(r.m[0] * t.x + r.m[1] * t.y + r.m[2] * t.z),
               -(r.m[4] * t.x + r.m[5] * t.y + r.m[6] * t.z),
               -(r.m[8] * t.x + r.m[9] * t.y + r.m[10] * t.z)};
    r.m[3] = ti.x;
    r.m[7] = ti.y;
    r.m[11] = ti.z;
    return r;
  }

  // max deviation from orthonormality / unit determinant / affine last row
  double rigidity_error() const {
    Mat3 r = rotation_part();
    double worst = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
        worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                 r[1] * (r[3] * r[8] - r[5] * r[6]) +
                 r[2] * (r[3] * r[7] - r[4] * r[6]);
    worst = std::max(worst, std::abs(det - 1.0));
    worst = std::max(worst, std::abs(m[12]));
    worst = std::max(worst, std::abs(m[13]));
    worst = std::max(worst, std::abs(m[14]));
    worst = std::max(worst, std::abs(m[15] - 1.0));
    return worst;
  }
};

enum class JointKind { kFixed, kPrismatic, kRevolute };

inline const char* joint_kind_name(JointKind k) {
  switch (k) {
    case JointKind::kFixed: return "fixed";
    case JointKind::kPrismatic: return "prismatic";
    case JointKind::kRevolute: return "revolute";
  }
  return "?";
}

inline JointKind joint_kind_from(const std::string& s) {
  if (s == "fixed") return JointKind::kFixed;
  if (s == "prismatic") return JointKind::kPrismatic;
  if (s == "revolute") return JointKind::kRevolute;
  throw std::runtime_error("unknown joint kind '" + s + "'");
}

struct JointParams {
  Vec3 e{1, 0, 0};  // initial joint direction, constant, unit norm
  Vec3 r_c, r_z;    // Euler-angle residuals (radians)
  double s = 0;     // joint state, >= 0
  Vec3 q_c, q_z;    // pivot bias and residual (revolute only)

  Vec3 r() const { return r_c + r_z; }
  Vec3 q() const { return q_c + q_z; }
  Vec3 direction() const { return joint_direction(e, r()); }
};

// B per joint kind. Fixed -> identity; prismatic -> T(s u);
// revolute -> T(q) R(s, u), rotation about the axis through the origin.
inline RigidTransform compose_part_pose(JointKind kind, const JointParams& p) {
  switch (kind) {
    case JointKind::kFixed:
      return RigidTransform::identity();
    case JointKind::kPrismatic: {
      Vec3 u = p.direction();
      return RigidTransform::translation(u * p.s);
    }
    case JointKind::kRevolute: {
      Vec3 u = p.direction();
      RigidTransform rot = RigidTransform::from_rotation(axis_angle(u, p.s));
      return RigidTransform::translation(p.q()).compose(rot);
    }
  }
  throw std::runtime_error("compose_part_pose: bad joint kind");
}

// Physical articulation about an axis through a pivot point:
// x -> p + R(u,s)(x - p). Used for ground-truth poses.
inline RigidTransform rotation_about_line(const Vec3& u, double s,
                                          const Vec3& p) {
  RigidTransform rot = RigidTransform::from_rotation(axis_angle(u, s));
  return RigidTransform::translation(p).compose(
      rot.compose(RigidTransform::translation(p * -1.0)));
}

// Closest distance between two (infinite) lines; handles parallel lines.
inline double line_line_distance(const Vec3& p1, const Vec3& u1,
                                 const Vec3& p2, const Vec3& u2) {
  Vec3 n = u1.cross(u2);
  Vec3 d = p2 - p1;
  double nn = n.norm();
  if (nn < 1e-12) {
    // parallel: distance from p2 to the first line
    Vec3 proj = u1 * d.dot(u1);
    return (d - proj).norm();
  }
  return std::abs(d.dot(n)) / nn;
}

// Angle between directions folded to [0, 90] degrees (axis sign is
// unobservable).
inline double folded_angle_deg(const Vec3& a, const Vec3& b) {
  double c = std::abs(a.normalized().dot(b.normalized()));
  c = std::min(1.0, c);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// graph-building counterparts

template <class T>
struct PoseGraph {
  Tensor<T> rot;    // [3,3]
  Tensor<T> trans;  // [1,3]
};

template <class T>
Tensor<T> identity_rot_graph() {
  return Tensor<T>::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
}

// R = Rz * Ry * Rx from a [1,3] angle tensor.
template <class T>
Tensor<T> rot_euler_xyz_graph(const Tensor<T>& r) {
  auto ang = [&](int i) { return slice_cols(r, i, i + 1); };
  Tensor<T> ca = cosine(ang(0)), sa = sine(ang(0));
  Tensor<T> cb = cosine(ang(1)), sb = sine(ang(1));
  Tensor<T> cg = cosine(ang(2)), sg = sine(ang(2));
  std::vector<Tensor<T>> e = {
      mul(cg, cb), sub(mul(mul(cg, sb), sa), mul(sg, ca)),
      add(mul(mul(cg, sb), ca), mul(sg, sa)),
      mul(sg, cb), add(mul(mul(sg, sb), sa), mul(cg, ca)),
      sub(mul(mul(sg, sb), ca), mul(cg, sa)),
      neg(sb),     mul(cb, sa),
      mul(cb, ca)};
  return stack_scalars(e, {3, 3});
}

// Rodrigues from a [1,3] unit direction and scalar angle.
template <class T>
Tensor<T> rot_axis_angle_graph(const Tensor<T>& u, const Tensor<T>& s) {
  auto c = cosine(s);
  auto sn = sine(s);
  auto v = add_scalar(neg(c), T(1));  // 1 - cos
  auto ux = slice_cols(u, 0, 1), uy = slice_cols(u, 1, 2),
       uz = slice_cols(u, 2, 3);
  std::vector<Tensor<T>> e = {
      add(c, mul(mul(ux, ux), v)),
      sub(mul(mul(ux, uy), v), mul(uz, sn)),
      add(mul(mul(ux, uz), v), mul(uy, sn)),
      add(mul(mul(uy, ux), v), mul(uz, sn)),
      add(c, mul(mul(uy, uy), v)),
      sub(mul(mul(uy, uz), v), mul(ux, sn)),
      sub(mul(mul(uz, ux), v), mul(uy, sn)),
      add(mul(mul(uz, uy), v), mul(ux, sn)),
      add(c, mul(mul(uz, uz), v))};
  return stack_scalars(e, {3, 3});
}

// u = R(r) e with constant e.
template <class T>
Tensor<T> joint_direction_graph(const Vec3& e, const Tensor<T>& r) {
  Tensor<T> rot = rot_euler_xyz_graph(r);
  Tensor<T> ev = Tensor<T>::constant(
      {1, 3}, {static_cast<T>(e.x), static_cast<T>(e.y), static_cast<T>(e.z)});
  // (R e)^T = e^T R^T
  return matmul(ev, transpose(rot));
}

// Differentiable part pose. r, q are [1,3]; s is a scalar tensor.
template <class T>
PoseGraph<T> compose_part_pose_graph(JointKind kind, const Vec3& e,
                                     const Tensor<T>& r, const Tensor<T>& s,
                                     const Tensor<T>& q) {
  PoseGraph<T> pose;
  switch (kind) {
    case JointKind::kFixed:
      pose.rot = identity_rot_graph<T>();
      pose.trans = Tensor<T>::zeros({1, 3});
      break;
    case JointKind::kPrismatic: {
      Tensor<T> u = joint_direction_graph(e, r);
      pose.rot = identity_rot_graph<T>();
      pose.trans = mul(u, s);
      break;
    }
    case JointKind::kRevolute: {
      Tensor<T> u = joint_direction_graph(e, r);
      pose.rot = rot_axis_angle_graph(u, s);
      pose.trans = q;
      break;
    }
  }
  return pose;
}

// B^-1 x for a batch of row points: (x - t) R. Differentiable in both the
// pose parameters and the points.
template <class T>
Tensor<T> inverse_apply_graph(const PoseGraph<T>& pose, const Tensor<T>& x) {
  return matmul(sub(x, pose.trans), pose.rot);
}

// B x for row points: x R^T + t.
template <class T>
Tensor<T> apply_graph(const PoseGraph<T>& pose, const Tensor<T>& x) {
  return add(matmul(x, transpose(pose.rot)), pose.trans);
}

}  // namespace ppd
