#pragma once

// Composite implicit-field evaluation, occupancy-grid sampling, isosurface
// meshing and latent/state interpolation paths.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ppd/geometry.hpp"
#include "ppd/nets.hpp"
#include "ppd/tensor.hpp"

namespace ppd {

enum class ComposeMode { kHard, kSoft };

inline constexpr int kEvalChunk = 8192;  // query points per forward

// ---------------------------------------------------------------------------
// graph path (training)

// Pre-sigmoid logit of one part at local coordinates: F^{s,z} * sigma(F^{s,c}).
// The part indicator is sigma of this value.
template <class T>
struct PartFieldGraph {
  Tensor<T> logit;         // [M,1] F^{s,z} * sigma(F^{s,c})
  Tensor<T> common_logit;  // [M,1]
  Tensor<T> inst_logit;    // [M,1] raw F^{s,z} output
};

template <class T>
PartFieldGraph<T> part_field_graph(const Model<T>& model, int part,
                                   const Tensor<T>& x_local,
                                   const Tensor<T>& z_s_rows) {
  auto [common, inst] = model.shape_logits(part, x_local, z_s_rows);
  PartFieldGraph<T> out;
  out.common_logit = common;
  out.inst_logit = inst;
  out.logit = mul(inst, sigmoid(common));
  return out;
}

template <class T>
Tensor<T> part_indicator_graph(const PartFieldGraph<T>& f) {
  return sigmoid(f.logit);
}

template <class T>
struct ComposedGraph {
  Tensor<T> whole;    // [1,M] composed indicator
  Tensor<T> whole_c;  // [1,M] composed category-common indicator
  Tensor<T> logits;   // [N,M] per-part pre-sigmoid logits
  Tensor<T> common_logits;  // [N,M]
};

// Hard mode takes the elementwise max over parts (evaluation / meshing);
// soft mode substitutes LogSumExp on the pre-sigmoid logits for gradient
// propagation during training. Both end in a sigmoid, so hard equals
// max_i sigma(L_i) by monotonicity.
template <class T>
ComposedGraph<T> compose_graph(const std::vector<PartFieldGraph<T>>& parts,
                               ComposeMode mode) {
  if (parts.empty())
    throw std::runtime_error("compose: need at least one part");
  std::vector<Tensor<T>> lrows, crows;
  for (const auto& p : parts) {
    lrows.push_back(transpose(p.logit));
    crows.push_back(transpose(p.common_logit));
  }
  ComposedGraph<T> out;
  out.logits = concat_rows(lrows);
  out.common_logits = concat_rows(crows);
  if (mode == ComposeMode::kHard) {
    out.whole = sigmoid(rows_max(out.logits));
    out.whole_c = sigmoid(rows_max(out.common_logits));
  } else {
    out.whole = sigmoid(logsumexp_rows(out.logits));
    out.whole_c = sigmoid(logsumexp_rows(out.common_logits));
  }
  return out;
}

// ---------------------------------------------------------------------------
// value path (evaluation, meshing, export)

// An instance reduced to plain values: shape latent plus per-part rigid poses.
struct InstancePose {
  std::vector<double> z_s;
  std::vector<RigidTransform> poses;        // per part
  std::vector<JointParams> joints;          // decoded joint parameters
  std::vector<double> states;               // decoded joint state per part (0 for fixed)
};

struct FieldSample {
  std::vector<double> whole;                 // composed indicator, hard max
  std::vector<double> whole_c;               // composed common indicator
  std::vector<std::vector<double>> per_part; // indicator per part
};

template <class T>
FieldSample eval_field_values(const Model<T>& model, const InstancePose& inst,
                              const std::vector<Vec3>& pts,
                              int chunk = kEvalChunk) {
  NoGradGuard ng;
  const int N = model.part_count();
  const int M = static_cast<int>(pts.size());
  FieldSample out;
  out.whole.assign(M, 0);
  out.whole_c.assign(M, 0);
  out.per_part.assign(N, std::vector<double>(M, 0));
  const int d = static_cast<int>(inst.z_s.size());
  for (int base = 0; base < M; base += chunk) {
    const int m = std::min(chunk, M - base);
    std::vector<T> zrep(static_cast<size_t>(m) * d);
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < d; ++j)
        zrep[static_cast<size_t>(r) * d + j] = static_cast<T>(inst.z_s[j]);
    Tensor<T> z_rows = Tensor<T>::constant({m, d}, std::move(zrep));
    for (int i = 0; i < N; ++i) {
      std::vector<T> local(static_cast<size_t>(m) * 3);
      for (int r = 0; r < m; ++r) {
        Vec3 q = inst.poses[i].inverse_apply(pts[base + r]);
        local[static_cast<size_t>(r) * 3 + 0] = static_cast<T>(q.x);
        local[static_cast<size_t>(r) * 3 + 1] = static_cast<T>(q.y);
        local[static_cast<size_t>(r) * 3 + 2] = static_cast<T>(q.z);
      }
      Tensor<T> xl = Tensor<T>::constant({m, 3}, std::move(local));
      auto f = part_field_graph(model, i, xl, z_rows);
      const auto& lv = f.logit.value();
      const auto& cv = f.common_logit.value();
      for (int r = 0; r < m; ++r) {
        double logit = double(lv[r]);
        double ind = 1.0 / (1.0 + std::exp(-logit));
        out.per_part[i][base + r] = ind;
        out.whole[base + r] = std::max(out.whole[base + r], ind);
        double cind = 1.0 / (1.0 + std::exp(-double(cv[r])));
        out.whole_c[base + r] = std::max(out.whole_c[base + r], cind);
      }
    }
  }
  return out;
}

// Encode a surface cloud and reduce the decoded pose to plain values.
// Stage-1 checkpoints are evaluated with use_rz=false to match training.
template <class T>
InstancePose decode_instance(const Model<T>& model,
                             const std::vector<Vec3>& points,
                             bool use_rz = true,
                             const std::vector<double>* state_override = nullptr) {
  NoGradGuard ng;
  const int P = static_cast<int>(points.size());
  std::vector<T> flat(static_cast<size_t>(P) * 3);
  for (int i = 0; i < P; ++i) {
    flat[static_cast<size_t>(i) * 3 + 0] = static_cast<T>(points[i].x);
    flat[static_cast<size_t>(i) * 3 + 1] = static_cast<T>(points[i].y);
    flat[static_cast<size_t>(i) * 3 + 2] = static_cast<T>(points[i].z);
  }
  auto lat = model.encode(Tensor<T>::constant({P, 3}, std::move(flat)), 1);
  auto q = model.quantize(lat.z_pc);
  auto dec = model.decode_pose(lat.z_p, q.straight_through);

  InstancePose out;
  out.z_s.assign(lat.z_s.value().begin(), lat.z_s.value().end());
  const auto& parts = model.part_table();
  const int N = model.part_count();
  out.joints.resize(N);
  out.poses.resize(N);
  out.states.assign(N, 0.0);
  auto vec3_at = [](const std::vector<T>& v, int off) {
    return Vec3{double(v[off]), double(v[off + 1]), double(v[off + 2])};
  };
  for (int i = 0; i < N; ++i) {
    JointParams jp;
    jp.e = parts[i].e;
    if (parts[i].kind != JointKind::kFixed) {
      int ap = model.ap_slot(i);
      jp.r_c = vec3_at(dec.r_c.value(), 3 * ap);
      if (use_rz) jp.r_z = vec3_at(dec.r_z.value(), 3 * ap);
      jp.s = state_override ? (*state_override)[i] : double(dec.s.value()[ap]);
      if (parts[i].kind == JointKind::kRevolute) {
        int ar = model.ar_slot(i);
        jp.q_c = vec3_at(dec.q_c.value(), 3 * ar);
        jp.q_z = vec3_at(dec.q_z.value(), 3 * ar);
      }
      out.states[i] = jp.s;
    }
    out.joints[i] = jp;
    out.poses[i] = compose_part_pose(parts[i].kind, jp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// occupancy grids

struct OccupancyGrid {
  int res = 0;
  std::vector<double> values;  // res^3, x-major: ((ix*res)+iy)*res+iz

  static Vec3 cell_center(int res, int ix, int iy, int iz) {
    auto c = [res](int i) { return -0.5 + (i + 0.5) / double(res); };
    return {c(ix), c(iy), c(iz)};
  }
  size_t index(int ix, int iy, int iz) const {
    return (static_cast<size_t>(ix) * res + iy) * res + iz;
  }
  double at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
};

inline std::vector<Vec3> grid_cell_centers(int res) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(res) * res * res);
  for (int ix = 0; ix < res; ++ix)
    for (int iy = 0; iy < res; ++iy)
      for (int iz = 0; iz < res; ++iz)
        pts.push_back(OccupancyGrid::cell_center(res, ix, iy, iz));
  return pts;
}

template <class T>
OccupancyGrid sample_grid(const Model<T>& model, const InstancePose& inst,
                          int res) {
  if (res != 16 && res != 32)
    std::cerr << "sample_grid: non-standard resolution " << res << "\n";
  OccupancyGrid g;
  g.res = res;
  auto fs = eval_field_values(model, inst, grid_cell_centers(res));
  g.values = std::move(fs.whole);
  return g;
}

// ---------------------------------------------------------------------------
// isosurface extraction

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  double area() const {
    double a = 0;
    for (const auto& t : triangles) {
      Vec3 e1 = vertices[t[1]] - vertices[t[0]];
      Vec3 e2 = vertices[t[2]] - vertices[t[0]];
      a += 0.5 * e1.cross(e2).norm();
    }
    return a;
  }

  // signed volume via the divergence theorem; needs outward orientation
  double volume() const {
    double v = 0;
    for (const auto& t : triangles)
      v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]])) / 6.0;
    return v;
  }

  int euler_characteristic() const {
    std::set<std::pair<int, int>> edges;
    for (const auto& t : triangles)
      for (int k = 0; k < 3; ++k) {
        int a = t[k], b = t[(k + 1) % 3];
        edges.insert({std::min(a, b), std::max(a, b)});
      }
    return static_cast<int>(vertices.size()) - static_cast<int>(edges.size()) +
           static_cast<int>(triangles.size());
  }
};

namespace detail_mc {

// Kuhn split of a cube into six tetrahedra around the 0-7 diagonal; all
// cubes share the same split so faces match across neighbors.
inline constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                                    {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};

}  // namespace detail_mc

// Isosurface of a cell-centered grid at `iso`. Vertices are interpolated
// along lattice edges and welded by edge key, which keeps meshes of closed
// level sets watertight. Triangles are oriented outward (toward lower
// values). An empty surface yields an empty mesh.
inline Mesh marching_cubes(const OccupancyGrid& grid, double iso = 0.5) {
  Mesh mesh;
  const int res = grid.res;
  const int n = res;  // lattice of cell centers
  auto corner_id = [n](int ix, int iy, int iz) {
    return (static_cast<int64_t>(ix) * n + iy) * n + iz;
  };
  std::map<std::pair<int64_t, int64_t>, int> edge_vertex;
  auto vertex_on_edge = [&](int64_t ca, int64_t cb, const Vec3& pa,
                            const Vec3& pb, double va, double vb) {
    auto key = ca < cb ? std::make_pair(ca, cb) : std::make_pair(cb, ca);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double t = (iso - va) / (vb - va);
    t = std::min(1.0, std::max(0.0, t));
    Vec3 p = pa + (pb - pa) * t;
    int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    edge_vertex.emplace(key, id);
    return id;
  };
  auto emit = [&](int a, int b, int c, const Vec3& outward_ref,
                  const Vec3& inward_ref) {
    Vec3 va = mesh.vertices[a], vb = mesh.vertices[b], vc = mesh.vertices[c];
    Vec3 nrm = (vb - va).cross(vc - va);
    if (nrm.dot(outward_ref - inward_ref) < 0) std::swap(b, c);
    mesh.triangles.push_back({a, b, c});
  };

  for (int ix = 0; ix + 1 < res; ++ix)
    for (int iy = 0; iy + 1 < res; ++iy)
      for (int iz = 0; iz + 1 < res; ++iz) {
        double cv[8];
        Vec3 cp[8];
        int64_t cid[8];
        for (int c = 0; c < 8; ++c) {
          int dx = (c >> 2) & 1, dy = (c >> 1) & 1, dz = c & 1;
          cv[c] = grid.at(ix + dx, iy + dy, iz + dz);
          cp[c] = OccupancyGrid::cell_center(res, ix + dx, iy + dy, iz + dz);
          cid[c] = corner_id(ix + dx, iy + dy, iz + dz);
        }
        for (const auto& tet : detail_mc::kTets) {
          int inside[4], out[4];
          int ni = 0, no = 0;
          for (int k = 0; k < 4; ++k) {
            if (cv[tet[k]] > iso)
              inside[ni++] = tet[k];
            else
              out[no++] = tet[k];
          }
          if (ni == 0 || no == 0) continue;
          auto ve = [&](int a, int b) {
            return vertex_on_edge(cid[a], cid[b], cp[a], cp[b], cv[a], cv[b]);
          };
          auto centroid_of = [&](int a, int b) {
            return (cp[a] + cp[b]) * 0.5;
          };
          if (ni == 1) {
            int a = inside[0];
            int v0 = ve(a, out[0]), v1 = ve(a, out[1]), v2 = ve(a, out[2]);
            Vec3 oc = (cp[out[0]] + cp[out[1]] + cp[out[2]]) * (1.0 / 3);
            emit(v0, v1, v2, oc, cp[a]);
          } else if (ni == 3) {
            int d = out[0];
            int v0 = ve(inside[0], d), v1 = ve(inside[1], d),
                v2 = ve(inside[2], d);
            Vec3 icn =
                (cp[inside[0]] + cp[inside[1]] + cp[inside[2]]) * (1.0 / 3);
            emit(v0, v1, v2, cp[d], icn);
          } else {  // 2-2: quad split into two triangles
            int a = inside[0], b = inside[1], c = out[0], d = out[1];
            int vac = ve(a, c), vad = ve(a, d), vbc = ve(b, c), vbd = ve(b, d);
            Vec3 om = centroid_of(c, d), im = centroid_of(a, b);
            emit(vac, vad, vbd, om, im);
            emit(vac, vbd, vbc, om, im);
          }
        }
      }
  return mesh;
}

// Area-weighted surface sampling of a mesh.
inline std::vector<Vec3> sample_mesh_surface(const Mesh& mesh, int count,
                                             Rng& rng) {
  std::vector<Vec3> pts;
  if (mesh.triangles.empty() || count <= 0) return pts;
  std::vector<double> cum;
  double total = 0;
  for (const auto& t : mesh.triangles) {
    Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    total += 0.5 * e1.cross(e2).norm();
    cum.push_back(total);
  }
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    double u = rng.uniform() * total;
    size_t lo = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (lo >= mesh.triangles.size()) lo = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[lo];
    double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    Vec3 p = mesh.vertices[t[0]] * (1 - r1) + mesh.vertices[t[1]] * (r1 * (1 - r2)) +
             mesh.vertices[t[2]] * (r1 * r2);
    pts.push_back(p);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// OBJ export: one group per part, vertices printed to 6 decimals

inline void write_obj(const std::string& path,
                      const std::vector<std::pair<std::string, Mesh>>& groups,
                      const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_obj: cannot open " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  int base = 1;  // OBJ indices are 1-based and global
  char buf[128];
  for (const auto& [name, mesh] : groups) {
    out << "g " << name << "\n";
    for (const auto& v : mesh.vertices) {
      std::snprintf(buf, sizeof(buf), "v %.6f %.6f %.6f\n", v.x, v.y, v.z);
      out << buf;
    }
    for (const auto& t : mesh.triangles)
      out << "f " << base + t[0] << " " << base + t[1] << " " << base + t[2]
          << "\n";
    base += static_cast<int>(mesh.vertices.size());
  }
}

// Per-part meshes for OBJ export; only parts whose indicator exceeds the
// iso level somewhere on the grid are emitted.
template <class T>
std::vector<std::pair<std::string, Mesh>> export_part_meshes(
    const Model<T>& model, const InstancePose& inst, int res,
    double iso = 0.5) {
  auto pts = grid_cell_centers(res);
  auto fs = eval_field_values(model, inst, pts);
  std::vector<std::pair<std::string, Mesh>> groups;
  for (int i = 0; i < model.part_count(); ++i) {
    double top = 0;
    for (double v : fs.per_part[i]) top = std::max(top, v);
    if (top <= iso) continue;
    OccupancyGrid g;
    g.res = res;
    g.values = fs.per_part[i];
    Mesh m = marching_cubes(g, iso);
    if (!m.empty()) groups.push_back({"part_" + std::to_string(i), std::move(m)});
  }
  return groups;
}

// ---------------------------------------------------------------------------
// interpolation paths

enum class InterpMode { kShape, kState };

// Linear path between two decoded instances. Shape mode moves z^s and keeps
// the source joint states; state mode moves each joint state and keeps the
// source shape latent. Step 0 reproduces the source quantity exactly.
inline InstancePose interpolate_pose(const InstancePose& source,
                                     const InstancePose& target,
                                     InterpMode mode, double t,
                                     const std::vector<PartSpec>& parts) {
  InstancePose out = source;
  if (mode == InterpMode::kShape) {
    for (size_t j = 0; j < out.z_s.size(); ++j)
      out.z_s[j] = (1 - t) * source.z_s[j] + t * target.z_s[j];
  } else {
    for (size_t i = 0; i < out.states.size(); ++i) {
      out.states[i] = (1 - t) * source.states[i] + t * target.states[i];
      JointParams jp = source.joints[i];
      jp.s = out.states[i];
      out.joints[i] = jp;
      out.poses[i] = compose_part_pose(parts[i].kind, jp);
    }
  }
  return out;
}

}  // namespace ppd
