#pragma once

// Learnable networks: point-cloud encoder, paired category-common /
// instance-dependent shape decoders, pose decoders, VQ codebook and a
// spectrally normalized point-cloud critic.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ppd/config.hpp"
#include "ppd/geometry.hpp"
#include "ppd/rng.hpp"
#include "ppd/tensor.hpp"
#include "ppd/version.hpp"

namespace ppd {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct Linear {
  Tensor<T> W;  // [in, out]
  Tensor<T> b;  // [1, out]

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, W, b); }
};

template <class T>
struct LatentBundle {
  Tensor<T> z_s;   // [B, d]
  Tensor<T> z_p;   // [B, d_p]
  Tensor<T> z_pc;  // [B, d_pc]
};

template <class T>
struct QuantizeResult {
  Tensor<T> straight_through;  // values are codewords, gradient copies to z_pc
  Tensor<T> code_rows;         // differentiable w.r.t. the codebook
  std::vector<int> indices;
};

template <class T>
struct PoseDecode {
  Tensor<T> r_c;  // [B, 3*Np]
  Tensor<T> r_z;  // [B, 3*Np]
  Tensor<T> s;    // [B, Np], sigmoid-scaled joint states
  Tensor<T> q_c;  // [B, 3*Nr]
  Tensor<T> q_z;  // [B, 3*Nr]
};

template <class T>
class Model {
 public:
  Model() = default;

  static Model init(const NetConfig& net, const PartBudget& budget,
                    uint64_t seed) {
    Model m;
    m.net_ = net;
    m.budget_ = budget;
    m.parts_ = default_part_table(budget);
    Rng rng(seed ^ 0x5eed5eedull);

    const int N = budget.total();
    // encoder
    m.enc1_ = m.glorot(rng, "enc.l1", 3, net.enc_hidden, Kind::kGen);
    m.enc2_ = m.glorot(rng, "enc.l2", 2 * net.enc_hidden, net.enc_hidden,
                       Kind::kGen);
    m.head_zs_ = m.glorot(rng, "enc.head_zs", net.enc_hidden, net.z_s,
                          Kind::kGen);
    m.head_zp_ = m.glorot(rng, "enc.head_zp", net.enc_hidden, net.z_p,
                          Kind::kGen);
    m.head_zpc_ = m.glorot(rng, "enc.head_zpc", net.enc_hidden, net.z_pc,
                           Kind::kGen);
    // shape decoders: sine MLPs; the first (coordinate) layer keeps the
    // unscaled uniform bound, deeper layers are scaled by 1/30
    for (int i = 0; i < N; ++i) {
      m.common_dec_.push_back(m.sine_mlp_params(
          rng, "shape.common" + std::to_string(i), 3, net.shape_hidden,
          net.shape_layers));
      m.instance_dec_.push_back(m.sine_mlp_params(
          rng, "shape.inst" + std::to_string(i), 3 + net.z_s, net.shape_hidden,
          net.shape_layers));
    }
    // pose decoders
    const int np3 = 3 * m.np(), nr3 = 3 * m.nr();
    for (int l = 0; l < net.pose_layers - 1; ++l) {
      int in = l == 0 ? net.z_pc : net.pose_hidden;
      m.fr_layers_.push_back(m.glorot(rng, "pose.fr.l" + std::to_string(l), in,
                                      net.pose_hidden, Kind::kGen));
      m.fq_layers_.push_back(m.glorot(rng, "pose.fq.l" + std::to_string(l), in,
                                      net.pose_hidden, Kind::kGen));
      m.fq_gain_.push_back(m.reg(Kind::kGen, "pose.fq.ln_g" + std::to_string(l),
                                 Tensor<T>::full({1, net.pose_hidden}, T(1))));
      m.fq_bias_.push_back(m.reg(Kind::kGen, "pose.fq.ln_b" + std::to_string(l),
                                 Tensor<T>::zeros({1, net.pose_hidden})));
    }
    m.fr_out_ = m.glorot(rng, "pose.fr.out", net.pose_hidden, np3, Kind::kGen);
    m.fq_out_ = m.glorot(rng, "pose.fq.out", net.pose_hidden, nr3, Kind::kGen);
    for (int l = 0; l < net.pose_layers - 1; ++l) {
      int in = l == 0 ? net.z_p : net.pose_hidden;
      m.fz_backbone_.push_back(m.glorot(rng, "pose.fz.l" + std::to_string(l),
                                        in, net.pose_hidden, Kind::kGen));
    }
    m.head_s_ = m.glorot(rng, "pose.fz.head_s", net.pose_hidden, m.np(),
                         Kind::kGen);
    // residual heads start at zero so r_i = r_i^c and q_i = q_i^c at init
    m.head_rz_ = m.zero_linear("pose.fz.head_rz", net.pose_hidden, np3);
    m.head_qz_ = m.zero_linear("pose.fz.head_qz", net.pose_hidden, nr3);

    {
      std::vector<T> cb(static_cast<size_t>(net.n_qt) * net.z_pc);
      T bound = T(1) / std::sqrt(static_cast<T>(net.z_pc));
      for (auto& x : cb) x = static_cast<T>(rng.uniform(-bound, bound));
      m.codebook_ = m.reg(Kind::kGen, "codebook",
                          Tensor<T>::param({net.n_qt, net.z_pc}, cb));
    }

    // discriminator: pointwise layers, max-pool, then an MLP head
    m.d1_ = m.spec_linear(rng, "disc.l1", 4, net.disc_hidden);
    m.d2_ = m.spec_linear(rng, "disc.l2", net.disc_hidden, net.disc_hidden2);
    m.d3_ = m.spec_linear(rng, "disc.l3", net.disc_hidden2, net.disc_hidden);
    m.d4_ = m.spec_linear(rng, "disc.l4", net.disc_hidden, 1);

    // joint-state scale per non-fixed part: pi for revolute, 1 for prismatic
    std::vector<T> scale;
    for (int i = 0; i < N; ++i)
      if (m.parts_[i].kind == JointKind::kRevolute)
        scale.push_back(static_cast<T>(kPiD));
      else if (m.parts_[i].kind == JointKind::kPrismatic)
        scale.push_back(T(1));
    m.s_scale_ = Tensor<T>::constant({1, m.np()}, scale);
    return m;
  }

  const NetConfig& net_config() const { return net_; }
  const PartBudget& budget() const { return budget_; }
  const std::vector<PartSpec>& part_table() const { return parts_; }
  int part_count() const { return budget_.total(); }
  int np() const { return budget_.revolute + budget_.prismatic; }
  int nr() const { return budget_.revolute; }

  // slot of part i within the non-fixed ordering (valid for non-fixed parts)
  int ap_slot(int part) const { return part - budget_.fixed; }
  // slot within the revolute ordering (valid for revolute parts)
  int ar_slot(int part) const { return part - budget_.fixed; }

  std::vector<NamedParam<T>>& gen_params() { return gen_params_; }
  std::vector<NamedParam<T>>& disc_params() { return disc_params_; }
  std::vector<NamedParam<T>>& buffers() { return buffers_; }
  const std::vector<NamedParam<T>>& gen_params() const { return gen_params_; }
  const std::vector<NamedParam<T>>& disc_params() const { return disc_params_; }
  const std::vector<NamedParam<T>>& buffers() const { return buffers_; }

  // --- encoder ------------------------------------------------------------
  // points: [B*P, 3] row-stacked clouds. Exactly permutation invariant per
  // cloud because every layer before pooling is pointwise.
  LatentBundle<T> encode(const Tensor<T>& points, int B) const {
    if (points.size() == 0 || points.shape().size() != 2 ||
        points.shape()[1] != 3 || points.shape()[0] < B || B < 1)
      throw std::runtime_error("encode: expected a non-empty [B*P,3] cloud, got " +
                               shape_str(points.shape()));
    const int P = points.shape()[0] / B;
    Tensor<T> h1 = relu(enc1_.forward(points));           // [B*P, H]
    Tensor<T> g1 = rows_max_segments(h1, B);              // [B, H]
    Tensor<T> h2 = relu(enc2_.forward(concat_cols(h1, repeat_rows(g1, P))));
    Tensor<T> g = rows_max_segments(h2, B);               // [B, H]
    LatentBundle<T> out;
    out.z_s = head_zs_.forward(g);
    out.z_p = head_zp_.forward(g);
    out.z_pc = head_zpc_.forward(g);
    return out;
  }

  // --- vector quantization --------------------------------------------------
  // Nearest codeword by Euclidean distance; exact ties take the lowest index.
  QuantizeResult<T> quantize(const Tensor<T>& z_pc) const {
    const int B = z_pc.shape()[0], d = z_pc.shape()[1];
    const int K = codebook_.shape()[0];
    const auto& zv = z_pc.value();
    const auto& cb = codebook_.value();
    QuantizeResult<T> res;
    res.indices.resize(B);
    std::vector<T> delta(static_cast<size_t>(B) * d);
    std::vector<Tensor<T>> rows;
    for (int b = 0; b < B; ++b) {
      int best = 0;
      double best_d = -1;
      for (int k = 0; k < K; ++k) {
        double dist = 0;
        for (int j = 0; j < d; ++j) {
          double df = double(zv[static_cast<size_t>(b) * d + j]) -
                      double(cb[static_cast<size_t>(k) * d + j]);
          dist += df * df;
        }
        if (best_d < 0 || dist < best_d) {
          best_d = dist;
          best = k;
        }
      }
      res.indices[b] = best;
      for (int j = 0; j < d; ++j)
        delta[static_cast<size_t>(b) * d + j] =
            cb[static_cast<size_t>(best) * d + j] -
            zv[static_cast<size_t>(b) * d + j];
      rows.push_back(slice_rows(codebook_, best, best + 1));
    }
    res.straight_through =
        add(z_pc, Tensor<T>::constant({B, d}, std::move(delta)));
    res.code_rows = concat_rows(rows);
    return res;
  }

  // --- pose decoders --------------------------------------------------------
  PoseDecode<T> decode_pose(const Tensor<T>& z_p, const Tensor<T>& c_p) const {
    PoseDecode<T> out;
    // F_r^{p,c}: instance normalization between layers
    Tensor<T> x = c_p;
    for (const auto& l : fr_layers_) x = relu(normalize_rows(l.forward(x)));
    out.r_c = fr_out_.forward(x);
    // F_q^{p,c}: layer normalization (affine)
    x = c_p;
    for (size_t l = 0; l < fq_layers_.size(); ++l) {
      x = normalize_rows(fq_layers_[l].forward(x));
      x = relu(add(mul(x, fq_gain_[l]), fq_bias_[l]));
    }
    out.q_c = fq_out_.forward(x);
    // F^{p,z}: shared backbone with output branches
    x = z_p;
    for (const auto& l : fz_backbone_) x = relu(l.forward(x));
    out.s = mul(sigmoid(head_s_.forward(x)), s_scale_);
    out.r_z = head_rz_.forward(x);
    out.q_z = head_qz_.forward(x);
    return out;
  }

  // Differentiable pivot q = q^c + q^z of one revolute part for one
  // instance row.
  Tensor<T> pivot_of(const PoseDecode<T>& dec, int b, int part) const {
    int ar = ar_slot(part);
    return add(slice_cols(slice_rows(dec.q_c, b, b + 1), 3 * ar, 3 * ar + 3),
               slice_cols(slice_rows(dec.q_z, b, b + 1), 3 * ar, 3 * ar + 3));
  }

  // Differentiable pose of one part for one instance row. Stage 1 keeps
  // r = r^c; stage 2 adds the instance residual. `s_override`, when defined,
  // replaces the decoded joint state (used for adversarial resampling).
  PoseGraph<T> build_pose(const PoseDecode<T>& dec, int b, int part,
                          bool use_rz,
                          const Tensor<T>& s_override = Tensor<T>()) const {
    const PartSpec& spec = parts_[part];
    if (spec.kind == JointKind::kFixed)
      return compose_part_pose_graph<T>(spec.kind, spec.e, Tensor<T>(),
                                        Tensor<T>(), Tensor<T>());
    int ap = ap_slot(part);
    Tensor<T> r = slice_cols(slice_rows(dec.r_c, b, b + 1), 3 * ap, 3 * ap + 3);
    if (use_rz)
      r = add(r, slice_cols(slice_rows(dec.r_z, b, b + 1), 3 * ap, 3 * ap + 3));
    Tensor<T> s = s_override.defined()
                      ? s_override
                      : slice_cols(slice_rows(dec.s, b, b + 1), ap, ap + 1);
    Tensor<T> q;
    if (spec.kind == JointKind::kRevolute) q = pivot_of(dec, b, part);
    return compose_part_pose_graph<T>(spec.kind, spec.e, r, s, q);
  }

  // --- shape decoders -------------------------------------------------------
  // x_local: [R,3] coordinates already transformed by B_i^{-1};
  // z_s_rows: [R, d] shape latents repeated per point.
  std::pair<Tensor<T>, Tensor<T>> shape_logits(int part,
                                               const Tensor<T>& x_local,
                                               const Tensor<T>& z_s_rows) const {
    Tensor<T> common = sine_mlp(common_dec_[part], x_local);
    Tensor<T> inst =
        sine_mlp(instance_dec_[part], concat_cols(x_local, z_s_rows));
    return {common, inst};
  }

  // --- discriminator ----------------------------------------------------------
  // cloud: [B*P, 4] (xyz + indicator). Returns [B,1] critic values.
  // When update_power is set, runs one power-iteration step per layer first.
  Tensor<T> discriminate(const Tensor<T>& cloud, int B,
                         bool update_power = false) const {
    if (cloud.shape().size() != 2 || cloud.shape()[1] != 4)
      throw std::runtime_error("discriminate: expected [B*P,4] cloud, got " +
                               shape_str(cloud.shape()));
    Tensor<T> h = leaky_relu(spec_forward(d1_, cloud, update_power), T(0.2));
    h = leaky_relu(spec_forward(d2_, h, update_power), T(0.2));
    h = rows_max_segments(h, B);
    h = leaky_relu(spec_forward(d3_, h, update_power), T(0.2));
    return spec_forward(d4_, h, update_power);
  }

  void warm_power_iterations(int steps) {
    for (int i = 0; i < steps; ++i)
      for (auto* l : {&d1_, &d2_, &d3_, &d4_}) power_step(*l);
  }

  // spectral norm estimate of a discriminator layer (0..3)
  double spectral_sigma(int layer) const {
    const SpecLinear* ls[4] = {&d1_, &d2_, &d3_, &d4_};
    return sigma_value(*ls[layer]);
  }
  int disc_layer_count() const { return 4; }

 private:
  enum class Kind { kGen, kDisc, kBuffer };

  struct SpecLinear {
    Tensor<T> W;  // [in, out]
    Tensor<T> b;  // [1, out]
    Tensor<T> u;  // [out] power-iteration buffer
    Tensor<T> v;  // [in]
  };

  Tensor<T> reg(Kind kind, const std::string& name, Tensor<T> t) {
    if (kind != Kind::kBuffer) t.set_requires_grad(true);
    auto& store = kind == Kind::kGen    ? gen_params_
                  : kind == Kind::kDisc ? disc_params_
                                        : buffers_;
    store.push_back({name, t});
    return t;
  }

  Linear<T> glorot(Rng& rng, const std::string& name, int in, int out,
                   Kind kind) {
    std::vector<T> w(static_cast<size_t>(in) * out);
    double bound = std::sqrt(6.0 / (in + out));
    for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
    Linear<T> l;
    l.W = reg(kind, name + ".W", Tensor<T>::param({in, out}, std::move(w)));
    l.b = reg(kind, name + ".b", Tensor<T>::zeros({1, out}));
    return l;
  }

  Linear<T> zero_linear(const std::string& name, int in, int out) {
    Linear<T> l;
    l.W = reg(Kind::kGen, name + ".W", Tensor<T>::zeros({in, out}));
    l.b = reg(Kind::kGen, name + ".b", Tensor<T>::zeros({1, out}));
    return l;
  }

  std::vector<Linear<T>> sine_mlp_params(Rng& rng, const std::string& name,
                                         int in, int hidden, int layers) {
    std::vector<Linear<T>> ls;
    for (int l = 0; l <= layers; ++l) {
      int i = l == 0 ? in : hidden;
      int o = l == layers ? 1 : hidden;
      std::vector<T> w(static_cast<size_t>(i) * o);
      double bound = std::sqrt(6.0 / i);
      if (l > 0) bound /= 30.0;  // all but the coordinate layer
      for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
      Linear<T> lin;
      lin.W = reg(Kind::kGen, name + ".l" + std::to_string(l) + ".W",
                  Tensor<T>::param({i, o}, std::move(w)));
      lin.b = reg(Kind::kGen, name + ".l" + std::to_string(l) + ".b",
                  Tensor<T>::zeros({1, o}));
      ls.push_back(lin);
    }
    return ls;
  }

  // sin(pre) on the coordinate layer, sin(w0 * pre) on deeper layers, linear
  // output head.
  Tensor<T> sine_mlp(const std::vector<Linear<T>>& ls, Tensor<T> x) const {
    for (size_t l = 0; l + 1 < ls.size(); ++l)
      x = sine_scaled(ls[l].forward(x),
                      l == 0 ? T(1) : static_cast<T>(net_.sine_w0));
    return ls.back().forward(x);
  }

  SpecLinear spec_linear(Rng& rng, const std::string& name, int in, int out) {
    SpecLinear l;
    std::vector<T> w(static_cast<size_t>(in) * out);
    double bound = std::sqrt(6.0 / (in + out));
    for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
    l.W = reg(Kind::kDisc, name + ".W", Tensor<T>::param({in, out}, std::move(w)));
    l.b = reg(Kind::kDisc, name + ".b", Tensor<T>::zeros({1, out}));
    std::vector<T> u(out), v(in);
    for (auto& x : u) x = static_cast<T>(rng.normal());
    for (auto& x : v) x = static_cast<T>(rng.normal());
    l.u = reg(Kind::kBuffer, name + ".u", Tensor<T>::constant({1, out}, u));
    l.v = reg(Kind::kBuffer, name + ".v", Tensor<T>::constant({1, in}, v));
    normalize_buf(l.u);
    normalize_buf(l.v);
    power_step(l);  // makes the sigma estimate positive from the start
    return l;
  }

  static void normalize_buf(Tensor<T>& t) {
    auto& v = t.mutable_value();
    double n = 0;
    for (T x : v) n += double(x) * double(x);
    n = std::sqrt(n) + 1e-12;
    for (T& x : v) x = static_cast<T>(x / n);
  }

  void power_step(SpecLinear& l) const {
    const int in = l.W.shape()[0], out = l.W.shape()[1];
    const auto& w = l.W.value();
    auto& u = l.u.mutable_value();
    auto& v = l.v.mutable_value();
    // v <- normalize(W u), u <- normalize(W^T v)
    for (int i = 0; i < in; ++i) {
      double acc = 0;
      for (int j = 0; j < out; ++j)
        acc += double(w[static_cast<size_t>(i) * out + j]) * double(u[j]);
      v[i] = static_cast<T>(acc);
    }
    normalize_buf(l.v);
    for (int j = 0; j < out; ++j) {
      double acc = 0;
      for (int i = 0; i < in; ++i)
        acc += double(w[static_cast<size_t>(i) * out + j]) * double(v[i]);
      u[j] = static_cast<T>(acc);
    }
    normalize_buf(l.u);
  }

  double sigma_value(const SpecLinear& l) const {
    const int in = l.W.shape()[0], out = l.W.shape()[1];
    const auto& w = l.W.value();
    const auto& u = l.u.value();
    const auto& v = l.v.value();
    double acc = 0;
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j)
        acc += double(v[i]) * double(w[static_cast<size_t>(i) * out + j]) *
               double(u[j]);
    return acc;
  }

  Tensor<T> spec_forward(const SpecLinear& l, const Tensor<T>& x,
                         bool update_power) const {
    if (update_power) power_step(const_cast<SpecLinear&>(l));
    // sigma as a graph expression of W with u, v held constant
    Tensor<T> vc = detach(l.v);                      // [1, in]
    Tensor<T> uc = transpose(detach(l.u));           // [out, 1]
    Tensor<T> sigma = matmul(matmul(vc, l.W), uc);   // [1, 1]
    // guarded so an all-zero weight stays zero instead of NaN
    Tensor<T> w_norm = mul(l.W, reciprocal(add_scalar(sigma, T(1e-12))));
    return linear(x, w_norm, l.b);
  }

  friend struct CheckpointIo;

  NetConfig net_;
  PartBudget budget_;
  std::vector<PartSpec> parts_;

  Linear<T> enc1_, enc2_, head_zs_, head_zp_, head_zpc_;
  std::vector<std::vector<Linear<T>>> common_dec_, instance_dec_;
  std::vector<Linear<T>> fr_layers_, fq_layers_;
  std::vector<Tensor<T>> fq_gain_, fq_bias_;
  Linear<T> fr_out_, fq_out_;
  std::vector<Linear<T>> fz_backbone_;
  Linear<T> head_s_, head_rz_, head_qz_;
  Tensor<T> codebook_;
  SpecLinear d1_, d2_, d3_, d4_;
  Tensor<T> s_scale_;

  std::vector<NamedParam<T>> gen_params_, disc_params_, buffers_;

 public:
  const Tensor<T>& codebook() const { return codebook_; }
};

// ---------------------------------------------------------------------------
// checkpoint: JSON header, then raw little-endian payload in header order

struct CheckpointIo {
  // peek the stored scalar type without loading tensors
  static std::string dtype_of(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "PPDCKPT1", 8) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    return json::parse(hs).at("dtype").get<std::string>();
  }

  template <class T>
  static void save(const std::string& path, const Model<T>& model,
                   const json& extra = json::object()) {
    json header;
    header["version"] = kVersion;
    header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    header["net"] = to_json(model.net_config());
    header["parts"] = to_json(model.budget());
    json table = json::array();
    for (const auto& p : model.part_table())
      table.push_back({{"kind", joint_kind_name(p.kind)},
                       {"e", {p.e.x, p.e.y, p.e.z}}});
    header["part_table"] = table;
    header["config"] = extra;
    json tensors = json::array();
    auto describe = [&](const std::vector<NamedParam<T>>& store,
                        const char* kind) {
      for (const auto& np : store)
        tensors.push_back({{"name", np.name},
                           {"shape", np.tensor.shape()},
                           {"kind", kind}});
    };
    describe(model.gen_params(), "gen");
    describe(model.disc_params(), "disc");
    describe(model.buffers(), "buffer");
    header["tensors"] = tensors;

    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw std::runtime_error("checkpoint: cannot open for write: " + path);
    std::string hs = header.dump();
    uint64_t len = hs.size();
    out.write("PPDCKPT1", 8);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), hs.size());
    auto dump = [&](const std::vector<NamedParam<T>>& store) {
      for (const auto& np : store)
        out.write(reinterpret_cast<const char*>(np.tensor.value().data()),
                  np.tensor.value().size() * sizeof(T));
    };
    dump(model.gen_params());
    dump(model.disc_params());
    dump(model.buffers());
    if (!out)
      throw std::runtime_error("checkpoint: write failed: " + path);
  }

  template <class T>
  static Model<T> load(const std::string& path, json* config_echo = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "PPDCKPT1", 8) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    json header = json::parse(hs);
    if (config_echo) *config_echo = header.value("config", json::object());

    NetConfig net = net_config_from_json(header.at("net"));
    PartBudget budget = part_budget_from_json(header.at("parts"));
    Model<T> model = Model<T>::init(net, budget, 0);
    // restore the part table exactly as stored
    std::vector<PartSpec> table;
    for (const auto& p : header.at("part_table"))
      table.push_back({joint_kind_from(p.at("kind").get<std::string>()),
                       Vec3{p.at("e")[0], p.at("e")[1], p.at("e")[2]}});
    model.parts_ = table;
    {
      std::vector<T> scale;
      for (const auto& p : table)
        if (p.kind == JointKind::kRevolute)
          scale.push_back(static_cast<T>(kPiD));
        else if (p.kind == JointKind::kPrismatic)
          scale.push_back(T(1));
      model.s_scale_ = Tensor<T>::constant({1, model.np()}, scale);
    }

    const std::string dtype = header.at("dtype");
    const size_t elem = dtype == "f32" ? 4 : 8;
    std::unordered_map<std::string, Tensor<T>> by_name;
    for (auto& np : model.gen_params()) by_name.emplace(np.name, np.tensor);
    for (auto& np : model.disc_params()) by_name.emplace(np.name, np.tensor);
    for (auto& np : model.buffers()) by_name.emplace(np.name, np.tensor);
    for (const auto& t : header.at("tensors")) {
      std::string name = t.at("name");
      Shape shape = t.at("shape").get<Shape>();
      size_t n = shape_numel(shape);
      std::vector<char> raw(n * elem);
      in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint: unknown tensor '" + name +
                                 "' in " + path);
      if (it->second.shape() != shape)
        throw std::runtime_error("checkpoint: shape mismatch for '" + name +
                                 "' in " + path);
      auto& dst = it->second.mutable_value();
      for (size_t i = 0; i < n; ++i) {
        double x;
        if (elem == 4) {
          float f;
          std::memcpy(&f, raw.data() + i * 4, 4);
          x = f;
        } else {
          std::memcpy(&x, raw.data() + i * 8, 8);
        }
        dst[i] = static_cast<T>(x);
      }
    }
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return model;
  }
};

}  // namespace ppd
