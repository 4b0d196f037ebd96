#pragma once

// Two-stage optimization loop: stage 1 fits 16^3 occupancy with r = r^c,
// stage 2 fits 32^3 samples with the instance direction residual enabled.
// Each step runs one discriminator Adam update, then one generator update.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ppd/config.hpp"
#include "ppd/datagen.hpp"
#include "ppd/fields.hpp"
#include "ppd/losses.hpp"
#include "ppd/nets.hpp"
#include "ppd/tensor.hpp"

namespace ppd {

template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<NamedParam<T>> params, double lr, double b1, double b2,
       double eps)
      : params_(std::move(params)), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    for (auto& p : params_) {
      states_.push_back({std::vector<T>(p.tensor.size(), T(0)),
                         std::vector<T>(p.tensor.size(), T(0))});
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].tensor;
      if (p.grad().empty()) continue;
      auto& value = p.mutable_value();
      const auto& g = p.grad();
      auto& [m, v] = states_[k];
      for (size_t i = 0; i < value.size(); ++i) {
        m[i] = static_cast<T>(b1_ * m[i] + (1 - b1_) * g[i]);
        v[i] = static_cast<T>(b2_ * v[i] + (1 - b2_) * double(g[i]) * g[i]);
        double mh = m[i] / bc1, vh = v[i] / bc2;
        value[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }

 private:
  struct State {
    std::vector<T> m, v;
  };
  std::vector<NamedParam<T>> params_;
  std::vector<State> states_;
  double lr_ = 1e-4, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

struct LossReport {
  double rec = 0, vol = 0, vq = 0, dev = 0, loc = 0, var = 0, adv_g = 0;
  double adv_d = 0, total_g = 0, total_d = 0;

  json to_json() const {
    return {{"rec", rec},     {"vol", vol},     {"vq", vq},
            {"dev", dev},     {"loc", loc},     {"var", var},
            {"adv_g", adv_g}, {"adv_d", adv_d}, {"total_g", total_g},
            {"total_d", total_d}};
  }
};

template <class T>
struct TrainState {
  Model<T> model;
  Adam<T> gen_opt, disc_opt;
  TrainConfig cfg;

  static TrainState init(const TrainConfig& cfg) {
    TrainState st;
    st.cfg = cfg;
    st.model = Model<T>::init(cfg.net, cfg.parts, cfg.seed);
    st.gen_opt = Adam<T>(st.model.gen_params(), cfg.lr, cfg.beta1, cfg.beta2,
                         cfg.adam_eps);
    st.disc_opt = Adam<T>(st.model.disc_params(), cfg.lr, cfg.beta1, cfg.beta2,
                          cfg.adam_eps);
    return st;
  }
};

namespace detail_train {

// draw `want` distinct indices below n (or all of them when want >= n)
inline std::vector<int> draw_indices(int n, int want, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (want >= n) return idx;
  for (int i = 0; i < want; ++i)
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(want);
  return idx;
}

template <class T>
Tensor<T> rows_from(const std::vector<float>& flat,
                    const std::vector<int>& pick, int stride) {
  std::vector<T> v(pick.size() * stride);
  for (size_t r = 0; r < pick.size(); ++r)
    for (int j = 0; j < stride; ++j)
      v[r * stride + j] =
          static_cast<T>(flat[static_cast<size_t>(pick[r]) * stride + j]);
  return Tensor<T>::constant({static_cast<int>(pick.size()), stride},
                             std::move(v));
}

}  // namespace detail_train

// One optimization step over a batch of instances: a discriminator update
// on L_adv_d followed by a generator update on the summed objectives.
template <class T>
LossReport train_step(TrainState<T>& st,
                      const std::vector<const InstanceRecord*>& batch,
                      int stage, long step_index) {
  const TrainConfig& cfg = st.cfg;
  Model<T>& model = st.model;
  const int B = static_cast<int>(batch.size());
  if (B < 1) throw std::runtime_error("train_step: empty batch");
  const bool use_rz = stage >= 2;
  const LossWeights& w = cfg.weights;
  Rng rng = Rng(cfg.seed).fork(0xabcdef ^ static_cast<uint64_t>(step_index));

  const int N = model.part_count();
  const int zdim = model.net_config().z_s;

  // ---- subsample the step's points -------------------------------------
  std::vector<Tensor<T>> enc_in, occ_pts, adv_pts;
  std::vector<std::vector<double>> occ_ind, adv_ind;
  std::vector<std::vector<Vec3>> occ_world;
  int Ms = 0, Ma = 0;
  for (int b = 0; b < B; ++b) {
    const InstanceRecord& rec = *batch[b];
    Rng sub = rng.fork(17 + b);
    const int P = static_cast<int>(rec.surface.size() / 3);
    auto spick = detail_train::draw_indices(P, cfg.surface_points, sub);
    enc_in.push_back(detail_train::rows_from<T>(rec.surface, spick, 3));

    const auto& coords = stage == 1 ? rec.occ16 : rec.occ32;
    const auto& inds = stage == 1 ? rec.ind16 : rec.ind32;
    const int M = static_cast<int>(inds.size());
    auto opick = detail_train::draw_indices(M, cfg.occ_points, sub);
    occ_pts.push_back(detail_train::rows_from<T>(coords, opick, 3));
    std::vector<double> iv(opick.size());
    std::vector<Vec3> wv(opick.size());
    for (size_t r = 0; r < opick.size(); ++r) {
      iv[r] = inds[opick[r]];
      wv[r] = {coords[static_cast<size_t>(opick[r]) * 3],
               coords[static_cast<size_t>(opick[r]) * 3 + 1],
               coords[static_cast<size_t>(opick[r]) * 3 + 2]};
    }
    occ_ind.push_back(std::move(iv));
    occ_world.push_back(std::move(wv));

    auto apick = detail_train::draw_indices(M, cfg.adv_points, sub);
    adv_pts.push_back(detail_train::rows_from<T>(coords, apick, 3));
    std::vector<double> av(apick.size());
    for (size_t r = 0; r < apick.size(); ++r) av[r] = inds[apick[r]];
    adv_ind.push_back(std::move(av));
  }
  Ms = occ_pts[0].shape()[0];
  Ma = adv_pts[0].shape()[0];

  // ---- encoder, quantization, pose decoding ----------------------------
  auto latents = model.encode(concat_rows(enc_in), B);
  auto quant = model.quantize(latents.z_pc);
  auto dec = model.decode_pose(latents.z_p, quant.straight_through);

  std::vector<std::vector<PoseGraph<T>>> poses(B);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < N; ++i)
      poses[b].push_back(model.build_pose(dec, b, i, use_rz));

  Tensor<T> z_rows = repeat_rows(latents.z_s, Ms);

  // ---- reconstruction field at the occupancy samples -------------------
  std::vector<PartFieldGraph<T>> part_fields;
  std::vector<Tensor<T>> inst_logit_rows;  // for the volume loss
  for (int i = 0; i < N; ++i) {
    std::vector<Tensor<T>> locals;
    for (int b = 0; b < B; ++b)
      locals.push_back(inverse_apply_graph(poses[b][i], occ_pts[b]));
    Tensor<T> x_local = concat_rows(locals);
    auto f = part_field_graph(model, i, x_local, z_rows);
    part_fields.push_back(f);
    inst_logit_rows.push_back(transpose(f.inst_logit));
  }
  auto composed = compose_graph(part_fields, ComposeMode::kSoft);

  std::vector<T> target_flat;
  target_flat.reserve(static_cast<size_t>(B) * Ms);
  for (int b = 0; b < B; ++b)
    for (double v : occ_ind[b]) target_flat.push_back(static_cast<T>(v));
  Tensor<T> target =
      Tensor<T>::constant({1, B * Ms}, std::move(target_flat));

  Tensor<T> l_rec = reconstruction_loss(composed.whole, composed.whole_c,
                                        target, w);

  // ---- volume preservation ---------------------------------------------
  Tensor<T> posed_rows = concat_rows(inst_logit_rows);
  Tensor<T> occ_all = concat_rows(occ_pts);
  std::vector<Tensor<T>> rest_rows_v;
  for (int i = 0; i < N; ++i) {
    auto [c, inst] = model.shape_logits(i, occ_all, z_rows);
    rest_rows_v.push_back(transpose(inst));
  }
  Tensor<T> rest_rows = concat_rows(rest_rows_v);
  Tensor<T> l_vol = volume_loss(posed_rows, rest_rows, w);

  // ---- latent quantization ----------------------------------------------
  Tensor<T> l_vq = vq_loss(latents.z_pc, quant.code_rows);

  // ---- residual deviation ------------------------------------------------
  std::vector<Tensor<T>> dev_terms;
  for (int b = 0; b < B; ++b) {
    std::vector<Tensor<T>> qzs, rzs;
    for (int i = 0; i < N; ++i) {
      const auto& spec = model.part_table()[i];
      if (spec.kind == JointKind::kFixed) continue;
      int ap = model.ap_slot(i);
      rzs.push_back(
          slice_cols(slice_rows(dec.r_z, b, b + 1), 3 * ap, 3 * ap + 3));
      if (spec.kind == JointKind::kRevolute) {
        int ar = model.ar_slot(i);
        qzs.push_back(
            slice_cols(slice_rows(dec.q_z, b, b + 1), 3 * ar, 3 * ar + 3));
      }
    }
    dev_terms.push_back(deviation_loss(qzs, rzs, w));
  }
  Tensor<T> l_dev = mean_all(stack_scalars(dev_terms, {B}));

  // ---- pivot location and variance ---------------------------------------
  std::vector<std::vector<Tensor<T>>> pivots(B);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < N; ++i)
      if (model.part_table()[i].kind == JointKind::kRevolute)
        pivots[b].push_back(model.pivot_of(dec, b, i));

  std::vector<Tensor<T>> loc_terms;
  for (int b = 0; b < B; ++b) {
    std::vector<Vec3> gt_inside;
    for (size_t r = 0; r < occ_ind[b].size(); ++r)
      if (occ_ind[b][r] > 0.5) gt_inside.push_back(occ_world[b][r]);
    std::vector<std::vector<Vec3>> inside;
    for (int i = 0; i < N; ++i) {
      if (model.part_table()[i].kind != JointKind::kRevolute) continue;
      const auto& lv = part_fields[i].logit.value();
      std::vector<Vec3> pts;
      for (int r = 0; r < Ms; ++r)
        if (lv[static_cast<size_t>(b) * Ms + r] > 0)  // sigma(l) > 0.5
          pts.push_back(occ_world[b][r]);
      inside.push_back(std::move(pts));
    }
    loc_terms.push_back(location_loss(pivots[b], gt_inside, inside, w));
  }
  Tensor<T> l_loc = mean_all(stack_scalars(loc_terms, {B}));

  Tensor<T> l_var = variance_loss(dec.s, pivots, w);

  // ---- adversarial clouds -------------------------------------------------
  // fake: composed field under the estimated configuration with resampled
  // joint states; real: ground-truth (coords, indicator) tuples
  std::vector<PartFieldGraph<T>> fake_fields;
  Tensor<T> z_rows_adv = repeat_rows(latents.z_s, Ma);
  {
    Rng srng = rng.fork(991);
    std::vector<std::vector<PoseGraph<T>>> fposes(B);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < N; ++i) {
        const auto& spec = model.part_table()[i];
        Tensor<T> s_override;
        if (spec.kind == JointKind::kRevolute)
          s_override = Tensor<T>::scalar(
              static_cast<T>(srng.uniform(0, w.h_revolute)));
        else if (spec.kind == JointKind::kPrismatic)
          s_override = Tensor<T>::scalar(
              static_cast<T>(srng.uniform(0, w.h_prismatic)));
        fposes[b].push_back(model.build_pose(dec, b, i, use_rz, s_override));
      }
    for (int i = 0; i < N; ++i) {
      std::vector<Tensor<T>> locals;
      for (int b = 0; b < B; ++b)
        locals.push_back(inverse_apply_graph(fposes[b][i], adv_pts[b]));
      fake_fields.push_back(
          part_field_graph(model, i, concat_rows(locals), z_rows_adv));
    }
  }
  auto fake_comp = compose_graph(fake_fields, ComposeMode::kSoft);
  Tensor<T> adv_coords = concat_rows(adv_pts);
  Tensor<T> fake_cloud = concat_cols(adv_coords, transpose(fake_comp.whole));

  std::vector<T> real_flat;
  real_flat.reserve(static_cast<size_t>(B) * Ma * 4);
  for (int b = 0; b < B; ++b) {
    const auto& cv = adv_pts[b].value();
    for (int r = 0; r < Ma; ++r) {
      real_flat.push_back(cv[static_cast<size_t>(r) * 3]);
      real_flat.push_back(cv[static_cast<size_t>(r) * 3 + 1]);
      real_flat.push_back(cv[static_cast<size_t>(r) * 3 + 2]);
      real_flat.push_back(static_cast<T>(adv_ind[b][r]));
    }
  }
  Tensor<T> real_cloud =
      Tensor<T>::constant({B * Ma, 4}, std::move(real_flat));

  // interpolates: per-instance epsilon mixes of real and detached fake
  Rng erng = rng.fork(433);
  std::vector<T> interp_flat(static_cast<size_t>(B) * Ma * 4);
  {
    const auto& fv = fake_cloud.value();
    const auto& rv = real_cloud.value();
    for (int b = 0; b < B; ++b) {
      double eps = erng.uniform();
      for (int r = 0; r < Ma * 4; ++r) {
        size_t k = static_cast<size_t>(b) * Ma * 4 + r;
        interp_flat[k] = static_cast<T>(eps * double(rv[k]) +
                                        (1 - eps) * double(fv[k]));
      }
    }
  }
  Tensor<T> interpolates =
      detach(Tensor<T>::constant({B * Ma, 4}, std::move(interp_flat)), true);

  // ---- discriminator step -------------------------------------------------
  st.disc_opt.zero_grad();
  auto [l_adv_d, l_adv_g_unused] = adversarial_losses(
      model, real_cloud, detach(fake_cloud), interpolates, B, w, true);
  backward(l_adv_d);
  st.disc_opt.step();

  // ---- generator step against the updated critic ---------------------------
  Tensor<T> d_fake_new = model.discriminate(fake_cloud, B, false);
  Tensor<T> l_adv_g =
      mul_scalar(neg(mean_all(d_fake_new)), static_cast<T>(w.adv_g));

  Tensor<T> total_g = add(
      add(add(l_rec, l_vol), add(l_vq, l_dev)), add(add(l_loc, l_var), l_adv_g));
  st.gen_opt.zero_grad();
  backward(total_g);
  st.gen_opt.step();

  LossReport rep;
  rep.rec = double(l_rec.item());
  rep.vol = double(l_vol.item());
  rep.vq = double(l_vq.item());
  rep.dev = double(l_dev.item());
  rep.loc = double(l_loc.item());
  rep.var = double(l_var.item());
  rep.adv_g = double(l_adv_g.item());
  rep.adv_d = double(l_adv_d.item());
  rep.total_g = double(total_g.item());
  rep.total_d = rep.adv_d;
  const std::pair<const char*, double> checks[] = {
      {"rec", rep.rec}, {"vol", rep.vol}, {"vq", rep.vq},
      {"dev", rep.dev}, {"loc", rep.loc}, {"var", rep.var},
      {"adv_g", rep.adv_g}, {"adv_d", rep.adv_d}};
  for (const auto& [name, v] : checks)
    if (!std::isfinite(v))
      throw std::runtime_error("train_step: non-finite loss component '" +
                               std::string(name) + "' at step " +
                               std::to_string(step_index));
  return rep;
}

// Full two-stage run with periodic checkpoints and a JSON-lines log.
// Returns the final checkpoint path.
template <class T>
std::string fit(TrainState<T>& st, const Dataset& data,
                const std::string& out_dir,
                const json& config_echo = json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log)
    throw std::runtime_error("fit: cannot open train log in " + out_dir);

  auto train_ids = data.record_ids("train");
  if (train_ids.empty()) throw std::runtime_error("fit: no training records");
  const TrainConfig& cfg = st.cfg;
  const long total = cfg.stage1_steps + cfg.stage2_steps;
  auto t0 = std::chrono::steady_clock::now();

  auto save = [&](const std::string& name) {
    json extra = config_echo;
    extra["train_config"] = to_json(cfg);
    std::string path = (fs::path(out_dir) / name).string();
    CheckpointIo::save(path, st.model, extra);
    return path;
  };

  std::string last;
  for (long step = 0; step < total; ++step) {
    int stage = step < cfg.stage1_steps ? 1 : 2;
    Rng brng = Rng(cfg.seed).fork(0xb47c ^ static_cast<uint64_t>(step));
    std::vector<const InstanceRecord*> batch;
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(
          &data.records[train_ids[brng.below(train_ids.size())]]);
    LossReport rep = train_step(st, batch, stage, step);
    json line = rep.to_json();
    line["step"] = step;
    line["stage"] = stage;
    line["elapsed_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    log << line.dump() << "\n";
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      last = save("ckpt_step" + std::to_string(step + 1) + ".bin");
    if (step + 1 == cfg.stage1_steps && cfg.stage2_steps > 0)
      last = save("ckpt_stage1.bin");
  }
  log.flush();
  return save("ckpt_final.bin");
}

}  // namespace ppd
