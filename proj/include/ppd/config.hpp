#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppd/geometry.hpp"

namespace ppd {

using nlohmann::json;

constexpr double kPiD = 3.14159265358979323846;

struct NetConfig {
  int enc_hidden = 128;
  int z_s = 32;
  int z_p = 16;
  int z_pc = 16;
  int shape_hidden = 64;
  int shape_layers = 4;
  int pose_hidden = 64;
  int pose_layers = 3;
  int disc_hidden = 64;
  int disc_hidden2 = 128;
  int n_qt = 4;
  double sine_w0 = 30.0;
};

struct PartBudget {
  int fixed = 1;
  int revolute = 3;
  int prismatic = 4;
  int total() const { return fixed + revolute + prismatic; }
};

struct LossWeights {
  double rec = 0.01;
  double rec_c = 0.001;
  double dev = 0.1;
  double var_s = 0.1;
  double loc = 100.0;
  double var_q = 0.01;
  double vol = 1000.0;
  double adv_g = 0.65;
  double adv_d = 0.35;
  double v = 0.01;
  double h_revolute = kPiD / 2;  // max motion for fake-state sampling
  double h_prismatic = 0.4;
};

struct TrainConfig {
  int batch = 18;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int stage1_steps = 3000;
  int stage2_steps = 2000;
  uint64_t seed = 1;
  int checkpoint_every = 1000;
  int surface_points = 4096;  // encoder input points per step
  int occ_points = 4096;      // occupancy samples per instance per step
  int adv_points = 1024;      // 4D cloud size for the adversarial pass
  std::string precision = "f64";
  LossWeights weights;
  PartBudget parts;
  NetConfig net;

  void validate() const {
    if (batch < 2)
      throw std::runtime_error("config: batch must be >= 2 (variance loss "
                               "needs batch statistics)");
    if (stage1_steps < 0 || stage2_steps < 0)
      throw std::runtime_error("config: step counts must be non-negative");
    if (precision != "f32" && precision != "f64")
      throw std::runtime_error("config: precision must be f32 or f64");
  }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::runtime_error("config: unknown key '" + it.key() + "' in " +
                               where);
}

template <class V>
void maybe(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline json to_json(const NetConfig& c) {
  return {{"enc_hidden", c.enc_hidden}, {"z_s", c.z_s},      {"z_p", c.z_p},
          {"z_pc", c.z_pc},             {"shape_hidden", c.shape_hidden},
          {"shape_layers", c.shape_layers}, {"pose_hidden", c.pose_hidden},
          {"pose_layers", c.pose_layers},   {"disc_hidden", c.disc_hidden},
          {"disc_hidden2", c.disc_hidden2}, {"n_qt", c.n_qt},
          {"sine_w0", c.sine_w0}};
}

inline NetConfig net_config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"enc_hidden", "z_s", "z_p", "z_pc", "shape_hidden",
                          "shape_layers", "pose_hidden", "pose_layers",
                          "disc_hidden", "disc_hidden2", "n_qt", "sine_w0"},
                         "net");
  NetConfig c;
  detail::maybe(j, "enc_hidden", c.enc_hidden);
  detail::maybe(j, "z_s", c.z_s);
  detail::maybe(j, "z_p", c.z_p);
  detail::maybe(j, "z_pc", c.z_pc);
  detail::maybe(j, "shape_hidden", c.shape_hidden);
  detail::maybe(j, "shape_layers", c.shape_layers);
  detail::maybe(j, "pose_hidden", c.pose_hidden);
  detail::maybe(j, "pose_layers", c.pose_layers);
  detail::maybe(j, "disc_hidden", c.disc_hidden);
  detail::maybe(j, "disc_hidden2", c.disc_hidden2);
  detail::maybe(j, "n_qt", c.n_qt);
  detail::maybe(j, "sine_w0", c.sine_w0);
  return c;
}

inline json to_json(const LossWeights& w) {
  return {{"rec", w.rec},       {"rec_c", w.rec_c}, {"dev", w.dev},
          {"var_s", w.var_s},   {"loc", w.loc},     {"var_q", w.var_q},
          {"vol", w.vol},       {"adv_g", w.adv_g}, {"adv_d", w.adv_d},
          {"v", w.v},           {"h_revolute", w.h_revolute},
          {"h_prismatic", w.h_prismatic}};
}

inline LossWeights loss_weights_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"rec", "rec_c", "dev", "var_s", "loc", "var_q",
                          "vol", "adv_g", "adv_d", "v", "h_revolute",
                          "h_prismatic"},
                         "weights");
  LossWeights w;
  detail::maybe(j, "rec", w.rec);
  detail::maybe(j, "rec_c", w.rec_c);
  detail::maybe(j, "dev", w.dev);
  detail::maybe(j, "var_s", w.var_s);
  detail::maybe(j, "loc", w.loc);
  detail::maybe(j, "var_q", w.var_q);
  detail::maybe(j, "vol", w.vol);
  detail::maybe(j, "adv_g", w.adv_g);
  detail::maybe(j, "adv_d", w.adv_d);
  detail::maybe(j, "v", w.v);
  detail::maybe(j, "h_revolute", w.h_revolute);
  detail::maybe(j, "h_prismatic", w.h_prismatic);
  return w;
}

inline json to_json(const PartBudget& p) {
  return {{"fixed", p.fixed}, {"revolute", p.revolute},
          {"prismatic", p.prismatic}};
}

inline PartBudget part_budget_from_json(const json& j) {
  detail::reject_unknown(j, {"fixed", "revolute", "prismatic"}, "parts");
  PartBudget p;
  detail::maybe(j, "fixed", p.fixed);
  detail::maybe(j, "revolute", p.revolute);
  detail::maybe(j, "prismatic", p.prismatic);
  return p;
}

inline json to_json(const TrainConfig& c) {
  return {{"batch", c.batch},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"stage1_steps", c.stage1_steps},
          {"stage2_steps", c.stage2_steps},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"surface_points", c.surface_points},
          {"occ_points", c.occ_points},
          {"adv_points", c.adv_points},
          {"precision", c.precision},
          {"weights", to_json(c.weights)},
          {"parts", to_json(c.parts)},
          {"net", to_json(c.net)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  detail::reject_unknown(
      j, {"batch", "lr", "beta1", "beta2", "adam_eps", "stage1_steps",
          "stage2_steps", "seed", "checkpoint_every", "surface_points",
          "occ_points", "adv_points", "precision", "weights", "parts", "net"},
      "train config");
  TrainConfig c;
  detail::maybe(j, "batch", c.batch);
  detail::maybe(j, "lr", c.lr);
  detail::maybe(j, "beta1", c.beta1);
  detail::maybe(j, "beta2", c.beta2);
  detail::maybe(j, "adam_eps", c.adam_eps);
  detail::maybe(j, "stage1_steps", c.stage1_steps);
  detail::maybe(j, "stage2_steps", c.stage2_steps);
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "checkpoint_every", c.checkpoint_every);
  detail::maybe(j, "surface_points", c.surface_points);
  detail::maybe(j, "occ_points", c.occ_points);
  detail::maybe(j, "adv_points", c.adv_points);
  detail::maybe(j, "precision", c.precision);
  if (j.contains("weights")) c.weights = loss_weights_from_json(j["weights"]);
  if (j.contains("parts")) c.parts = part_budget_from_json(j["parts"]);
  if (j.contains("net")) c.net = net_config_from_json(j["net"]);
  c.validate();
  return c;
}

// Default part table: one fixed part, three revolute parts initialized to
// the +z, -z and +y directions, four prismatic parts initialized to +x.
struct PartSpec {
  JointKind kind;
  Vec3 e;
};

inline std::vector<PartSpec> default_part_table(const PartBudget& b) {
  std::vector<PartSpec> t;
  for (int i = 0; i < b.fixed; ++i) t.push_back({JointKind::kFixed, {0, 0, 1}});
  const Vec3 rev_dirs[3] = {{0, 0, 1}, {0, 0, -1}, {0, 1, 0}};
  for (int i = 0; i < b.revolute; ++i)
    t.push_back({JointKind::kRevolute, rev_dirs[i % 3]});
  for (int i = 0; i < b.prismatic; ++i)
    t.push_back({JointKind::kPrismatic, {1, 0, 0}});
  return t;
}

}  // namespace ppd
