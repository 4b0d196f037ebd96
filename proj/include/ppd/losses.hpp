#pragma once

// Training objectives: reconstruction, volume preservation, vector
// quantization, residual deviation, pivot location, state/pivot variance
// and the WGAN-GP adversarial pair.

#include <cmath>
#include <iostream>
#include <utility>
#include <vector>

#include "ppd/config.hpp"
#include "ppd/geometry.hpp"
#include "ppd/nets.hpp"
#include "ppd/tensor.hpp"

namespace ppd {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kVarEps = 1e-4;
inline constexpr double kEmptySetDistance = 1.0;  // cube-diagonal scale

// mean binary cross entropy, probabilities clamped away from {0,1}
template <class T>
Tensor<T> bce_mean(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T> p = clamp(pred, T(kBceClamp), T(1 - kBceClamp));
  Tensor<T> pos = mul(target, log_(p));
  Tensor<T> negt = mul(add_scalar(neg(target), T(1)),
                       log_(add_scalar(neg(p), T(1))));
  return neg(mean_all(add(pos, negt)));
}

// lambda_rec * BCE(whole, target) + lambda_rec_c * BCE(whole_common, target)
template <class T>
Tensor<T> reconstruction_loss(const Tensor<T>& pred, const Tensor<T>& pred_c,
                              const Tensor<T>& target, const LossWeights& w) {
  return add(mul_scalar(bce_mean(pred, target), static_cast<T>(w.rec)),
             mul_scalar(bce_mean(pred_c, target), static_cast<T>(w.rec_c)));
}

// lambda_vol * (E[relu(max_i posed)] - E[relu(max_i rest)])^2 over the
// instance-decoder logits, stacked per part as [N, M].
template <class T>
Tensor<T> volume_loss(const Tensor<T>& posed_logits,
                      const Tensor<T>& rest_logits, const LossWeights& w) {
  Tensor<T> posed = mean_all(relu(rows_max(posed_logits)));
  Tensor<T> rest = mean_all(relu(rows_max(rest_logits)));
  return mul_scalar(square(sub(posed, rest)), static_cast<T>(w.vol));
}

// Eq. 4 commitment term and the codebook-pull term, batch means of per-row
// Euclidean norms. The commitment term sends gradient only to z_pc; the
// pull term only to the codebook.
template <class T>
std::pair<Tensor<T>, Tensor<T>> vq_loss_terms(const Tensor<T>& z_pc,
                                              const Tensor<T>& code_rows) {
  const int B = z_pc.shape()[0];
  std::vector<Tensor<T>> commit, pull;
  for (int b = 0; b < B; ++b) {
    Tensor<T> z = slice_rows(z_pc, b, b + 1);
    Tensor<T> c = slice_rows(code_rows, b, b + 1);
    commit.push_back(l2_norm(sub(z, detach(c))));
    pull.push_back(l2_norm(sub(detach(z), c)));
  }
  return {mean_all(stack_scalars(commit, {B})),
          mean_all(stack_scalars(pull, {B}))};
}

template <class T>
Tensor<T> vq_loss(const Tensor<T>& z_pc, const Tensor<T>& code_rows) {
  auto [commit, pull] = vq_loss_terms(z_pc, code_rows);
  return add(commit, pull);
}

// lambda_dev * ( mean over revolute parts of ||q_z|| +
//                mean over non-fixed parts of ||r_z|| )
template <class T>
Tensor<T> deviation_loss(const std::vector<Tensor<T>>& q_z,
                         const std::vector<Tensor<T>>& r_z,
                         const LossWeights& w) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  if (!q_z.empty()) {
    std::vector<Tensor<T>> norms;
    for (const auto& q : q_z) norms.push_back(l2_norm(q));
    acc = add(acc, mean_all(stack_scalars(norms, {int(q_z.size())})));
  }
  if (!r_z.empty()) {
    std::vector<Tensor<T>> norms;
    for (const auto& r : r_z) norms.push_back(l2_norm(r));
    acc = add(acc, mean_all(stack_scalars(norms, {int(r_z.size())})));
  }
  return mul_scalar(acc, static_cast<T>(w.dev));
}

namespace detail_loss {

// distance from a differentiable pivot to the nearest point of a constant
// set; the argmin is selected on values, gradient flows through the pivot
template <class T>
Tensor<T> min_distance(const Tensor<T>& pivot, const std::vector<Vec3>& set) {
  if (set.empty()) return Tensor<T>::scalar(T(kEmptySetDistance));
  const auto& qv = pivot.value();
  Vec3 q{double(qv[0]), double(qv[1]), double(qv[2])};
  size_t best = 0;
  double best_d = -1;
  for (size_t i = 0; i < set.size(); ++i) {
    double d = (set[i] - q).norm();
    if (best_d < 0 || d < best_d) {
      best_d = d;
      best = i;
    }
  }
  Tensor<T> p = Tensor<T>::constant(
      {1, 3}, {static_cast<T>(set[best].x), static_cast<T>(set[best].y),
               static_cast<T>(set[best].z)});
  return l2_norm(sub(pivot, p));
}

}  // namespace detail_loss

// Pivot-location regularizer for one instance. `pivots` are the
// differentiable q_i of the revolute parts; `gt_inside` the sample points
// with O = 1; `part_inside[i]` the posed sample points where part i's
// indicator exceeds 0.5. Empty sets contribute a constant fallback distance.
template <class T>
Tensor<T> location_loss(const std::vector<Tensor<T>>& pivots,
                        const std::vector<Vec3>& gt_inside,
                        const std::vector<std::vector<Vec3>>& part_inside,
                        const LossWeights& w) {
  const int nr = static_cast<int>(pivots.size());
  if (nr == 0) return Tensor<T>::scalar(T(0));
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (int i = 0; i < nr; ++i) {
    Tensor<T> d_gt = detail_loss::min_distance(pivots[i], gt_inside);
    Tensor<T> d_own = detail_loss::min_distance(pivots[i], part_inside[i]);
    std::vector<Vec3> others;
    for (int j = 0; j < nr; ++j)
      if (j != i)
        others.insert(others.end(), part_inside[j].begin(),
                      part_inside[j].end());
    Tensor<T> d_others = detail_loss::min_distance(pivots[i], others);
    acc = add(acc, add(d_gt, mul_scalar(add(d_own, d_others), T(0.5))));
  }
  return mul_scalar(acc, static_cast<T>(w.loc / nr));
}

// Variance regularizer: keeps joint states moving across the batch and
// pivot points spread apart. `states` is [B, Np]; `pivots[b][k]` is the
// differentiable pivot of revolute slot k in instance b.
template <class T>
Tensor<T> variance_loss(const Tensor<T>& states,
                        const std::vector<std::vector<Tensor<T>>>& pivots,
                        const LossWeights& w) {
  const int B = states.shape()[0], np = states.shape()[1];
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  if (np == 0) return acc;
  if (B >= 2) {
    std::vector<Tensor<T>> terms;
    for (int slot = 0; slot < np; ++slot) {
      Tensor<T> col = slice_cols(states, slot, slot + 1);
      terms.push_back(
          reciprocal(add_scalar(batch_std(col), T(kVarEps))));
    }
    Tensor<T> per_part = mean_all(stack_scalars(terms, {np}));
    acc = add(acc, mul_scalar(per_part, static_cast<T>(w.var_s)));
  } else {
    std::cerr << "variance_loss: batch size 1, std term skipped\n";
  }
  if (!pivots.empty() && pivots[0].size() >= 2) {
    std::vector<Tensor<T>> inst_terms;
    for (int b = 0; b < static_cast<int>(pivots.size()); ++b) {
      const auto& qs = pivots[b];
      Tensor<T> pair_acc = Tensor<T>::scalar(T(0));
      for (size_t i = 0; i < qs.size(); ++i)
        for (size_t j = 0; j < qs.size(); ++j) {
          if (i == j) continue;
          Tensor<T> d = l2_norm(sub(qs[i], qs[j]));
          pair_acc = add(pair_acc,
                         exp_(mul_scalar(d, static_cast<T>(-1.0 / w.v))));
        }
      inst_terms.push_back(pair_acc);
    }
    Tensor<T> mean_pairs =
        mean_all(stack_scalars(inst_terms, {int(pivots.size())}));
    acc = add(acc, mul_scalar(mean_pairs, static_cast<T>(w.var_q / np)));
  }
  return acc;
}

// WGAN-GP pair. real/fake/interpolates are row-stacked [B*P,4] clouds; the
// interpolates tensor must be a gradient-target leaf. The critic is a
// callable mapping ([B*P,4], B) to [B,1] built from twice-differentiable
// ops. Returns (L_adv_d, L_adv_g) evaluated against the same critic.
template <class T, class DiscFn>
std::pair<Tensor<T>, Tensor<T>> adversarial_losses(
    DiscFn&& disc, const Tensor<T>& real, const Tensor<T>& fake,
    const Tensor<T>& interpolates, int B, const LossWeights& w) {
  Tensor<T> d_real = disc(real, B);
  Tensor<T> d_fake = disc(fake, B);
  Tensor<T> gap = sub(mean_all(d_fake), mean_all(d_real));

  Tensor<T> y = sum_all(disc(interpolates, B));
  Tensor<T> g = input_gradient(y, interpolates);
  const int P = interpolates.shape()[0] / B;
  std::vector<Tensor<T>> pens;
  for (int b = 0; b < B; ++b) {
    Tensor<T> gb = slice_rows(g, b * P, (b + 1) * P);
    pens.push_back(square(add_scalar(l2_norm(gb), T(-1))));
  }
  Tensor<T> penalty = mean_all(stack_scalars(pens, {B}));

  Tensor<T> d_loss =
      add(mul_scalar(gap, static_cast<T>(w.adv_d)), penalty);
  Tensor<T> g_loss =
      mul_scalar(neg(mean_all(d_fake)), static_cast<T>(w.adv_g));
  return {d_loss, g_loss};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> adversarial_losses(
    const Model<T>& model, const Tensor<T>& real, const Tensor<T>& fake,
    const Tensor<T>& interpolates, int B, const LossWeights& w,
    bool update_power = false) {
  bool first = true;
  auto disc = [&](const Tensor<T>& cloud, int nb) {
    Tensor<T> out = model.discriminate(cloud, nb, first && update_power);
    first = false;
    return out;
  };
  return adversarial_losses<T>(disc, real, fake, interpolates, B, w);
}

}  // namespace ppd
