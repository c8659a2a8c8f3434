#pragma once

#include <stdexcept>

#include "medk2n/core/tape.hpp"
#include "medk2n/data/types.hpp"
#include "medk2n/eval/metrics.hpp"

namespace medk2n::train {

// Weights of the four loss terms: L1, SSIM, causal (contrastive), metric.
struct LossWeights {
  double l1 = 1.0;
  double ssim = 1.0;
  double causal = 0.1;
  double metric = 0.1;

  void validate() const {
    if (l1 < 0 || ssim < 0 || causal < 0 || metric < 0)
      throw data::ContractError("loss weights must be nonnegative");
    if (l1 == 0 && ssim == 0 && causal == 0 && metric == 0)
      throw data::ContractError("at least one loss weight must be positive");
  }
};

template <class T>
typename Tape<T>::Var l1_loss(Tape<T>& tape, typename Tape<T>::Var pred,
                              typename Tape<T>::Var gt) {
  return tape.mean(tape.abs_(tape.sub(pred, gt)));
}

// Differentiable SSIM on the tape: Gaussian-windowed moments via fixed
// depthwise convolution (zero padding; the un-renormalized border windows
// keep the variance estimates nonnegative).
template <class T>
typename Tape<T>::Var ssim_tape(Tape<T>& tape, typename Tape<T>::Var pred,
                                typename Tape<T>::Var gt, int win = 11,
                                double sigma = 1.5) {
  const T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  auto kd = eval::gaussian_window(win, sigma);
  Tensor<T> kernel({win, win});
  for (std::size_t i = 0; i < kd.size(); ++i) kernel.x[i] = static_cast<T>(kd[i]);
  auto mu_x = tape.conv2d_fixed(pred, kernel);
  auto mu_y = tape.conv2d_fixed(gt, kernel);
  auto sxx = tape.conv2d_fixed(tape.mul(pred, pred), kernel);
  auto syy = tape.conv2d_fixed(tape.mul(gt, gt), kernel);
  auto sxy = tape.conv2d_fixed(tape.mul(pred, gt), kernel);
  auto mxy = tape.mul(mu_x, mu_y);
  auto vx = tape.sub(sxx, tape.mul(mu_x, mu_x));
  auto vy = tape.sub(syy, tape.mul(mu_y, mu_y));
  auto cov = tape.sub(sxy, mxy);
  auto num = tape.mul(tape.add_const(tape.scale(mxy, T(2)), c1),
                      tape.add_const(tape.scale(cov, T(2)), c2));
  auto den = tape.mul(
      tape.add_const(tape.add(tape.mul(mu_x, mu_x), tape.mul(mu_y, mu_y)), c1),
      tape.add_const(tape.add(vx, vy), c2));
  return tape.mean(tape.div(num, den));
}

// L_total = l1*L_L1 + ssim*(1 - SSIM) + causal*L_causal + metric*L_metric.
// The causal and metric scalars are computed by the identity module and may
// be absent (pass invalid vars) when their weights are zero.
template <class T>
typename Tape<T>::Var total_loss(Tape<T>& tape, typename Tape<T>::Var pred,
                                 typename Tape<T>::Var gt, typename Tape<T>::Var causal,
                                 typename Tape<T>::Var metric, const LossWeights& lw) {
  lw.validate();
  auto total = tape.constant_scalar(T(0));
  if (lw.l1 > 0)
    total = tape.add(total, tape.scale(l1_loss(tape, pred, gt), T(lw.l1)));
  if (lw.ssim > 0) {
    auto s = ssim_tape(tape, pred, gt);
    total = tape.add(total, tape.scale(tape.add_const(tape.neg(s), T(1)), T(lw.ssim)));
  }
  if (lw.causal > 0 && causal.valid())
    total = tape.add(total, tape.scale(causal, T(lw.causal)));
  if (lw.metric > 0 && metric.valid())
    total = tape.add(total, tape.scale(metric, T(lw.metric)));
  return total;
}

}  // namespace medk2n::train
