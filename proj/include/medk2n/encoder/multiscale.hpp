#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "medk2n/core/param_ctx.hpp"
#include "medk2n/data/types.hpp"
#include "medk2n/encoder/fermat.hpp"

namespace medk2n::enc {

// Toy multi-scale encoder: a bottom-up conv pyramid (strides 4/8/16) whose
// features are serialized along the Fermat scan order at each scale and
// mixed by a bidirectional gated linear scan
//   h_t = a ⊙ h_{t-1} + (1-a) ⊙ x_t
// (forward over the order, backward over the reversed order, averaged),
// then a pointwise projection with a residual connection.
struct EncoderConfig {
  int embed_dim = 64;
  bool bidirectional = true;  // forward-only when false (for the bias probe)
};

template <class T>
struct FeatureMapVars {
  std::vector<typename Tape<T>::Var> scales;  // ordered coarse to fine; back() is stride 4

  typename Tape<T>::Var finest() const { return scales.back(); }
};

template <class T>
typename Tape<T>::Var scan_mix(ParamCtx<T>& ctx, typename Tape<T>::Var x,
                               const std::string& prefix, const ScanOrder& order,
                               bool bidirectional) {
  int ch = ctx.tape.val(x).dim(0);
  auto decay_f = ctx.get_zero(prefix + ".decay_f", {ch});
  auto fwd = ctx.tape.gated_scan(x, decay_f, order.permutation, false);
  typename Tape<T>::Var mixed;
  if (bidirectional) {
    auto decay_b = ctx.get_zero(prefix + ".decay_b", {ch});
    auto bwd = ctx.tape.gated_scan(x, decay_b, order.permutation, true);
    mixed = ctx.tape.scale(ctx.tape.add(fwd, bwd), T(0.5));
  } else {
    mixed = fwd;
  }
  auto w = ctx.get(prefix + ".proj_w", {ch, ch, 1, 1}, ch);
  auto b = ctx.get_zero(prefix + ".proj_b", {ch});
  return ctx.tape.add(x, ctx.tape.conv2d(mixed, w, b, 1, 0));
}

template <class T>
typename Tape<T>::Var image_var(Tape<T>& tape, const data::Image2D& img) {
  Tensor<T> t({1, img.h, img.w});
  for (std::size_t i = 0; i < img.px.size(); ++i) t.x[i] = static_cast<T>(img.px[i]);
  return tape.constant(std::move(t));
}

// Three-scale pyramid at strides 4/8/16 with channel dim D everywhere.
template <class T>
FeatureMapVars<T> encode(ParamCtx<T>& ctx, typename Tape<T>::Var image,
                         const EncoderConfig& cfg) {
  auto& tape = ctx.tape;
  const auto& shape = tape.val(image).shape;
  if (shape.size() != 3 || shape[0] != 1)
    throw std::invalid_argument("encode: expected (1,H,W) image");
  if (shape[1] < 16 || shape[2] < 16)
    throw data::ContractError("encode: image smaller than the coarsest stride (16)");
  int d = cfg.embed_dim;
  auto conv = [&](typename Tape<T>::Var x, const std::string& name, int ic, int oc,
                  int stride) {
    auto w = ctx.get("enc." + name + ".w", {oc, ic, 3, 3}, ic * 9);
    auto b = ctx.get_zero("enc." + name + ".b", {oc});
    return tape.tanh_(tape.conv2d(x, w, b, stride, 1));
  };
  FeatureMapVars<T> out;
  auto s2 = conv(image, "stem0", 1, d, 2);
  auto s4 = conv(s2, "stem1", d, d, 2);
  auto f0 = scan_mix(ctx, s4, "enc.mix0", cached_scan_order(tape.val(s4).dim(1), tape.val(s4).dim(2)),
                     cfg.bidirectional);
  auto s8 = conv(f0, "down1", d, d, 2);
  auto f1 = scan_mix(ctx, s8, "enc.mix1", cached_scan_order(tape.val(s8).dim(1), tape.val(s8).dim(2)),
                     cfg.bidirectional);
  auto s16 = conv(f1, "down2", d, d, 2);
  auto f2 = scan_mix(ctx, s16, "enc.mix2",
                     cached_scan_order(tape.val(s16).dim(1), tape.val(s16).dim(2)),
                     cfg.bidirectional);
  out.scales = {f2, f1, f0};
  return out;
}

}  // namespace medk2n::enc
