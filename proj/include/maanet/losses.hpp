#pragma once

#include <array>

#include "maanet/model.hpp"
#include "maanet/ops.hpp"

namespace maanet {

struct LossWeights {
  double attr = 1.0;
  double attn = 0.5;
  double spatial = 0.5;
};

struct LossReport {
  double l_attr = 0.0;
  double l_attn = 0.0;
  double l_spatial = 0.0;
  double total = 0.0;
  bool attr_on = false, attn_on = false, spatial_on = false;
};

namespace detail {
// Mean stable-logit BCE over batch and active heads.
template <typename Scalar>
Tensor<Scalar> masked_bce(const char* op, const Tensor<Scalar>& logits,
                          const Tensor<Scalar>& labels,
                          const std::array<bool, kHeadCount>& active) {
  require<Scalar>(logits.shape().rank == 2 && logits.shape()[1] == kHeadCount, op,
                  "logits must be N x 7, got " + logits.shape().str());
  require_same_shape(op, logits, labels);
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    const Scalar l = labels.values()[i];
    if (l != Scalar(0) && l != Scalar(1))
      throw ContractError(std::string(op) + ": labels must be binary");
  }
  int n_active = 0;
  for (bool b : active) n_active += b ? 1 : 0;
  if (n_active == 0) throw ContractError(std::string(op) + ": no active heads");

  const int N = logits.shape()[0];
  Tensor<Scalar> mask = Tensor<Scalar>::uninit({N, kHeadCount});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < kHeadCount; ++c)
      mask.at(n, c) = active[size_t(c)] ? Scalar(1) : Scalar(0);

  Tensor<Scalar> ew = bce_logits(logits, labels);
  Tensor<Scalar> masked = mul(ew, mask);
  return scale(sum_all(masked), Scalar(1) / static_cast<Scalar>(N * n_active));
}
}  // namespace detail

inline constexpr std::array<bool, kHeadCount> kAllHeads = {true, true, true, true,
                                                           true, true, true};

// Attribute-head BCE over the 7 heads (or the active subset under ablation).
template <typename Scalar>
Tensor<Scalar> attr_loss(const Tensor<Scalar>& attr_logits, const Tensor<Scalar>& labels,
                         const std::array<bool, kHeadCount>& active = kAllHeads) {
  return detail::masked_bce("attr_loss", attr_logits, labels, active);
}

// Same form on the auxiliary attention logits.
template <typename Scalar>
Tensor<Scalar> attn_loss(const Tensor<Scalar>& attn_logits, const Tensor<Scalar>& labels,
                         const std::array<bool, kHeadCount>& active = kAllHeads) {
  return detail::masked_bce("attn_loss", attn_logits, labels, active);
}

// Soft Dice between the localization map and the downsampled mask,
// per sample, averaged over the batch. Epsilon guards empty masks.
template <typename Scalar>
Tensor<Scalar> spatial_loss(const Tensor<Scalar>& map, const Tensor<Scalar>& mask,
                            Scalar epsilon = Scalar(1e-6)) {
  detail::require<Scalar>(map.valid() && map.shape().rank == 4 && map.shape()[1] == 1,
                          "spatial_loss", "map must be N x 1 x h x w");
  detail::require_same_shape("spatial_loss", map, mask);
  const Scalar hw = static_cast<Scalar>(map.shape()[2]) * static_cast<Scalar>(map.shape()[3]);
  // Per-sample sums via GAP (mean * pixel count).
  Tensor<Scalar> inter = scale(global_avg_pool(mul(map, mask)), hw);  // N x 1
  Tensor<Scalar> sums = scale(add(global_avg_pool(map), global_avg_pool(mask)), hw);
  Tensor<Scalar> num = add_scalar(scale(inter, Scalar(2)), epsilon);
  Tensor<Scalar> den = add_scalar(sums, epsilon);
  Tensor<Scalar> dice = add_scalar(scale(div(num, den), Scalar(-1)), Scalar(1));
  return mean_all(dice);
}

// Weighted combination; disabled terms contribute no value and no
// gradient.
template <typename Scalar>
Tensor<Scalar> combine(const Tensor<Scalar>& l_attr, const Tensor<Scalar>& l_attn,
                       const Tensor<Scalar>& l_spatial, const LossWeights& weights) {
  Tensor<Scalar> total;
  auto accumulate = [&total](const Tensor<Scalar>& term, double w) {
    if (!term.valid()) return;
    Tensor<Scalar> weighted = scale(term, static_cast<Scalar>(w));
    total = total.valid() ? add(total, weighted) : weighted;
  };
  accumulate(l_attr, weights.attr);
  accumulate(l_attn, weights.attn);
  accumulate(l_spatial, weights.spatial);
  if (!total.valid()) throw ConfigError("combine: all loss terms disabled");
  return total;
}

}  // namespace maanet
