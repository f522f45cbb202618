#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "maanet/ops.hpp"

namespace maanet {

enum class ParamKind { ConvWeight, ConvBias, FcWeight, FcBias, BnGamma, BnBeta };

template <typename Scalar>
struct ParamEntry {
  std::string name;
  Tensor<Scalar> tensor;
  ParamKind kind = ParamKind::ConvWeight;
  int fan_in = 0;
  bool is_buffer = false;  // BN running stats; saved but never optimized
};

// Flat, insertion-ordered registry of named parameters and buffers. The
// registration order is the canonical order for init, SGD state and
// checkpoints, so it must be deterministic for a given config.
template <typename Scalar>
class ParamRegistry {
 public:
  Tensor<Scalar> add_param(const std::string& name, const Shape& shape, ParamKind kind,
                           int fan_in) {
    Tensor<Scalar> t = Tensor<Scalar>::zeros(shape, /*requires_grad=*/true);
    entries_.push_back({name, t, kind, fan_in, false});
    return t;
  }
  Tensor<Scalar> add_buffer(const std::string& name, const Shape& shape, Scalar fill) {
    Tensor<Scalar> t = Tensor<Scalar>::constant(shape, fill);
    entries_.push_back({name, t, ParamKind::BnGamma, 0, true});
    return t;
  }

  const std::vector<ParamEntry<Scalar>>& entries() const { return entries_; }
  std::vector<Tensor<Scalar>> parameters() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& e : entries_)
      if (!e.is_buffer) out.push_back(e.tensor);
    return out;
  }
  const ParamEntry<Scalar>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

 private:
  std::vector<ParamEntry<Scalar>> entries_;
};

// Conv He-normal (std = sqrt(2 / fan_in)), FC uniform +-sqrt(1/fan_in),
// BN gamma=1 beta=0, conv bias zero. Every parameter draws from its own
// substream keyed by (seed, name), so shared submodules initialize
// identically across model variants.
struct InitPolicy {
  std::uint64_t seed = 0;
};

template <typename Scalar>
void init_params(ParamRegistry<Scalar>& reg, const InitPolicy& policy) {
  for (auto& e : reg.entries()) {
    if (e.is_buffer) continue;
    RngStream rng = substream(policy.seed, e.name);
    auto& v = const_cast<Tensor<Scalar>&>(e.tensor).values();
    switch (e.kind) {
      case ParamKind::ConvWeight: {
        const double std = std::sqrt(2.0 / static_cast<double>(e.fan_in));
        for (std::int64_t i = 0; i < v.size(); ++i)
          v[i] = static_cast<Scalar>(rng.normal() * std);
        break;
      }
      case ParamKind::ConvBias:
        v.setZero();
        break;
      case ParamKind::FcWeight:
      case ParamKind::FcBias: {
        const double bound = std::sqrt(1.0 / static_cast<double>(e.fan_in));
        for (std::int64_t i = 0; i < v.size(); ++i)
          v[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::BnGamma:
        v.setConstant(Scalar(1));
        break;
      case ParamKind::BnBeta:
        v.setZero();
        break;
    }
    const_cast<Tensor<Scalar>&>(e.tensor).zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Blocks. Construction registers parameters under a name prefix; forward is
// a pure function of the registered tensors plus the train/eval flag.
// ---------------------------------------------------------------------------

// Convolutions feeding a BatchNorm carry no bias (the normalization would
// cancel it exactly, leaving a parameter with identically zero gradient).
template <typename Scalar>
struct ConvBlock {
  Tensor<Scalar> weight, bias;
  int stride = 1, padding = 0, ksize = 3;

  ConvBlock() = default;
  ConvBlock(ParamRegistry<Scalar>& reg, const std::string& prefix, int in_ch, int out_ch, int k,
            int stride_in, bool with_bias = true)
      : stride(stride_in), padding((k - 1) / 2), ksize(k) {
    if (k != 1 && k != 3) throw ConfigError("ConvBlock: kernel size must be 1 or 3");
    weight = reg.add_param(prefix + ".weight", {out_ch, in_ch, k, k}, ParamKind::ConvWeight,
                           in_ch * k * k);
    if (with_bias)
      bias = reg.add_param(prefix + ".bias", {out_ch}, ParamKind::ConvBias, out_ch);
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
};

template <typename Scalar>
struct BatchNorm {
  Tensor<Scalar> gamma, beta;
  Tensor<Scalar> running_mean, running_var;
  Scalar epsilon = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  BatchNorm() = default;
  BatchNorm(ParamRegistry<Scalar>& reg, const std::string& prefix, int channels) {
    gamma = reg.add_param(prefix + ".gamma", {channels}, ParamKind::BnGamma, channels);
    beta = reg.add_param(prefix + ".beta", {channels}, ParamKind::BnBeta, channels);
    running_mean = reg.add_buffer(prefix + ".running_mean", {channels}, Scalar(0));
    running_var = reg.add_buffer(prefix + ".running_var", {channels}, Scalar(1));
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training) const {
    auto rm = running_mean;
    auto rv = running_var;
    return batch_norm(x, gamma, beta, rm, rv, training, momentum, epsilon);
  }
};

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight, bias;  // weight: out x in

  Linear() = default;
  Linear(ParamRegistry<Scalar>& reg, const std::string& prefix, int in_f, int out_f) {
    weight = reg.add_param(prefix + ".weight", {out_f, in_f}, ParamKind::FcWeight, in_f);
    bias = reg.add_param(prefix + ".bias", {out_f}, ParamKind::FcBias, in_f);
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return affine(x, weight, bias); }
};

// Two 3x3 conv+BN with ReLU between, identity (or 1x1 conv+BN projection)
// skip, ReLU after the addition. Output spatial dims equal the input at
// stride 1 and halve (floor) at stride 2.
template <typename Scalar>
struct ResidualBlock {
  ConvBlock<Scalar> conv1, conv2;
  BatchNorm<Scalar> bn1, bn2;
  bool projected = false;
  ConvBlock<Scalar> conv_skip;
  BatchNorm<Scalar> bn_skip;
  int in_channels = 0, out_channels = 0, stride = 1;

  ResidualBlock() = default;
  ResidualBlock(ParamRegistry<Scalar>& reg, const std::string& prefix, int in_ch, int out_ch,
                int stride_in)
      : in_channels(in_ch), out_channels(out_ch), stride(stride_in) {
    conv1 = ConvBlock<Scalar>(reg, prefix + ".conv1", in_ch, out_ch, 3, stride, false);
    bn1 = BatchNorm<Scalar>(reg, prefix + ".bn1", out_ch);
    conv2 = ConvBlock<Scalar>(reg, prefix + ".conv2", out_ch, out_ch, 3, 1, false);
    bn2 = BatchNorm<Scalar>(reg, prefix + ".bn2", out_ch);
    projected = (stride != 1) || (in_ch != out_ch);
    if (projected) {
      conv_skip = ConvBlock<Scalar>(reg, prefix + ".skip", in_ch, out_ch, 1, stride, false);
      bn_skip = BatchNorm<Scalar>(reg, prefix + ".skip_bn", out_ch);
    }
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training) const {
    if (x.shape().rank != 4 || x.shape()[1] != in_channels)
      throw ShapeError("ResidualBlock: input dims " + x.shape().str() + " vs expected channels " +
                       std::to_string(in_channels));
    Tensor<Scalar> h = relu(bn1(conv1(x), training));
    h = bn2(conv2(h), training);
    Tensor<Scalar> skip = projected ? bn_skip(conv_skip(x), training) : x;
    return relu(add(h, skip));
  }
};

}  // namespace maanet
