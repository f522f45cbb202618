#pragma once

#include <array>
#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "maanet/image.hpp"
#include "maanet/nn.hpp"

namespace maanet {

// Head order everywhere: index 0 is malignancy, 1..6 the six attributes.
inline constexpr int kHeadCount = 7;
inline constexpr int kAttributeCount = 6;
inline constexpr std::array<const char*, kHeadCount> kHeadNames = {
    "malig", "calc", "shape", "ratio", "boundary", "margin", "echo"};

enum class MaligHeadMode { GapConcat, LogitConcat };

struct ModelConfig {
  int input_size = 64;                              // S, square grayscale input
  std::vector<int> stage_channels = {16, 32, 64, 128};
  int tap_stride = 16;                              // feature map is S/tap_stride square
  int stream_width = 64;
  bool attr_branch = true;
  bool attn_branch = true;
  std::array<bool, kAttributeCount> enabled_attributes = {true, true, true, true, true, true};
  MaligHeadMode malig_head = MaligHeadMode::GapConcat;

  int map_size() const { return input_size / tap_stride; }
  int feature_channels() const { return stage_channels.back(); }
  int enabled_attribute_count() const {
    int n = 0;
    for (bool b : enabled_attributes) n += b ? 1 : 0;
    return n;
  }

  void validate() const {
    if (input_size < 16) throw ConfigError("ModelConfig: input_size must be >= 16");
    if (tap_stride < 2 || (tap_stride & (tap_stride - 1)) != 0)
      throw ConfigError("ModelConfig: tap_stride must be a power of two >= 2");
    if (input_size % tap_stride != 0)
      throw ConfigError("ModelConfig: input_size " + std::to_string(input_size) +
                        " not divisible by tap_stride " + std::to_string(tap_stride));
    if (stage_channels.empty()) throw ConfigError("ModelConfig: stage_channels empty");
    for (int c : stage_channels)
      if (c <= 0) throw ConfigError("ModelConfig: stage channels must be positive");
    int downs = 0;
    for (int s = tap_stride; s > 1; s /= 2) ++downs;
    if (static_cast<int>(stage_channels.size()) < downs - 1)
      throw ConfigError("ModelConfig: need at least " + std::to_string(downs - 1) +
                        " stages for tap_stride " + std::to_string(tap_stride));
    if (stream_width <= 0) throw ConfigError("ModelConfig: stream_width must be positive");
    if (attn_branch && !attr_branch)
      throw ConfigError("ModelConfig: attention branch requires the attribute branch");
    if (attr_branch && enabled_attribute_count() == 0)
      throw ConfigError("ModelConfig: attribute branch enabled but no attributes selected");
  }

  // Stable textual form; its FNV hash is the checkpoint compatibility digest.
  std::string canonical() const {
    std::string s = "input_size=" + std::to_string(input_size) + ";stages=";
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(stage_channels[i]);
    }
    s += ";tap=" + std::to_string(tap_stride);
    s += ";stream=" + std::to_string(stream_width);
    s += ";attr=" + std::to_string(attr_branch ? 1 : 0);
    s += ";attn=" + std::to_string(attn_branch ? 1 : 0);
    s += ";enabled=";
    for (bool b : enabled_attributes) s += b ? '1' : '0';
    s += ";malig_head=";
    s += (malig_head == MaligHeadMode::GapConcat ? "gap" : "logit");
    return s;
  }
  std::uint64_t digest() const { return fnv1a64(canonical()); }
};

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> attr_logits;                        // N x 7, zeros in inactive columns
  Tensor<Scalar> attn_logits;                        // N x 7 (invalid when no attention branch)
  Tensor<Scalar> maps;                               // N x 7 x h x w post-sigmoid (invalid w/o attention)
  Tensor<Scalar> backbone_features;                  // N x C x h x w
  std::array<Tensor<Scalar>, kHeadCount> head_logits;        // per-head N x 1
  std::array<Tensor<Scalar>, kAttributeCount> stream_inputs;   // filtered features per stream
  std::array<Tensor<Scalar>, kAttributeCount> stream_features; // GAP vectors per stream
  std::array<bool, kHeadCount> active_heads{};
  int map_size = 0;
};

struct ForwardOptions {
  bool training = false;
  // Test hooks for the attention-identity invariant.
  bool force_ones_attention = false;   // multiply streams by exact ones
  bool bypass_attention = false;       // feed streams the unfiltered features
};

// The full network: shared backbone, 7-map attention branch, six
// attention-filtered attribute streams, a malignancy head over the
// concatenated stream descriptors, and the auxiliary attention head
// (GAP over the pre-sigmoid map channels).
template <typename Scalar>
class MaaNet {
 public:
  explicit MaaNet(const ModelConfig& config) : config_(config) {
    config_.validate();
    build();
  }

  const ModelConfig& config() const { return config_; }
  ParamRegistry<Scalar>& registry() { return registry_; }
  const ParamRegistry<Scalar>& registry() const { return registry_; }
  std::vector<Tensor<Scalar>> parameters() const { return registry_.parameters(); }

  void init(const InitPolicy& policy) { init_params(registry_, policy); }

  void train() { training_ = true; }
  void eval() { training_ = false; }
  bool is_training() const { return training_; }

  std::uint64_t parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : registry_.entries()) {
      h = hash_combine(h, fnv1a64(e.name));
      const auto& v = e.tensor.values();
      for (std::int64_t i = 0; i < v.size(); ++i) {
        std::uint64_t bits = 0;
        const double d = static_cast<double>(v[i]);
        static_assert(sizeof(double) == 8);
        std::memcpy(&bits, &d, 8);
        h = hash_combine(h, bits);
      }
    }
    return h;
  }

  ModelOutput<Scalar> forward(const Tensor<Scalar>& batch, ForwardOptions opts = {}) {
    opts.training = opts.training || training_;
    if (batch.shape().rank != 4 || batch.shape()[1] != 1 ||
        batch.shape()[2] != config_.input_size || batch.shape()[3] != config_.input_size)
      throw ShapeError("MaaNet::forward: expected Nx1x" + std::to_string(config_.input_size) +
                       "x" + std::to_string(config_.input_size) + ", got " + batch.shape().str());
    if (!range_warned_ &&
        (batch.values().minCoeff() < Scalar(0) || batch.values().maxCoeff() > Scalar(1))) {
      std::cerr << "maanet: warning: input values outside [0,1]\n";
      range_warned_ = true;
    }

    const bool training = opts.training;
    const int N = batch.shape()[0];

    // Backbone.
    Tensor<Scalar> f = relu(stem_bn_(stem_(batch), training));
    for (const auto& stage : stages_) f = stage(f, training);

    ModelOutput<Scalar> out;
    out.backbone_features = f;
    out.map_size = config_.map_size();

    // Attention branch: 3x3 conv + BN + ReLU, 1x1 conv to 7 channels,
    // sigmoid for the maps, GAP over pre-sigmoid channels for the
    // auxiliary logits.
    Tensor<Scalar> maps;
    if (config_.attn_branch) {
      Tensor<Scalar> a = relu(attn_bn_(attn_conv3_(f), training));
      Tensor<Scalar> pre = attn_conv1_(a);
      maps = sigmoid(pre);
      out.maps = maps;
      out.attn_logits = global_avg_pool(pre);
    }

    std::array<Tensor<Scalar>, kHeadCount> heads;
    std::vector<Tensor<Scalar>> descriptors;
    if (config_.attr_branch) {
      for (int a = 0; a < kAttributeCount; ++a) {
        if (!config_.enabled_attributes[size_t(a)]) continue;
        Tensor<Scalar> fin = f;
        if (config_.attn_branch && !opts.bypass_attention) {
          Tensor<Scalar> m = opts.force_ones_attention
                                 ? Tensor<Scalar>::constant(
                                       {N, 1, out.map_size, out.map_size}, Scalar(1))
                                 : channel_slice(maps, 1 + a);
          fin = mul(f, m);
        }
        out.stream_inputs[size_t(a)] = fin;
        const auto& st = streams_[size_t(a)];
        Tensor<Scalar> h = st.block1(fin, training);
        h = st.block2(h, training);
        h = st.block3(h, training);
        Tensor<Scalar> feat = global_avg_pool(h);
        out.stream_features[size_t(a)] = feat;
        heads[size_t(1 + a)] = st.fc(feat);
        descriptors.push_back(config_.malig_head == MaligHeadMode::GapConcat
                                  ? feat
                                  : heads[size_t(1 + a)]);
        out.active_heads[size_t(1 + a)] = true;
      }
      heads[0] = malig_fc_(concat(descriptors));
    } else {
      heads[0] = malig_fc_(global_avg_pool(f));
    }
    out.active_heads[0] = true;

    std::vector<Tensor<Scalar>> columns;
    for (int hidx = 0; hidx < kHeadCount; ++hidx) {
      if (!heads[size_t(hidx)].valid())
        heads[size_t(hidx)] = Tensor<Scalar>::zeros({N, 1});
      columns.push_back(heads[size_t(hidx)]);
    }
    out.head_logits = heads;
    out.attr_logits = concat(columns);
    return out;
  }

 private:
  struct Stream {
    ResidualBlock<Scalar> block1, block2, block3;
    Linear<Scalar> fc;
  };

  void build() {
    // Stem downsamples once; of the remaining stages the last
    // log2(tap_stride) - 1 use stride 2, earlier ones stride 1, so the tap
    // point sits exactly at the configured stride.
    int downs = 0;
    for (int s = config_.tap_stride; s > 1; s /= 2) ++downs;
    const int n_stages = static_cast<int>(config_.stage_channels.size());
    const int stride2_stages = downs - 1;

    stem_ = ConvBlock<Scalar>(registry_, "backbone.stem", 1, config_.stage_channels[0], 3, 2,
                              /*with_bias=*/false);
    stem_bn_ = BatchNorm<Scalar>(registry_, "backbone.stem_bn", config_.stage_channels[0]);
    int in_ch = config_.stage_channels[0];
    for (int i = 0; i < n_stages; ++i) {
      const int out_ch = config_.stage_channels[size_t(i)];
      const int stride = (i >= n_stages - stride2_stages) ? 2 : 1;
      stages_.emplace_back(registry_, "backbone.stage" + std::to_string(i + 1), in_ch, out_ch,
                           stride);
      in_ch = out_ch;
    }

    const int feat_ch = config_.feature_channels();
    if (config_.attn_branch) {
      attn_conv3_ = ConvBlock<Scalar>(registry_, "attention.conv3", feat_ch, feat_ch, 3, 1,
                                      /*with_bias=*/false);
      attn_bn_ = BatchNorm<Scalar>(registry_, "attention.bn", feat_ch);
      attn_conv1_ = ConvBlock<Scalar>(registry_, "attention.conv1", feat_ch, kHeadCount, 1, 1);
    }

    if (config_.attr_branch) {
      const int w = config_.stream_width;
      for (int a = 0; a < kAttributeCount; ++a) {
        if (!config_.enabled_attributes[size_t(a)]) {
          streams_.push_back({});
          continue;
        }
        const std::string p = std::string("stream.") + kHeadNames[size_t(1 + a)];
        Stream st;
        st.block1 = ResidualBlock<Scalar>(registry_, p + ".block1", feat_ch, w, 2);
        st.block2 = ResidualBlock<Scalar>(registry_, p + ".block2", w, w, 1);
        st.block3 = ResidualBlock<Scalar>(registry_, p + ".block3", w, w, 1);
        st.fc = Linear<Scalar>(registry_, p + ".fc", w, 1);
        streams_.push_back(st);
      }
      const int malig_in = config_.malig_head == MaligHeadMode::GapConcat
                               ? config_.enabled_attribute_count() * w
                               : config_.enabled_attribute_count();
      malig_fc_ = Linear<Scalar>(registry_, "head.malig", malig_in, 1);
    } else {
      malig_fc_ = Linear<Scalar>(registry_, "head.malig", feat_ch, 1);
    }
  }

  ModelConfig config_;
  ParamRegistry<Scalar> registry_;
  ConvBlock<Scalar> stem_;
  BatchNorm<Scalar> stem_bn_;
  std::vector<ResidualBlock<Scalar>> stages_;
  ConvBlock<Scalar> attn_conv3_, attn_conv1_;
  BatchNorm<Scalar> attn_bn_;
  std::vector<Stream> streams_;
  Linear<Scalar> malig_fc_;
  bool training_ = true;
  bool range_warned_ = false;
};

// Per-head probability p = 1 / (1 + exp(-logit)), computed off-graph.
template <typename Scalar>
std::vector<std::array<double, kHeadCount>> predict_probs(const ModelOutput<Scalar>& out) {
  const int N = out.attr_logits.shape()[0];
  std::vector<std::array<double, kHeadCount>> probs(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < kHeadCount; ++c) {
      const double x = static_cast<double>(out.attr_logits.at(n, c));
      probs[size_t(n)][size_t(c)] = 0.5 + 0.5 * std::tanh(0.5 * x);
    }
  return probs;
}

// The localization map (head 0 / spatial-constraint channel) upsampled
// bilinearly to target_size, one image per batch row, values in [0,1].
template <typename Scalar>
std::vector<ImageF> localization_map(const ModelOutput<Scalar>& out, int target_size) {
  if (!out.maps.valid())
    throw ContractError("localization_map: model output has no attention maps");
  if (target_size < out.map_size)
    throw ContractError("localization_map: target smaller than the map");
  const int N = out.maps.shape()[0];
  std::vector<ImageF> result;
  result.reserve(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    ImageF m(out.map_size, out.map_size);
    for (int y = 0; y < out.map_size; ++y)
      for (int x = 0; x < out.map_size; ++x)
        m.at(y, x) = static_cast<float>(out.maps.at(n, 0, y, x));
    result.push_back(target_size == out.map_size ? m
                                                 : resize_bilinear(m, target_size, target_size));
  }
  return result;
}

}  // namespace maanet
