#pragma once

// Gate-Shift Module and the desk-scale backbone it plugs into.
//
// Dataflow of one GSM layer on a B×T×C×H×W feature map y:
//   gate_g   = tanh(conv3x3(y_g))            one plane per channel group g
//   gated    = gate ⊙ y,  residual = y − gated
//   output   = group_shift(gated) + residual
// Group 1 (first C/2 channels) shifts forward in time, group 2 backward.

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gsnaco/classifier.hpp"

namespace gsnaco {

inline constexpr std::size_t kGsmGroups = 2;

template <class T>
struct GsmLayer {
  std::size_t channels = 0;
  Conv2d<T> gate;  // groups=2, C → 2 planes, 3×3, zero-initialized

  GsmLayer() = default;
  explicit GsmLayer(std::size_t c) : channels(c) {
    if (c == 0 || c % kGsmGroups != 0) {
      throw std::invalid_argument("GsmLayer: channels must be a positive multiple of 2, got " + std::to_string(c));
    }
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    o.groups = kGsmGroups;
    gate = Conv2d<T>::zeros(c, kGsmGroups, 3, o);
  }

  std::size_t parameter_count() const { return gate.weight.numel() + gate.bias.numel(); }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    ps.add(prefix + ".gate_weight", gate.weight, true);
    ps.add(prefix + ".gate_bias", gate.bias, false);
  }
};

template <class T>
struct GatedSplit {
  BasicTensor<T> gated, residual;
};

/// Grouped spatial gating. gated + residual reproduces y bitwise: the residual
/// is rounded first and gated is recovered as y − residual, which is exact
/// because |gate| ≤ 1.
template <class T>
GatedSplit<T> spatial_gate(const BasicTensor<T>& y, const GsmLayer<T>& layer) {
  detail::require_rank(y, 5, "spatial_gate", "input");
  detail::require(y.size(2) == layer.channels, "spatial_gate: input has " + std::to_string(y.size(2)) +
                                                   " channels but the GSM layer expects " +
                                                   std::to_string(layer.channels));
  const std::size_t b = y.size(0);
  auto frames = merge_time(y);
  auto planes = tanh(layer.gate(frames));
  auto gate = repeat_channels(planes, layer.channels / kGsmGroups);
  auto residual = sub(frames, mul(gate, frames));
  auto gated = sub(frames, residual);
  return {split_time(gated, b), split_time(residual, b)};
}

template <class T>
BasicTensor<T> gsm_forward(const BasicTensor<T>& y, const GsmLayer<T>& layer) {
  auto split = spatial_gate(y, layer);
  return add(group_shift(split.gated), split.residual);
}

struct BlockSpec {
  std::size_t channels = 16;
  std::size_t stride = 1;
  bool operator==(const BlockSpec&) const = default;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 8;
  std::size_t stem_stride = 2;
  std::vector<BlockSpec> blocks{{8, 1}, {16, 2}, {16, 1}};
  bool use_gsm = true;
};

/// 3×3 conv → affine norm → relu → optional GSM, applied per frame except for
/// the GSM temporal mixing.
template <class T>
struct Block {
  Conv2d<T> conv;
  ChannelAffine<T> norm;
  std::optional<GsmLayer<T>> gsm;

  Block() = default;
  Block(std::size_t cin, BlockSpec spec, bool use_gsm, std::mt19937_64& rng) {
    if (spec.channels % kGsmGroups != 0) {
      throw std::invalid_argument("block channels must be even, got " + std::to_string(spec.channels));
    }
    Conv2dOptions o;
    o.stride_h = o.stride_w = spec.stride;
    o.pad_h = o.pad_w = 1;
    conv = Conv2d<T>(cin, spec.channels, 3, o, rng);
    norm = ChannelAffine<T>(spec.channels);
    if (use_gsm) gsm.emplace(spec.channels);
  }

  /// Copy with independent parameter storage.
  Block clone() const {
    Block c;
    c.conv.opt = conv.opt;
    c.conv.weight = clone_values(conv.weight);
    c.conv.bias = clone_values(conv.bias);
    c.norm.gain = clone_values(norm.gain);
    c.norm.shift = clone_values(norm.shift);
    if (gsm) {
      c.gsm.emplace(gsm->channels);
      c.gsm->gate.weight = clone_values(gsm->gate.weight);
      c.gsm->gate.bias = clone_values(gsm->gate.bias);
    }
    return c;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    const std::size_t b = x.size(0);
    auto y = split_time(relu(norm(conv(merge_time(x)))), b);
    return gsm ? gsm_forward(y, *gsm) : y;
  }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    conv.collect(prefix + ".conv", ps);
    norm.collect(prefix + ".norm", ps);
    if (gsm) gsm->collect(prefix + ".gsm", ps);
  }
};

/// Stem conv + relu followed by a stack of blocks. Input B×T×C×H×W.
template <class T>
struct Backbone {
  Conv2d<T> stem;
  std::vector<Block<T>> blocks;

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
    if (cfg.stem_channels == 0 || cfg.stem_channels % 2 != 0) {
      throw std::invalid_argument("stem channels must be even, got " + std::to_string(cfg.stem_channels));
    }
    if (cfg.blocks.empty()) throw std::invalid_argument("backbone needs at least one block");
    Conv2dOptions o;
    o.stride_h = o.stride_w = cfg.stem_stride;
    o.pad_h = o.pad_w = 1;
    stem = Conv2d<T>(cfg.in_channels, cfg.stem_channels, 3, o, rng);
    std::size_t cin = cfg.stem_channels;
    for (const auto& spec : cfg.blocks) {
      blocks.emplace_back(cin, spec, cfg.use_gsm, rng);
      cin = spec.channels;
    }
  }

  BasicTensor<T> run_stem(const BasicTensor<T>& x) const {
    detail::require_rank(x, 5, "backbone", "clip tensor");
    return split_time(relu(stem(merge_time(x))), x.size(0));
  }

  BasicTensor<T> run_blocks(BasicTensor<T> x, std::size_t begin, std::size_t end) const {
    for (std::size_t i = begin; i < end; ++i) x = blocks[i](x);
    return x;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return run_blocks(run_stem(x), 0, blocks.size()); }

  std::size_t out_channels() const { return blocks.back().conv.weight.size(0); }

  void collect(const std::string& prefix, ParameterSet<T>& ps, std::size_t block_count) const {
    stem.collect(prefix + ".stem", ps);
    for (std::size_t i = 0; i < block_count; ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), ps);
  }
};

inline std::size_t total_stride(const BackboneConfig& cfg) {
  std::size_t s = cfg.stem_stride;
  for (const auto& b : cfg.blocks) s *= b.stride;
  return s;
}

struct GsnConfig {
  BackboneConfig backbone;
  VocabSizes vocab{5, 3, 15};
  double dropout = 0.5;
  std::uint64_t seed = 0;
};

/// Gate-Shift Network: backbone with a GSM in every block, spatio-temporal
/// average pooling, multi-task classifier.
template <class T>
class GsnModel : public VideoModel<T> {
 public:
  explicit GsnModel(const GsnConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    backbone_ = Backbone<T>(cfg.backbone, rng);
    const std::size_t c = backbone_.out_channels();
    head_ = MultiTaskHead<T>(c, c, c, cfg.vocab, rng);
    backbone_.collect("backbone", this->params_, backbone_.blocks.size());
    head_.collect("classifier", this->params_);
  }

  Scores<T> forward(const BasicTensor<T>& clips, const ForwardContext& ctx) const override {
    auto feat = features(clips);
    auto pooled = avg_pool_spatial(avg_pool_temporal(feat));
    pooled = maybe_dropout(pooled, cfg_.dropout, ctx);
    return classify(head_, pooled, pooled, pooled);
  }

  Scores<T> forward_fully_conv(const BasicTensor<T>& clips) const override {
    auto feat = avg_pool_temporal(features(clips));  // B×C×h×w
    const std::size_t b = feat.size(0), c = feat.size(1), hw = feat.size(2) * feat.size(3);
    auto positions = reshape(channels_last(feat), Shape{b * hw, c});
    auto s = classify(head_, positions, positions, positions);
    auto collapse = [&](const BasicTensor<T>& m) {
      return avg_pool_temporal(reshape(m, Shape{b, hw, m.size(1)}));
    };
    return {collapse(s.verb), collapse(s.noun), collapse(s.action)};
  }

  BasicTensor<T> features(const BasicTensor<T>& clips) const { return backbone_(clips); }

  std::size_t min_input_side() const override { return total_stride(cfg_.backbone); }
  VocabSizes vocab() const override { return head_.vocab(); }
  std::string family() const override { return "gsn"; }

  const GsnConfig& config() const { return cfg_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const MultiTaskHead<T>& head() const { return head_; }

 private:
  GsnConfig cfg_;
  Backbone<T> backbone_;
  MultiTaskHead<T> head_;
};

/// Builds a GSN with deterministic initialization from cfg.seed. Gate kernels
/// start at zero, so a fresh network computes exactly what its GSM-free
/// backbone computes.
template <class T>
GsnModel<T> build_gsn(const GsnConfig& cfg) {
  return GsnModel<T>(cfg);
}

}  // namespace gsnaco
