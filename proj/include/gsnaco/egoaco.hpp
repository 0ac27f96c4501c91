#pragma once

// EgoACO: three clip descriptors computed from three cloned backbone heads.
//   d_act  LSTA aggregation of the action head's feature sequence
//   d_ctx  per-frame spatial attention, temporal average
//   d_obj  temporally coherent spatial attention, temporal average
// d_act drives verbs, d_obj nouns, and their concatenation with d_ctx drives
// actions.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "gsnaco/gsm.hpp"
#include "gsnaco/lsta.hpp"

namespace gsnaco {

namespace detail {

// Σ_hw a ⊙ x for a (B×1×H×W) map and (B×C×H×W) features → B×C.
template <class T>
BasicTensor<T> attention_pool(const BasicTensor<T>& a, const BasicTensor<T>& x) {
  return sum_spatial(mul(repeat_channels(a, x.size(1)), x));
}

template <class T>
void require_sequence(const BasicTensor<T>& x, const Conv2d<T>& att, const char* op) {
  require_rank(x, 5, op, "sequence");
  require(x.size(1) >= 1, std::string(op) + ": empty sequence");
  require(x.size(2) == att.weight.size(1), std::string(op) + ": sequence has " + std::to_string(x.size(2)) +
                                               " channels, attention expects " +
                                               std::to_string(att.weight.size(1)));
}

}  // namespace detail

/// Scene-context descriptor, B×C_f.
template <class T>
BasicTensor<T> encode_context(const BasicTensor<T>& seq, const Conv2d<T>& att) {
  detail::require_sequence(seq, att, "encode_context");
  const std::size_t b = seq.size(0), t = seq.size(1);
  auto frames = merge_time(seq);
  auto a = softmax_spatial(att(frames));
  auto pooled = detail::attention_pool(a, frames);  // (B·T)×C
  return avg_pool_temporal(reshape(pooled, Shape{b, t, seq.size(2)}));
}

/// Attention maps of the object path, one B×1×H×W map per frame. The logits
/// at t > 1 average the current log-attention with the log of the running
/// mean of earlier maps, so a repeated frame reproduces its own map.
template <class T>
std::vector<BasicTensor<T>> object_attention(const BasicTensor<T>& seq, const Conv2d<T>& att) {
  detail::require_sequence(seq, att, "encode_object");
  constexpr T kEps = T(1e-12);
  std::vector<BasicTensor<T>> maps;
  BasicTensor<T> history;  // running sum of earlier maps
  for (std::size_t t = 0; t < seq.size(1); ++t) {
    auto current = softmax_spatial(att(select1(seq, t)));
    if (t == 0) {
      maps.push_back(current);
      history = current;
      continue;
    }
    auto running_mean = scale(history, T(1) / static_cast<T>(t));
    auto logits = scale(add(log_eps(current, kEps), log_eps(running_mean, kEps)), T(0.5));
    auto a = softmax_spatial(logits);
    maps.push_back(a);
    history = add(history, a);
  }
  return maps;
}

/// Active-object descriptor, B×C_f.
template <class T>
BasicTensor<T> encode_object(const BasicTensor<T>& seq, const Conv2d<T>& att) {
  auto maps = object_attention(seq, att);
  std::vector<BasicTensor<T>> pooled;
  for (std::size_t t = 0; t < maps.size(); ++t) pooled.push_back(detail::attention_pool(maps[t], select1(seq, t)));
  return avg_pool_temporal(stack1(pooled));
}

template <class T>
struct DescriptorSet {
  BasicTensor<T> act, ctx, obj;
};

template <class T>
Scores<T> classify(const MultiTaskHead<T>& head, const DescriptorSet<T>& d) {
  return classify(head, concat1<T>({d.act, d.ctx, d.obj}), d.act, d.obj);
}

struct EgoAcoConfig {
  BackboneConfig backbone{3, 8, 2, {{8, 1}, {16, 2}, {16, 1}}, false};
  std::size_t memory_size = 16;
  std::size_t pooling_classes = 8;
  double attention_recurrence = 1.0;
  VocabSizes vocab{5, 3, 15};
  double dropout = 0.5;
  std::uint64_t seed = 0;
};

/// Backbone trunk (stem + all blocks but the last), three clones of the last
/// block as heads, LSTA on the action head, attention pooling on the other
/// two, multi-task classifier.
template <class T>
class EgoAcoModel : public VideoModel<T> {
 public:
  static constexpr std::array<const char*, 3> kHeadNames{"act", "ctx", "obj"};

  explicit EgoAcoModel(const EgoAcoConfig& cfg) : cfg_(cfg) {
    if (cfg.backbone.blocks.size() < 2) {
      throw std::invalid_argument("EgoACO needs a backbone with at least two blocks (trunk + cloned top)");
    }
    std::mt19937_64 rng(cfg.seed);
    trunk_ = Backbone<T>(cfg.backbone, rng);
    Block<T> top = trunk_.blocks.back();
    trunk_.blocks.pop_back();
    heads_ = {top.clone(), top.clone(), top.clone()};
    const std::size_t cf = top.conv.weight.size(0);
    LstaConfig lc;
    lc.input_channels = cf;
    lc.memory_size = cfg.memory_size;
    lc.pooling_classes = cfg.pooling_classes;
    lc.attention_recurrence = cfg.attention_recurrence;
    lsta_ = LstaCell<T>(lc, rng);
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    ctx_attention_ = Conv2d<T>(cf, 1, 3, o, rng);
    obj_attention_ = Conv2d<T>(cf, 1, 3, o, rng);
    head_ = MultiTaskHead<T>(cfg.memory_size + 2 * cf, cfg.memory_size, cf, cfg.vocab, rng);

    trunk_.collect("trunk", this->params_, trunk_.blocks.size());
    for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].collect(std::string("heads.") + kHeadNames[i], this->params_);
    lsta_.collect("lsta", this->params_);
    ctx_attention_.collect("ctx_attention", this->params_);
    obj_attention_.collect("obj_attention", this->params_);
    head_.collect("classifier", this->params_);
  }

  DescriptorSet<T> descriptors(const BasicTensor<T>& clips) const {
    auto shared = trunk_(clips);
    DescriptorSet<T> d;
    d.act = aggregate(heads_[0](shared), lsta_);
    d.ctx = encode_context(heads_[1](shared), ctx_attention_);
    d.obj = encode_object(heads_[2](shared), obj_attention_);
    return d;
  }

  Scores<T> forward(const BasicTensor<T>& clips, const ForwardContext& ctx) const override {
    auto d = descriptors(clips);
    d.act = maybe_dropout(d.act, cfg_.dropout, ctx);
    d.ctx = maybe_dropout(d.ctx, cfg_.dropout, ctx);
    d.obj = maybe_dropout(d.obj, cfg_.dropout, ctx);
    return classify(head_, d);
  }

  std::size_t min_input_side() const override { return total_stride(cfg_.backbone); }
  VocabSizes vocab() const override { return head_.vocab(); }
  std::string family() const override { return cfg_.backbone.use_gsm ? "gsn+egoaco" : "egoaco"; }

  /// Index of the last trunk block, the one unfrozen in the third stage.
  std::size_t last_trunk_block() const { return trunk_.blocks.size() - 1; }

  const EgoAcoConfig& config() const { return cfg_; }
  const LstaCell<T>& lsta() const { return lsta_; }
  const MultiTaskHead<T>& head() const { return head_; }
  const Conv2d<T>& ctx_attention() const { return ctx_attention_; }
  const Conv2d<T>& obj_attention() const { return obj_attention_; }

 private:
  EgoAcoConfig cfg_;
  Backbone<T> trunk_;
  std::array<Block<T>, 3> heads_;
  LstaCell<T> lsta_;
  Conv2d<T> ctx_attention_, obj_attention_;
  MultiTaskHead<T> head_;
};

}  // namespace gsnaco
