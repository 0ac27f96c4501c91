#pragma once

// Multi-task verb/noun/action classifier with action-score biasing, shared by
// the GSN and EgoACO families, and the common VideoModel interface.

#include <random>
#include <string>
#include <vector>

#include "gsnaco/nn.hpp"

namespace gsnaco {

struct VocabSizes {
  std::size_t verbs = 0, nouns = 0, actions = 0;
  bool operator==(const VocabSizes&) const = default;
};

template <class T>
struct Scores {
  BasicTensor<T> verb, noun, action;  // each B×K, pre-softmax
};

/// Action logits are computed from the action input; verb and noun logits
/// receive the action logits through the linear bias maps B_v and B_n:
///   s_a = W_a·x_a + b_a
///   s_v = W_v·x_v + B_v·s_a + b_v
///   s_n = W_n·x_n + B_n·s_a + b_n
template <class T>
struct MultiTaskHead {
  Linear<T> action, verb, noun;
  BasicTensor<T> verb_bias_map, noun_bias_map;  // V×A, N×A

  MultiTaskHead() = default;
  MultiTaskHead(std::size_t action_in, std::size_t verb_in, std::size_t noun_in, VocabSizes v,
                std::mt19937_64& rng)
      : action(action_in, v.actions, rng),
        verb(verb_in, v.verbs, rng),
        noun(noun_in, v.nouns, rng),
        verb_bias_map(BasicTensor<T>::zeros({v.verbs, v.actions})),
        noun_bias_map(BasicTensor<T>::zeros({v.nouns, v.actions})) {}

  VocabSizes vocab() const { return {verb.weight.size(0), noun.weight.size(0), action.weight.size(0)}; }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    action.collect(prefix + ".action", ps);
    verb.collect(prefix + ".verb", ps);
    noun.collect(prefix + ".noun", ps);
    ps.add(prefix + ".verb_bias_map", verb_bias_map, true);
    ps.add(prefix + ".noun_bias_map", noun_bias_map, true);
  }
};

template <class T>
Scores<T> classify(const MultiTaskHead<T>& head, const BasicTensor<T>& action_in, const BasicTensor<T>& verb_in,
                   const BasicTensor<T>& noun_in) {
  Scores<T> s;
  s.action = head.action(action_in);
  s.verb = add(head.verb(verb_in), linear(s.action, head.verb_bias_map));
  s.noun = add(head.noun(noun_in), linear(s.action, head.noun_bias_map));
  return s;
}

struct ClipLabels {
  std::vector<int> verb, noun, action;
};

/// Sum of the three batch-mean cross-entropies, equally weighted.
template <class T>
BasicTensor<T> multitask_loss(const Scores<T>& s, const ClipLabels& labels) {
  return add(add(cross_entropy(s.verb, labels.verb), cross_entropy(s.noun, labels.noun)),
             cross_entropy(s.action, labels.action));
}

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required for dropout in training mode
};

/// Common surface of the two model families.
template <class T>
class VideoModel {
 public:
  virtual ~VideoModel() = default;

  /// clips: B×T×3×H×W.
  virtual Scores<T> forward(const BasicTensor<T>& clips, const ForwardContext& ctx) const = 0;

  /// Classifier applied at every position of the final feature map and the
  /// score map averaged. Defaults to forward() for models whose descriptors
  /// already pool space.
  virtual Scores<T> forward_fully_conv(const BasicTensor<T>& clips) const { return forward(clips, {}); }

  virtual std::size_t min_input_side() const = 0;
  virtual VocabSizes vocab() const = 0;
  virtual std::string family() const = 0;

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

 protected:
  ParameterSet<T> params_;
};

template <class T>
BasicTensor<T> maybe_dropout(const BasicTensor<T>& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  if (!ctx.rng) throw std::invalid_argument("training-mode forward needs an rng for dropout");
  return dropout(x, rate, *ctx.rng);
}

}  // namespace gsnaco
