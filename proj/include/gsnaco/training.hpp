#pragma once

// SGD with momentum, cosine schedule with linear warmup, and stage-wise
// training with parameter freezing.

#include <fnmatch.h>

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsnaco/egoaco.hpp"
#include "gsnaco/videodata.hpp"

namespace gsnaco {

struct LrSchedule {
  double base_lr = 0.01;
  std::size_t warmup_epochs = 10;
  std::size_t total_epochs = 60;
};

/// Per-epoch learning rate: linear warmup base·(e+1)/W for e < W, then a
/// half-cosine from base down towards 0 over the remaining epochs.
inline double lr_at(std::size_t epoch, const LrSchedule& s) {
  if (s.warmup_epochs >= s.total_epochs) {
    throw std::invalid_argument("lr_at: warmup (" + std::to_string(s.warmup_epochs) + ") must be shorter than the run (" +
                                std::to_string(s.total_epochs) + ")");
  }
  if (epoch >= s.total_epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(s.total_epochs) +
                            ")");
  }
  const double w = static_cast<double>(s.warmup_epochs);
  const double e = static_cast<double>(epoch);
  if (epoch < s.warmup_epochs) return s.base_lr * (e + 1.0) / w;
  const double span = static_cast<double>(s.total_epochs) - w;
  return 0.5 * s.base_lr * (1.0 + std::cos(std::numbers::pi * (e - w) / span));
}

/// Warmup length used when a stage does not set one: one sixth of the stage.
inline std::size_t default_warmup(std::size_t epochs) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(epochs) / 6.0));
}

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v ← μ·v + (g + wd·p);  p ← p − lr·v. Classic (non-Nesterov) momentum.
template <class T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, bool decay, const SgdConfig& cfg,
                double lr) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw ShapeError("sgd_step: parameter, gradient and momentum sizes differ (" + std::to_string(param.size()) + ", " +
                     std::to_string(grad.size()) + ", " + std::to_string(velocity.size()) + ")");
  }
  const T mu = static_cast<T>(cfg.momentum), wd = decay ? static_cast<T>(cfg.weight_decay) : T(0),
          rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    velocity[i] = mu * velocity[i] + g;
    param[i] -= rate * velocity[i];
  }
}

template <class T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter whose name is in `trainable`.
  void step(ParameterSet<T>& ps, const std::vector<bool>& trainable, double lr) {
    for (std::size_t i = 0; i < ps.items().size(); ++i) {
      if (!trainable[i]) continue;
      auto& p = ps.items()[i];
      auto& v = velocity_[p.name];
      if (v.empty()) v.assign(p.value.numel(), T(0));
      sgd_update<T>(p.value.data(), p.value.grad(), v, p.decay, cfg_, lr);
    }
  }

  const std::map<std::string, std::vector<T>>& buffers() const { return velocity_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, std::vector<T>> velocity_;
};

/// Which parameters a stage updates. Patterns are shell globs over dotted
/// parameter names; every parameter must match exactly one of the two lists.
struct StagePlan {
  std::string name = "stage1";
  int stage = 1;
  std::vector<std::string> trainable{"*"};
  std::vector<std::string> frozen;
  LrSchedule schedule;
};

inline bool matches_any(const std::string& name, const std::vector<std::string>& patterns) {
  for (const auto& p : patterns)
    if (fnmatch(p.c_str(), name.c_str(), 0) == 0) return true;
  return false;
}

template <class T>
std::vector<bool> resolve_plan(const ParameterSet<T>& ps, const StagePlan& plan) {
  std::vector<bool> mask;
  std::vector<std::string> uncovered, both;
  for (const auto& p : ps.items()) {
    const bool t = matches_any(p.name, plan.trainable), f = matches_any(p.name, plan.frozen);
    if (!t && !f) uncovered.push_back(p.name);
    if (t && f) both.push_back(p.name);
    mask.push_back(t && !f);
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!uncovered.empty()) throw std::invalid_argument(plan.name + ": parameters not covered by the plan: " + join(uncovered));
  if (!both.empty()) throw std::invalid_argument(plan.name + ": parameters both trainable and frozen: " + join(both));
  return mask;
}

struct EpochLog {
  int stage = 1;
  std::size_t epoch = 0;
  double lr = 0, loss = 0, verb_acc = 0, noun_acc = 0, action_acc = 0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"stage", e.stage},       {"epoch", e.epoch},       {"lr", e.lr},
          {"loss", e.loss},         {"verb_acc", e.verb_acc}, {"noun_acc", e.noun_acc},
          {"action_acc", e.action_acc}};
}

/// Index of the largest value; ties go to the lower index.
template <class T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

template <class T>
std::size_t count_correct(const BasicTensor<T>& scores, const std::vector<int>& labels) {
  const std::size_t k = scores.size(1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax<T>(scores.data().subspan(i * k, k)) == static_cast<std::size_t>(labels[i])) ++n;
  return n;
}

struct TrainOptions {
  std::size_t batch_size = 8;
  BatchOptions batch{{16, SampleMode::random_per_segment}, true, {}};
  SgdConfig sgd;
};

/// Called after each epoch; returning true ends the stage early.
using EpochCallback = std::function<bool(const EpochLog&)>;

/// Trains the parameters selected by `plan` on `train` (indices into clips).
/// Frozen parameters do not take gradients and are left bitwise unchanged.
template <class T>
std::vector<EpochLog> run_stage(VideoModel<T>& model, const std::vector<VideoClip>& clips,
                                std::vector<std::size_t> train, const StagePlan& plan, const TrainOptions& opt,
                                std::mt19937_64& rng, const EpochCallback& on_epoch = {}) {
  auto& ps = model.parameters();
  const auto mask = resolve_plan(ps, plan);
  (void)lr_at(0, plan.schedule);  // validates the schedule before any work
  if (train.empty()) throw std::invalid_argument(plan.name + ": no training clips");
  if (opt.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (std::size_t i = 0; i < ps.items().size(); ++i) ps.items()[i].value.set_requires_grad(mask[i]);

  const ActionVocab vocab = vocab_of(clips);
  SgdOptimizer<T> sgd(opt.sgd);
  std::vector<EpochLog> logs;
  for (std::size_t epoch = 0; epoch < plan.schedule.total_epochs; ++epoch) {
    const double lr = lr_at(epoch, plan.schedule);
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0;
    std::size_t seen = 0, verb_ok = 0, noun_ok = 0, action_ok = 0;
    for (std::size_t start = 0; start < train.size(); start += opt.batch_size) {
      const std::size_t end = std::min(train.size(), start + opt.batch_size);
      auto batch = make_batch<T>(clips, std::span(train).subspan(start, end - start), opt.batch, vocab, rng);
      ps.zero_grad();
      ForwardContext ctx{true, &rng};
      auto scores = model.forward(batch.clips, ctx);
      auto loss = multitask_loss(scores, batch.labels);
      const double l = static_cast<double>(loss.item());
      if (!std::isfinite(l)) {
        throw NumericError(plan.name + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      backward(loss);
      sgd.step(ps, mask, lr);
      const std::size_t b = end - start;
      loss_sum += l * static_cast<double>(b);
      seen += b;
      verb_ok += count_correct(scores.verb, batch.labels.verb);
      noun_ok += count_correct(scores.noun, batch.labels.noun);
      action_ok += count_correct(scores.action, batch.labels.action);
    }
    EpochLog log;
    log.stage = plan.stage;
    log.epoch = epoch;
    log.lr = lr;
    log.loss = loss_sum / static_cast<double>(seen);
    log.verb_acc = 100.0 * static_cast<double>(verb_ok) / static_cast<double>(seen);
    log.noun_acc = 100.0 * static_cast<double>(noun_ok) / static_cast<double>(seen);
    log.action_acc = 100.0 * static_cast<double>(action_ok) / static_cast<double>(seen);
    logs.push_back(log);
    if (on_epoch && on_epoch(log)) break;
  }
  for (auto& p : ps.items()) p.value.set_requires_grad(true);
  return logs;
}

/// Single-stage recipe for GSN: everything trainable, lr 0.01, 60 epochs with
/// 10 warmup epochs. Final model = last-epoch parameters.
inline StagePlan gsn_plan(std::size_t epochs = 60, double base_lr = 0.01) {
  StagePlan p;
  p.name = "gsn";
  p.stage = 1;
  p.schedule = {base_lr, default_warmup(epochs), epochs};
  return p;
}

struct ThreeStageConfig {
  std::array<std::size_t, 3> epochs{60, 60, 30};
  std::array<double, 3> base_lr{0.01, 0.01, 1e-4};
  std::array<std::size_t, 3> warmup{10, 10, 5};

  /// Epoch counts with warmups of one sixth of each stage.
  static ThreeStageConfig with_epochs(std::size_t e1, std::size_t e2, std::size_t e3) {
    ThreeStageConfig c;
    c.epochs = {e1, e2, e3};
    c.warmup = {default_warmup(e1), default_warmup(e2), default_warmup(e3)};
    return c;
  }
};

/// Stage plans of the EgoACO protocol for a model whose last trunk block has
/// index `last_block`:
///   1: LSTA, attention, classifier        (trunk and heads frozen)
///   2: + the three cloned heads           (trunk frozen)
///   3: + the last trunk block             (stem and earlier blocks frozen)
inline std::array<StagePlan, 3> egoaco_plans(std::size_t last_block, const ThreeStageConfig& cfg = {}) {
  const std::vector<std::string> top{"lsta.*", "ctx_attention.*", "obj_attention.*", "classifier.*"};
  const std::string last = "trunk.block" + std::to_string(last_block) + ".*";
  std::array<StagePlan, 3> plans;
  for (int s = 0; s < 3; ++s) {
    auto& p = plans[s];
    p.name = "stage" + std::to_string(s + 1);
    p.stage = s + 1;
    p.schedule = {cfg.base_lr[s], cfg.warmup[s], cfg.epochs[s]};
    p.trainable = top;
  }
  plans[0].frozen = {"trunk.*", "heads.*"};
  plans[1].trainable.push_back("heads.*");
  plans[1].frozen = {"trunk.*"};
  plans[2].trainable.push_back("heads.*");
  plans[2].trainable.push_back(last);
  plans[2].frozen = {"trunk.stem.*"};
  for (std::size_t b = 0; b < last_block; ++b) plans[2].frozen.push_back("trunk.block" + std::to_string(b) + ".*");
  return plans;
}

/// Called after each stage with the stage plan and its logs.
template <class T>
using StageCallback = std::function<void(const StagePlan&, const std::vector<EpochLog>&, const VideoModel<T>&)>;

template <class T>
std::vector<EpochLog> three_stage_protocol(EgoAcoModel<T>& model, const std::vector<VideoClip>& clips,
                                           const std::vector<std::size_t>& train, const ThreeStageConfig& cfg,
                                           const TrainOptions& opt, std::mt19937_64& rng,
                                           const StageCallback<T>& on_stage = {},
                                           const EpochCallback& on_epoch = {}) {
  std::vector<EpochLog> all;
  for (const auto& plan : egoaco_plans(model.last_trunk_block(), cfg)) {
    auto logs = run_stage<T>(model, clips, train, plan, opt, rng, on_epoch);
    if (on_stage) on_stage(plan, logs, model);
    all.insert(all.end(), logs.begin(), logs.end());
  }
  return all;
}

inline std::vector<std::size_t> indices_of(const std::vector<VideoClip>& clips, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == split) out.push_back(i);
  return out;
}

}  // namespace gsnaco
