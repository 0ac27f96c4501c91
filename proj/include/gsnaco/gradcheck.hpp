#pragma once

// Central finite-difference checks of the reverse-mode gradients, over every
// layer type and both model families at tiny shapes, in double precision.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gsnaco/egoaco.hpp"

namespace gsnaco {

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-5;
  // Denominator floor of the relative error. Central differences of an O(1)
  // loss carry about 1e-11 absolute rounding noise at eps = 1e-5, so entries
  // whose true gradient is below the floor are judged on absolute error
  // against tolerance × floor instead.
  double floor = 1e-4;
  std::size_t entries_per_tensor = 6;
  // A relu kink between x−eps and x+eps makes the difference quotient
  // meaningless. Such entries are recognised from the second difference
  // and skipped, up to this fraction of the checked entries.
  double max_skipped_fraction = 0.1;
};

struct GradcheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

using LossFn = std::function<Tensor()>;

/// Compares analytic and central-difference gradients of `loss` with respect
/// to a random subset of the entries of every tensor in `wrt`. The loss must
/// read the values of `wrt` through their shared storage.
inline GradcheckResult gradcheck(const std::string& name, std::vector<Tensor> wrt, const LossFn& loss,
                                 const GradcheckOptions& opt, std::mt19937_64& rng) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckResult r;
  r.name = name;
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  NoGradGuard no_grad;
  const double base = loss().item();
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].data();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), opt.entries_per_tensor));
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double up = loss().item();
      values[i] = saved - opt.eps;
      const double down = loss().item();
      values[i] = saved;
      ++r.checked;
      const double curvature = std::abs(up - 2.0 * base + down);
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[ti][i];
      if (curvature > 1e-7 * std::max(1.0, std::abs(base))) {
        ++r.skipped;
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      r.max_rel_error = std::max(r.max_rel_error, rel);
    }
  }
  r.passed = r.max_rel_error <= opt.tolerance &&
             static_cast<double>(r.skipped) <= opt.max_skipped_fraction * static_cast<double>(r.checked);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

namespace gradcheck_detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline std::vector<Tensor> parameter_values(const ParameterSet<double>& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps.items()) out.push_back(p.value);
  return out;
}

inline void randomize(ParameterSet<double>& ps, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : ps.items())
    for (auto& v : p.value.data()) v = u(rng);
}

}  // namespace gradcheck_detail

/// One check per layer type, each over its inputs and parameters.
inline std::vector<GradcheckResult> layer_gradchecks(std::uint64_t seed, const GradcheckOptions& opt = {}) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  std::vector<GradcheckResult> out;
  auto run = [&](const std::string& name, std::vector<Tensor> wrt, auto&& make_output) {
    // The projection weights are drawn once so every evaluation sees the
    // same scalar function.
    Tensor w;
    LossFn f = [&, make_output]() mutable {
      auto y = make_output();
      if (y.numel() == 1) return y;
      if (!w.defined()) {
        w = random_tensor(y.shape(), rng);
        w.set_requires_grad(false);
      }
      return sum(mul(y, w));
    };
    out.push_back(gradcheck(name, std::move(wrt), f, opt, rng));
  };

  {
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    run("add", {a, b}, [=] { return add(a, b); });
    run("sub", {a, b}, [=] { return sub(a, b); });
    run("multiply", {a, b}, [=] { return mul(a, b); });
    run("scale", {a}, [=] { return scale(a, 1.7); });
    run("tanh", {a}, [=] { return tanh(a); });
    run("sigmoid", {a}, [=] { return sigmoid(a); });
    auto pos = random_tensor({2, 3}, rng, 0.2, 1.0);
    run("log", {pos}, [=] { return log_eps(pos, 1e-8); });
    // Entries bounded away from the kink at zero, of both signs.
    auto away = random_tensor({2, 3}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < away.numel(); i += 2) away.data()[i] = -away.data()[i];
    run("relu", {away}, [=] { return relu(away); });
    auto s = Tensor::scalar(0.7, true);
    run("scalar_broadcast", {a, s}, [=] { return mul(a, s); });
  }
  {
    auto x = random_tensor({2, 3, 4, 5}, rng);
    run("avg_pool_spatial", {x}, [=] { return avg_pool_spatial(x); });
    run("sum_spatial", {x}, [=] { return sum_spatial(x); });
    run("avg_pool_temporal", {x}, [=] { return avg_pool_temporal(x); });
    run("softmax_spatial", {x}, [=] { return softmax_spatial(x); });
    run("channels_last", {x}, [=] { return channels_last(x); });
    run("reshape", {x}, [=] { return reshape(x, Shape{6, 20}); });
    run("slice", {x}, [=] { return slice1(x, 1, 3); });
    run("select", {x}, [=] { return select1(x, 2); });
    auto y = random_tensor({2, 2, 4, 5}, rng);
    run("concat", {x, y}, [=] { return concat1<double>({x, y}); });
    run("stack", {x, y}, [=] { return stack1<double>({slice1(x, 0, 2), y}); });
    auto m = random_tensor({2, 1, 4, 5}, rng);
    run("repeat_channels", {m}, [=] { return repeat_channels(m, 3); });
    auto v = random_tensor({2, 3}, rng);
    run("expand_spatial", {v}, [=] { return expand_spatial(v, 4, 5); });
    auto gain = random_tensor({3}, rng), shift = random_tensor({3}, rng);
    run("channel_affine", {x, gain, shift}, [=] { return channel_affine(x, gain, shift); });
    auto seq = random_tensor({2, 3, 4, 2, 2}, rng);
    run("group_shift", {seq}, [=] { return group_shift(seq); });
  }
  {
    auto x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({5}, rng);
    run("linear", {x, w, b}, [=] { return linear(x, w, b); });
    run("linear_nobias", {x, w}, [=] { return linear(x, w); });
    auto m = random_tensor({4, 2}, rng);
    run("matmul", {x, m}, [=] { return matmul(x, m); });
    run("softmax_rows", {x}, [=] { return softmax_rows(x); });
    std::vector<int> labels{1, 0, 3};
    run("cross_entropy", {x}, [=] { return cross_entropy(x, labels); });
  }
  {
    auto x = random_tensor({2, 4, 5, 6}, rng);
    auto w = random_tensor({6, 2, 3, 3}, rng), b = random_tensor({6}, rng);
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    o.groups = 2;
    run("conv2d_grouped", {x, w, b}, [=] { return conv2d(x, w, b, o); });
    auto w1 = random_tensor({3, 4, 3, 2}, rng);
    Conv2dOptions s;
    s.stride_h = 2;
    s.stride_w = 1;
    s.pad_h = 1;
    run("conv2d_strided", {x, w1}, [=] { return conv2d(x, w1, Tensor{}, s); });
  }
  {
    GsmLayer<double> gsm(4);
    auto y = random_tensor({2, 3, 4, 3, 3}, rng);
    auto gw = random_tensor(gsm.gate.weight.shape(), rng, -0.5, 0.5);
    auto gb = random_tensor(gsm.gate.bias.shape(), rng, -0.5, 0.5);
    gsm.gate.weight = gw;
    gsm.gate.bias = gb;
    run("gsm", {y, gw, gb}, [=] { return gsm_forward(y, gsm); });
  }
  {
    LstaConfig lc;
    lc.input_channels = 3;
    lc.memory_size = 4;
    lc.pooling_classes = 3;
    std::mt19937_64 init(seed + 1);
    LstaCell<double> cell(lc, init);
    ParameterSet<double> ps;
    cell.collect("lsta", ps);
    auto seq = random_tensor({2, 3, 3, 3, 3}, rng);
    auto wrt = parameter_values(ps);
    wrt.push_back(seq);
    run("lsta", wrt, [=] { return aggregate(seq, cell); });

    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    Conv2d<double> att(3, 1, 3, o, init);
    ParameterSet<double> aps;
    att.collect("att", aps);
    auto awrt = parameter_values(aps);
    awrt.push_back(seq);
    run("context_attention", awrt, [=] { return encode_context(seq, att); });
    run("object_attention", awrt, [=] { return encode_object(seq, att); });
  }
  {
    std::mt19937_64 init(seed + 2);
    MultiTaskHead<double> head(6, 4, 5, {3, 2, 4}, init);
    ParameterSet<double> ps;
    head.collect("classifier", ps);
    randomize(ps, rng, 0.5);
    auto xa = random_tensor({2, 6}, rng), xv = random_tensor({2, 4}, rng), xn = random_tensor({2, 5}, rng);
    auto wrt = parameter_values(ps);
    wrt.insert(wrt.end(), {xa, xv, xn});
    ClipLabels labels{{0, 2}, {1, 0}, {3, 1}};
    run("multitask_head", wrt, [=] { return multitask_loss(classify(head, xa, xv, xn), labels); });
  }
  return out;
}

/// Tiny clip batch for the model-level checks, B×T×3×8×8.
inline Tensor gradcheck_clips(std::mt19937_64& rng, std::size_t batch = 2, std::size_t frames = 3) {
  auto x = gradcheck_detail::random_tensor({batch, frames, 3, 8, 8}, rng, 0.0, 1.0);
  x.set_requires_grad(false);
  return x;
}

inline GradcheckResult model_gradcheck(const std::string& family, std::uint64_t seed,
                                       const GradcheckOptions& opt = {}) {
  using namespace gradcheck_detail;
  std::mt19937_64 rng(seed);
  BackboneConfig bb{3, 4, 2, {{4, 1}, {6, 2}, {6, 1}}, family != "egoaco"};
  VocabSizes vocab{3, 2, 4};
  ClipLabels labels{{0, 2}, {1, 0}, {3, 1}};
  auto clips = gradcheck_clips(rng);
  if (family == "gsn") {
    GsnConfig cfg{bb, vocab, 0.0, seed};
    auto model = std::make_shared<GsnModel<double>>(cfg);
    // Nonzero gates and bias maps so their gradients are exercised.
    for (auto& p : model->parameters().items()) {
      if (p.name.find("gsm") != std::string::npos || p.name.find("bias_map") != std::string::npos) {
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (auto& v : p.value.data()) v = u(rng);
      }
    }
    return gradcheck("model:gsn", parameter_values(model->parameters()),
                     [model, clips, labels] { return multitask_loss(model->forward(clips, {}), labels); }, opt, rng);
  }
  if (family == "egoaco" || family == "gsn+egoaco") {
    EgoAcoConfig cfg;
    cfg.backbone = bb;
    cfg.memory_size = 4;
    cfg.pooling_classes = 3;
    cfg.vocab = vocab;
    cfg.dropout = 0.0;
    cfg.seed = seed;
    auto model = std::make_shared<EgoAcoModel<double>>(cfg);
    for (auto& p : model->parameters().items()) {
      if (p.name.find("gsm") != std::string::npos || p.name.find("bias_map") != std::string::npos) {
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (auto& v : p.value.data()) v = u(rng);
      }
    }
    return gradcheck("model:" + family, parameter_values(model->parameters()),
                     [model, clips, labels] { return multitask_loss(model->forward(clips, {}), labels); }, opt, rng);
  }
  throw std::invalid_argument("gradcheck: unknown model family '" + family + "'");
}

/// Layer checks followed by the model checks selected by `family`
/// ("all", "layers", "gsn", "egoaco", "gsn+egoaco").
inline std::vector<GradcheckResult> run_gradcheck_suite(const std::string& family, std::uint64_t seed,
                                                        const GradcheckOptions& opt = {}) {
  std::vector<GradcheckResult> out;
  if (family == "all" || family == "layers") out = layer_gradchecks(seed, opt);
  if (family == "all") {
    for (const char* f : {"gsn", "egoaco", "gsn+egoaco"}) out.push_back(model_gradcheck(f, seed, opt));
  } else if (family != "layers") {
    out.push_back(model_gradcheck(family, seed, opt));
  }
  return out;
}

}  // namespace gsnaco
