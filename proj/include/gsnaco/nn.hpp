#pragma once

// Named parameter registry and the small layers shared by both model
// families.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gsnaco/ops.hpp"

namespace gsnaco {

template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  bool decay = true;  // weight decay applies
};

/// Ordered collection of named parameters. Names are dotted paths
/// ("backbone.block0.conv.weight") and unique.
template <class T>
class ParameterSet {
 public:
  void add(std::string name, BasicTensor<T> value, bool decay) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
    index_[name] = items_.size();
    value.set_requires_grad(true);
    items_.push_back({std::move(name), std::move(value), decay});
  }

  const std::vector<Parameter<T>>& items() const { return items_; }
  std::vector<Parameter<T>>& items() { return items_; }
  std::size_t size() const { return items_.size(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.value.zero_grad();
  }

 private:
  std::vector<Parameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
BasicTensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return BasicTensor<T>(std::move(shape), std::move(v));
}

template <class T>
struct Conv2d {
  BasicTensor<T> weight, bias;
  Conv2dOptions opt;

  Conv2d() = default;
  Conv2d(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions o, std::mt19937_64& rng) : opt(o) {
    const double fan_in = static_cast<double>(cin / o.groups * k * k);
    weight = uniform_tensor<T>({cout, cin / o.groups, k, k}, std::sqrt(6.0 / fan_in), rng);
    bias = BasicTensor<T>::zeros({cout});
  }

  static Conv2d zeros(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions o) {
    Conv2d c;
    c.opt = o;
    c.weight = BasicTensor<T>::zeros({cout, cin / o.groups, k, k});
    c.bias = BasicTensor<T>::zeros({cout});
    return c;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, opt); }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    ps.add(prefix + ".weight", weight, true);
    ps.add(prefix + ".bias", bias, false);
  }
};

template <class T>
struct Linear {
  BasicTensor<T> weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    weight = uniform_tensor<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    bias = BasicTensor<T>::zeros({out});
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    ps.add(prefix + ".weight", weight, true);
    ps.add(prefix + ".bias", bias, false);
  }
};

/// Learnable per-channel scale and shift; the desk-scale stand-in for batch
/// normalization.
template <class T>
struct ChannelAffine {
  BasicTensor<T> gain, shift;

  ChannelAffine() = default;
  explicit ChannelAffine(std::size_t channels)
      : gain(BasicTensor<T>::full({channels}, T(1))), shift(BasicTensor<T>::zeros({channels})) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return channel_affine(x, gain, shift); }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    ps.add(prefix + ".scale", gain, false);
    ps.add(prefix + ".shift", shift, false);
  }
};

/// Deep copy of a tensor's values into a fresh leaf.
template <class T>
BasicTensor<T> clone_values(const BasicTensor<T>& t) {
  return BasicTensor<T>(t.shape(), t.values());
}

/// Flattens B×T×rest into (B·T)×rest and back.
template <class T>
BasicTensor<T> merge_time(const BasicTensor<T>& x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  s[0] *= x.size(0);
  return reshape(x, s);
}

template <class T>
BasicTensor<T> split_time(const BasicTensor<T>& x, std::size_t batch) {
  Shape s = x.shape();
  s[0] /= batch;
  s.insert(s.begin(), batch);
  return reshape(x, s);
}

}  // namespace gsnaco
