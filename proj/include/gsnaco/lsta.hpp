#pragma once

// LSTA: a ConvLSTM with recurrent spatial attention on its input and an
// output gate biased by a pooled view of the memory.
//
// One step on input x_t with state (c, h, a):
//   a_t  = softmax_hw(conv_att([x_t; h]) + λ·log(a + 1e-8))
//   x̃_t  = a_t ⊙ x_t
//   c_t  = σ(conv_f([x̃_t; h]))⊙c + σ(conv_i([x̃_t; h]))⊙tanh(conv_g([x̃_t; h]))
//   s_t  = softmax(prototypes · mean_hw(c_t)),  w_t = s_tᵀ · prototypes
//   h_t  = σ(conv_o([x̃_t; h]) + w_t) ⊙ tanh(c_t)
// All tensors carry a leading batch axis.

#include <random>
#include <string>

#include "gsnaco/nn.hpp"

namespace gsnaco {

template <class T>
struct LstaState {
  BasicTensor<T> memory;     // B×C_m×H×W
  BasicTensor<T> hidden;     // B×C_m×H×W
  BasicTensor<T> attention;  // B×1×H×W, a spatial distribution

  static LstaState initial(std::size_t batch, std::size_t memory_size, std::size_t h, std::size_t w) {
    LstaState s;
    s.memory = BasicTensor<T>::zeros({batch, memory_size, h, w});
    s.hidden = BasicTensor<T>::zeros({batch, memory_size, h, w});
    s.attention = BasicTensor<T>::full({batch, 1, h, w}, T(1) / static_cast<T>(h * w));
    return s;
  }
};

struct LstaConfig {
  std::size_t input_channels = 16;
  std::size_t memory_size = 16;     // 512 at full scale
  std::size_t pooling_classes = 8;  // 300 at full scale
  double attention_recurrence = 1.0;
};

template <class T>
struct LstaCell {
  LstaConfig cfg;
  Conv2d<T> attention, input_gate, forget_gate, output_gate, candidate;
  BasicTensor<T> prototypes;  // P×C_m

  LstaCell() = default;
  LstaCell(const LstaConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (c.input_channels == 0 || c.memory_size == 0 || c.pooling_classes == 0) {
      throw std::invalid_argument("LstaCell: sizes must be positive");
    }
    Conv2dOptions o;
    o.pad_h = o.pad_w = 1;
    const std::size_t in = c.input_channels + c.memory_size;
    attention = Conv2d<T>(in, 1, 3, o, rng);
    input_gate = Conv2d<T>(in, c.memory_size, 3, o, rng);
    forget_gate = Conv2d<T>(in, c.memory_size, 3, o, rng);
    output_gate = Conv2d<T>(in, c.memory_size, 3, o, rng);
    candidate = Conv2d<T>(in, c.memory_size, 3, o, rng);
    prototypes = uniform_tensor<T>({c.pooling_classes, c.memory_size},
                                   1.0 / std::sqrt(static_cast<double>(c.memory_size)), rng);
  }

  void collect(const std::string& prefix, ParameterSet<T>& ps) const {
    attention.collect(prefix + ".attention", ps);
    input_gate.collect(prefix + ".input_gate", ps);
    forget_gate.collect(prefix + ".forget_gate", ps);
    output_gate.collect(prefix + ".output_gate", ps);
    candidate.collect(prefix + ".candidate", ps);
    ps.add(prefix + ".prototypes", prototypes, true);
  }
};

namespace detail {

template <class T>
void require_step_shapes(const BasicTensor<T>& x, const LstaState<T>& s, const LstaCell<T>& cell, const char* op) {
  require_rank(x, 4, op, "input frame");
  require(x.size(1) == cell.cfg.input_channels, std::string(op) + ": input has " + std::to_string(x.size(1)) +
                                                    " channels, cell expects " +
                                                    std::to_string(cell.cfg.input_channels));
  require(s.hidden.size(0) == x.size(0), std::string(op) + ": batch of state and input differ");
  require(s.hidden.size(2) == x.size(2) && s.hidden.size(3) == x.size(3),
          std::string(op) + ": spatial shape " + to_string(x.shape()) + " differs from state " +
              to_string(s.hidden.shape()));
}

}  // namespace detail

/// Recurrent spatial attention map for frame x_t, B×1×H×W.
template <class T>
BasicTensor<T> attend(const BasicTensor<T>& x, const LstaState<T>& state, const LstaCell<T>& cell) {
  detail::require_step_shapes(x, state, cell, "attend");
  auto logits = cell.attention(concat1<T>({x, state.hidden}));
  const T lambda = static_cast<T>(cell.cfg.attention_recurrence);
  if (lambda != T(0)) logits = add(logits, scale(log_eps(state.attention, T(1e-8)), lambda));
  return softmax_spatial(logits);
}

template <class T>
struct LstaStep {
  LstaState<T> state;
  BasicTensor<T> output;  // h_t
};

/// Memory-distilled channel bias of the output gate: a soft selection over the
/// prototype vectors driven by the spatial mean of the memory. B×C_m.
template <class T>
BasicTensor<T> output_pooling_bias(const BasicTensor<T>& memory, const LstaCell<T>& cell) {
  auto selection = softmax_rows(linear(avg_pool_spatial(memory), cell.prototypes));
  return matmul(selection, cell.prototypes);
}

template <class T>
LstaStep<T> cell_step(const BasicTensor<T>& x, const LstaState<T>& state, const LstaCell<T>& cell) {
  auto a = attend(x, state, cell);
  auto attended = mul(repeat_channels(a, x.size(1)), x);
  auto joint = concat1<T>({attended, state.hidden});
  auto i = sigmoid(cell.input_gate(joint));
  auto f = sigmoid(cell.forget_gate(joint));
  auto g = tanh(cell.candidate(joint));
  auto c = add(mul(f, state.memory), mul(i, g));
  auto w = output_pooling_bias(c, cell);
  auto o = sigmoid(add(cell.output_gate(joint), expand_spatial(w, x.size(2), x.size(3))));
  auto h = mul(o, tanh(c));
  return {{c, h, a}, h};
}

/// Runs the cell over a B×T×C×H×W sequence from the initial state and returns
/// the spatial average of the last hidden state, B×C_m.
template <class T>
BasicTensor<T> aggregate(const BasicTensor<T>& seq, const LstaCell<T>& cell) {
  detail::require_rank(seq, 5, "aggregate", "sequence");
  detail::require(seq.size(1) >= 1, "aggregate: empty sequence");
  auto state = LstaState<T>::initial(seq.size(0), cell.cfg.memory_size, seq.size(3), seq.size(4));
  BasicTensor<T> h;
  for (std::size_t t = 0; t < seq.size(1); ++t) {
    auto step = cell_step(select1(seq, t), state, cell);
    state = step.state;
    h = step.output;
  }
  return avg_pool_spatial(h);
}

}  // namespace gsnaco
