#pragma once

// Dense networks on the tape.

#include "koopgen/tape.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace koopgen::net {

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Elu: return "elu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "elu") return Activation::Elu;
  throw InputError("unknown activation '" + std::string(s) + "'");
}

/// Fan-in scaled uniform initialization U(−1/√fan_in, 1/√fan_in).
inline Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = uniform(rng, -bound, bound);
  return t;
}

/// Multilayer perceptron: `depth` affine layers, activation between them, linear head.
class Mlp {
 public:
  Mlp() = default;

  static Mlp create(ParamStore& store, const std::string& prefix, Partition partition, int in, int out,
                    int depth, int width, Activation act, Rng& rng) {
    detail::check(in > 0 && out > 0 && depth >= 1 && (depth == 1 || width > 0), "Mlp", "invalid architecture");
    Mlp m;
    m.in_ = in;
    m.out_ = out;
    m.act_ = act;
    int fan_in = in;
    for (int layer = 0; layer < depth; ++layer) {
      const int fan_out = layer + 1 == depth ? out : width;
      const std::string tag = prefix + "." + std::to_string(layer);
      m.weights_.push_back(store.add(tag + ".weight", partition, fan_in_uniform({fan_out, fan_in}, fan_in, rng)));
      m.biases_.push_back(store.add(tag + ".bias", partition, fan_in_uniform({fan_out}, fan_in, rng)));
      fan_in = fan_out;
    }
    return m;
  }

  /// Binds to existing parameters named `<prefix>.<layer>.weight/bias`.
  static Mlp bind(const ParamStore& store, const std::string& prefix, Activation act) {
    Mlp m;
    m.act_ = act;
    for (int layer = 0;; ++layer) {
      const std::string tag = prefix + "." + std::to_string(layer);
      const long w = store.find(tag + ".weight");
      const long b = store.find(tag + ".bias");
      if (w < 0 || b < 0) break;
      m.weights_.push_back(static_cast<std::size_t>(w));
      m.biases_.push_back(static_cast<std::size_t>(b));
    }
    detail::check(!m.weights_.empty(), "Mlp::bind", "no layers named '" + prefix + "'");
    m.in_ = store[m.weights_.front()].value.cols();
    m.out_ = store[m.weights_.back()].value.rows();
    return m;
  }

  Var forward(Tape& tape, const ParamStore& store, Var x) const {
    detail::check(x.value().ndim() == 2 && x.value().cols() == in_, "Mlp::forward",
                  "input " + x.value().shape_string() + " does not match width " + std::to_string(in_));
    Var h = x;
    for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
      h = linear(h, tape.parameter(store, weights_[layer]), tape.parameter(store, biases_[layer]));
      if (layer + 1 < weights_.size()) h = activate(h, act_);
    }
    return h;
  }

  int in() const { return in_; }
  int out() const { return out_; }
  int depth() const { return static_cast<int>(weights_.size()); }
  Activation activation() const { return act_; }
  const std::vector<std::size_t>& weight_indices() const { return weights_; }
  const std::vector<std::size_t>& bias_indices() const { return biases_; }

 private:
  std::vector<std::size_t> weights_, biases_;
  int in_ = 0, out_ = 0;
  Activation act_ = Activation::Tanh;
};

/// Softmax of one logit vector, max-shifted.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> w(logits.begin(), logits.end());
  if (w.empty()) return w;
  const double mx = *std::max_element(w.begin(), w.end());
  double s = 0.0;
  for (double& v : w) s += (v = std::exp(v - mx));
  for (double& v : w) v /= s;
  return w;
}

/// Simplex weights from logits [B, N] on the tape.
inline Var softmax_gate(Var logits) { return softmax_rows(logits); }

}  // namespace koopgen::net
