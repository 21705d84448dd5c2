#pragma once

// Reverse-mode differentiation over tensor-valued nodes.
//
// Every op computes its output eagerly and records a closure that maps the
// output gradient to input gradients. Nodes are appended in evaluation order,
// so a single reverse sweep visits each node once.

#include "koopgen/error.hpp"
#include "koopgen/genops.hpp"
#include "koopgen/tensor.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace koopgen::net {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  /// Leaf for parameter `index` of `store`; repeated calls return the same node.
  Var parameter(const ParamStore& store, std::size_t index) {
    if (param_nodes_.size() < store.size()) param_nodes_.resize(store.size(), -1);
    if (param_nodes_[index] < 0) {
      param_nodes_[index] = push(store[index].value, true, nullptr).id;
    }
    return {this, param_nodes_[index]};
  }

  /// Records an op output. `inputs` decide whether the node needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw InputError("op mixes variables from different tapes");
      needs = needs || nodes_[static_cast<std::size_t>(v.id)].needs_grad;
    }
#ifndef NDEBUG
    if (!value.all_finite()) throw NumericalError("non-finite tensor produced on tape");
#endif
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(int id) const { return node(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(int id) const { return node(id).needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id); }

  /// Gradient buffer of node `id`, zero-initialized on first access.
  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

  bool has_grad(int id) const { return !node(id).grad.data.empty(); }

  /// Runs the reverse sweep from a scalar node.
  void backward(Var loss) {
    if (loss.tape != this || loss.id < 0) throw InputError("backward: unrecorded node");
    if (value(loss).size() != 1) throw InputError("backward: loss must be a scalar");
    grad(loss.id).data[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.data.empty()) continue;
      n.backward(*this, id);
    }
  }

  /// Collects parameter gradients in store order (zeros for unused parameters).
  Gradients parameter_gradients(const ParamStore& store) const {
    Gradients g = zeros_like(store);
    for (std::size_t i = 0; i < store.size() && i < param_nodes_.size(); ++i) {
      const int id = param_nodes_[i];
      if (id >= 0 && has_grad(id)) g[i] = node(id).grad;
    }
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  const Node& node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw InputError("unrecorded node reference");
    return nodes_[static_cast<std::size_t>(id)];
  }

  Var push(Tensor value, bool needs, BackwardFn fn) {
    nodes_.push_back({std::move(value), Tensor{}, needs, std::move(fn)});
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline void check(bool ok, const char* op, const std::string& what) {
  if (!ok) throw InputError(std::string(op) + ": " + what);
}

inline void accumulate(Tape& t, int id, const Tensor& g) {
  if (!t.needs_grad(id)) return;
  auto& dst = t.grad(id).data;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data[i];
}

}  // namespace detail

inline Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::check(x.same_shape(y), "add", "shape mismatch " + x.shape_string() + " vs " + y.shape_string());
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += y.data[i];
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const Tensor g = t.grad(self);
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::check(x.same_shape(y), "sub", "shape mismatch " + x.shape_string() + " vs " + y.shape_string());
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= y.data[i];
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, int self) {
    Tensor g = t.grad(self);
    detail::accumulate(t, ia, g);
    for (double& v : g.data) v = -v;
    detail::accumulate(t, ib, g);
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  return a.tape->record(std::move(out), {a}, [ia = a.id, c](Tape& t, int self) {
    Tensor g = t.grad(self);
    for (double& v : g.data) v *= c;
    detail::accumulate(t, ia, g);
  });
}

/// Σᵢ xᵢ wᵢ against a constant weight tensor (used for probing gradients).
inline Var dot_const(Var a, const Tensor& w) {
  const Tensor& x = a.value();
  detail::check(x.size() == w.size(), "dot_const", "size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data[i] * w.data[i];
  return a.tape->record(Tensor::scalar(s), {a}, [ia = a.id, w](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    Tensor gx(t.value(ia).shape);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] = g * w.data[i];
    detail::accumulate(t, ia, gx);
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [ia = a.id](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    Tensor gx(t.value(ia).shape, g);
    detail::accumulate(t, ia, gx);
  });
}

inline Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// ½‖a‖²
inline Var half_squared_norm(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v * v;
  return a.tape->record(Tensor::scalar(0.5 * s), {a}, [ia = a.id](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    Tensor gx = t.value(ia);
    for (double& v : gx.data) v *= g;
    detail::accumulate(t, ia, gx);
  });
}

inline Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::check(x.ndim() == 2 && y.ndim() == 2 && x.cols() == y.rows(), "matmul",
                "incompatible shapes " + x.shape_string() + " x " + y.shape_string());
  Tensor out({x.rows(), y.cols()});
  out.mat().noalias() = x.mat() * y.mat();
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const auto g = t.grad(self).mat();
    if (t.needs_grad(ia)) t.grad(ia).mat().noalias() += g * t.value(ib).mat().transpose();
    if (t.needs_grad(ib)) t.grad(ib).mat().noalias() += t.value(ia).mat().transpose() * g;
  });
}

inline Var transpose(Var a) {
  const Tensor& x = a.value();
  detail::check(x.ndim() == 2, "transpose", "expects a matrix");
  Tensor out({x.cols(), x.rows()});
  out.mat() = x.mat().transpose();
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, int self) {
    t.grad(ia).mat() += t.grad(self).mat().transpose();
  });
}

/// Y = X Wᵀ + b for X [B, in], W [out, in], b [out].
inline Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::check(xv.ndim() == 2 && wv.ndim() == 2 && xv.cols() == wv.cols() &&
                    static_cast<int>(bv.size()) == wv.rows(),
                "linear", "shape mismatch " + xv.shape_string() + " vs W" + wv.shape_string());
  Tensor out({xv.rows(), wv.rows()});
  auto o = out.mat();
  o.noalias() = xv.mat() * wv.mat().transpose();
  const Eigen::Map<const Eigen::RowVectorXd> bias(bv.data.data(), wv.rows());
  o.rowwise() += bias;
  return x.tape->record(std::move(out), {x, w, b}, [ix = x.id, iw = w.id, ib = b.id](Tape& t, int self) {
    const auto g = t.grad(self).mat();
    if (t.needs_grad(ix)) t.grad(ix).mat().noalias() += g * t.value(iw).mat();
    if (t.needs_grad(iw)) t.grad(iw).mat().noalias() += g.transpose() * t.value(ix).mat();
    if (t.needs_grad(ib)) {
      Eigen::Map<Eigen::RowVectorXd> gb(t.grad(ib).data.data(), g.cols());
      gb += g.colwise().sum();
    }
  });
}

enum class Activation : std::uint8_t { Tanh, Relu, Elu };

inline Var activate(Var a, Activation act) {
  Tensor out = a.value();
  switch (act) {
    case Activation::Tanh:
      for (double& v : out.data) v = std::tanh(v);
      break;
    case Activation::Relu:
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::Elu:
      for (double& v : out.data) v = v > 0.0 ? v : std::expm1(v);
      break;
  }
  return a.tape->record(std::move(out), {a}, [ia = a.id, act](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& x = t.value(ia);
    Tensor gx(x.shape);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double d = 0.0;
      switch (act) {
        case Activation::Tanh: d = 1.0 - y.data[i] * y.data[i]; break;
        case Activation::Relu: d = x.data[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::Elu: d = x.data[i] > 0.0 ? 1.0 : y.data[i] + 1.0; break;
      }
      gx.data[i] = g.data[i] * d;
    }
    detail::accumulate(t, ia, gx);
  });
}

/// Row-wise softmax with max shift; rows lie strictly inside the simplex.
inline Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  detail::check(x.ndim() == 2, "softmax_rows", "expects a matrix");
  Tensor out(x.shape);
  const int n = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    const double* xr = x.data.data() + static_cast<long>(r) * n;
    double* yr = out.data.data() + static_cast<long>(r) * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (int j = 0; j < n; ++j) yr[j] /= s;
  }
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor gx(y.shape);
    const int n = y.cols();
    for (int r = 0; r < y.rows(); ++r) {
      const long o = static_cast<long>(r) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += g.data[o + j] * y.data[o + j];
      for (int j = 0; j < n; ++j) gx.data[o + j] = y.data[o + j] * (g.data[o + j] - dot);
    }
    detail::accumulate(t, ia, gx);
  });
}

/// ½(X − Xᵀ) for square X; antisymmetric bit-for-bit.
inline Var antisymmetric_part(Var a) {
  const Tensor& x = a.value();
  detail::check(x.ndim() == 2 && x.rows() == x.cols(), "antisymmetric_part", "expects a square matrix");
  Tensor out(x.shape);
  out.mat() = koopgen::detail::antisymmetric_part(x.mat());
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, int self) {
    const auto g = t.grad(self).mat();
    t.grad(ia).mat() += 0.5 * (g - g.transpose());
  });
}

/// ½(X + Xᵀ) for square X; symmetric bit-for-bit.
inline Var symmetric_part(Var a) {
  const Tensor& x = a.value();
  detail::check(x.ndim() == 2 && x.rows() == x.cols(), "symmetric_part", "expects a square matrix");
  Tensor out(x.shape);
  out.mat() = koopgen::detail::symmetric_part(x.mat());
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, int self) {
    const auto g = t.grad(self).mat();
    t.grad(ia).mat() += 0.5 * (g + g.transpose());
  });
}

/// [[A, −B],[B, A]]
inline Var block_form(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::check(x.ndim() == 2 && x.same_shape(y) && x.rows() == x.cols(), "block_form",
                "expects two square matrices of equal size");
  Tensor out({2 * x.rows(), 2 * x.rows()});
  out.mat() = koopgen::detail::block_form(x.mat(), y.mat());
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const auto g = t.grad(self).mat();
    const auto d = g.rows() / 2;
    if (t.needs_grad(ia)) t.grad(ia).mat() += g.topLeftCorner(d, d) + g.bottomRightCorner(d, d);
    if (t.needs_grad(ib)) t.grad(ib).mat() += g.bottomLeftCorner(d, d) - g.topRightCorner(d, d);
  });
}

/// Stacks equally shaped matrices into [N, rows, cols].
inline Var stack(std::span<const Var> items) {
  detail::check(!items.empty(), "stack", "needs at least one item");
  const Tensor& first = items.front().value();
  detail::check(first.ndim() == 2, "stack", "items must be matrices");
  Tensor out({static_cast<int>(items.size()), first.rows(), first.cols()});
  const std::size_t block = first.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor& v = items[i].value();
    detail::check(v.same_shape(first), "stack", "items differ in shape");
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<long>(i * block));
  }
  std::vector<int> ids;
  for (const Var& v : items) ids.push_back(v.id);
  return items.front().tape->record(std::move(out), items, [ids, block](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      auto& dst = t.grad(ids[i]).data;
      for (std::size_t k = 0; k < block; ++k) dst[k] += g.data[i * block + k];
    }
  });
}

/// Per-row convex mixture: out[b] = Σₙ w[b, n] · ops[n], w [B, N], ops [N, n, n].
inline Var mix(Var w, Var ops) {
  const Tensor& wv = w.value();
  const Tensor& gv = ops.value();
  detail::check(wv.ndim() == 2 && gv.ndim() == 3 && wv.cols() == gv.shape[0], "mix",
                "weights " + wv.shape_string() + " do not match operators " + gv.shape_string());
  const int B = wv.rows(), N = wv.cols();
  const long block = static_cast<long>(gv.shape[1]) * gv.shape[2];
  Tensor out({B, gv.shape[1], gv.shape[2]});
  for (int b = 0; b < B; ++b) {
    double* o = out.data.data() + b * block;
    for (int n = 0; n < N; ++n) {
      const double c = wv.data[static_cast<long>(b) * N + n];
      const double* g = gv.data.data() + n * block;
      for (long k = 0; k < block; ++k) o[k] += c * g[k];
    }
  }
  return w.tape->record(std::move(out), {w, ops}, [iw = w.id, ig = ops.id, B, N, block](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(iw)) {
      const Tensor& gv = t.value(ig);
      auto& dw = t.grad(iw).data;
      for (int b = 0; b < B; ++b) {
        for (int n = 0; n < N; ++n) {
          double s = 0.0;
          for (long k = 0; k < block; ++k) s += g.data[b * block + k] * gv.data[n * block + k];
          dw[static_cast<long>(b) * N + n] += s;
        }
      }
    }
    if (t.needs_grad(ig)) {
      const Tensor& wv = t.value(iw);
      auto& dg = t.grad(ig).data;
      for (int b = 0; b < B; ++b) {
        for (int n = 0; n < N; ++n) {
          const double c = wv.data[static_cast<long>(b) * N + n];
          for (long k = 0; k < block; ++k) dg[n * block + k] += c * g.data[b * block + k];
        }
      }
    }
  });
}

/// exp(dt·G[b]) for every slice of G [B, n, n]. The reverse pass replays the
/// scaling-and-squaring evaluation of each slice.
inline Var expm(Var g, double dt) {
  const Tensor& gv = g.value();
  detail::check(gv.ndim() == 3 && gv.shape[1] == gv.shape[2], "expm", "expects [B, n, n]");
  detail::check(dt > 0.0, "expm", "dt must be positive");
  if (!gv.all_finite()) throw NumericalError("expm: non-finite generator entries");
  const int B = gv.shape[0], n = gv.shape[1];
  const long block = static_cast<long>(n) * n;
  Tensor out(gv.shape);
  koopgen::detail::ExpmTrace tr;
  for (int b = 0; b < B; ++b) {
    koopgen::detail::expm_forward(n, gv.data.data() + b * block, dt, out.data.data() + b * block, tr);
  }
  if (!out.all_finite()) throw NumericalError("expm: result overflowed");
  return g.tape->record(std::move(out), {g}, [ig = g.id, dt, B, n, block](Tape& t, int self) {
    const Tensor& gv = t.value(ig);
    const Tensor& dout = t.grad(self);
    Tensor& dg = t.grad(ig);
    koopgen::detail::ExpmTrace tr;
    std::vector<double> scratch(static_cast<std::size_t>(block));
    for (int b = 0; b < B; ++b) {
      koopgen::detail::expm_forward(n, gv.data.data() + b * block, dt, scratch.data(), tr);
      koopgen::detail::expm_backward(tr, dout.data.data() + b * block, dg.data.data() + b * block);
    }
  });
}

/// out[b] = K[b] · z[b] for K [B, n, n], z [B, n].
inline Var batched_matvec(Var k, Var z) {
  const Tensor& kv = k.value();
  const Tensor& zv = z.value();
  detail::check(kv.ndim() == 3 && zv.ndim() == 2 && kv.shape[0] == zv.rows() && kv.shape[2] == zv.cols() &&
                    kv.shape[1] == kv.shape[2],
                "batched_matvec", "shapes " + kv.shape_string() + " and " + zv.shape_string());
  const int B = zv.rows(), n = zv.cols();
  Tensor out({B, n});
  for (int b = 0; b < B; ++b) {
    const double* kb = kv.data.data() + static_cast<long>(b) * n * n;
    const double* zb = zv.data.data() + static_cast<long>(b) * n;
    double* ob = out.data.data() + static_cast<long>(b) * n;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += kb[i * n + j] * zb[j];
      ob[i] = s;
    }
  }
  return k.tape->record(std::move(out), {k, z}, [ik = k.id, iz = z.id, B, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& kv = t.value(ik);
    const Tensor& zv = t.value(iz);
    const bool gk = t.needs_grad(ik), gz = t.needs_grad(iz);
    double* dk = gk ? t.grad(ik).data.data() : nullptr;
    double* dz = gz ? t.grad(iz).data.data() : nullptr;
    for (int b = 0; b < B; ++b) {
      const double* gb = g.data.data() + static_cast<long>(b) * n;
      const double* kb = kv.data.data() + static_cast<long>(b) * n * n;
      const double* zb = zv.data.data() + static_cast<long>(b) * n;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (gk) dk[static_cast<long>(b) * n * n + i * n + j] += gb[i] * zb[j];
          if (gz) dz[static_cast<long>(b) * n + j] += kb[i * n + j] * gb[i];
        }
      }
    }
  });
}

/// Vertical concatenation of matrices with equal column counts.
inline Var concat_rows(std::span<const Var> items) {
  detail::check(!items.empty(), "concat_rows", "needs at least one item");
  const int cols = items.front().value().cols();
  int rows = 0;
  for (const Var& v : items) {
    detail::check(v.value().ndim() == 2 && v.value().cols() == cols, "concat_rows", "column mismatch");
    rows += v.value().rows();
  }
  Tensor out({rows, cols});
  std::vector<int> ids;
  std::vector<long> offsets;
  long off = 0;
  for (const Var& v : items) {
    const Tensor& x = v.value();
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + off);
    ids.push_back(v.id);
    offsets.push_back(off);
    off += static_cast<long>(x.size());
  }
  return items.front().tape->record(std::move(out), items, [ids, offsets](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      auto& dst = t.grad(ids[i]).data;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.data[static_cast<std::size_t>(offsets[i]) + k];
    }
  });
}

/// Rows [start, start + count) of a matrix.
inline Var slice_rows(Var a, int start, int count) {
  const Tensor& x = a.value();
  detail::check(x.ndim() == 2 && start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows",
                "range out of bounds");
  Tensor out({count, x.cols()});
  const long off = static_cast<long>(start) * x.cols();
  std::copy(x.data.begin() + off, x.data.begin() + off + static_cast<long>(out.size()), out.data.begin());
  return a.tape->record(std::move(out), {a}, [ia = a.id, off](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& dst = t.grad(ia).data;
    for (std::size_t k = 0; k < g.size(); ++k) dst[static_cast<std::size_t>(off) + k] += g.data[k];
  });
}

}  // namespace koopgen::net
