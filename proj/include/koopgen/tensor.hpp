#pragma once

#include "koopgen/error.hpp"
#include "koopgen/types.hpp"

#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace koopgen::net {

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Dense row-major tensor. 2-D tensors alias `Matrix`; 3-D tensors are stacks
/// of equally sized matrices ([batch, rows, cols]).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(count(shape)), fill);
  }

  static long count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), 1L, [](long a, int b) { return a * b; });
  }

  static Tensor from_matrix(const Matrix& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data.begin());
    return t;
  }

  static Tensor from_vector(const Vector& v) {
    Tensor t({static_cast<int>(v.size())});
    std::copy(v.data(), v.data() + v.size(), t.data.begin());
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  int rows() const { return shape.size() >= 2 ? shape[shape.size() - 2] : 1; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int batch() const { return shape.size() == 3 ? shape[0] : 1; }

  /// Whole tensor viewed as a matrix (1-D tensors become a single row).
  MatrixMap mat() { return MatrixMap(data.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data.data(), rows(), cols()); }

  /// Slice b of a 3-D tensor.
  MatrixMap mat(int b) { return MatrixMap(data.data() + static_cast<long>(b) * rows() * cols(), rows(), cols()); }
  ConstMatrixMap mat(int b) const {
    return ConstMatrixMap(data.data() + static_cast<long>(b) * rows() * cols(), rows(), cols());
  }

  Matrix to_matrix() const { return mat(); }

  bool all_finite() const {
    for (double x : data) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

enum class Partition : std::uint8_t { Main = 0, Gate = 1, Generator = 2 };

inline const char* to_string(Partition p) {
  switch (p) {
    case Partition::Main: return "main";
    case Partition::Gate: return "gate";
    case Partition::Generator: return "generator";
  }
  return "?";
}

struct Parameter {
  std::string name;
  Partition partition;
  Tensor value;
};

/// Named trainable tensors, each in exactly one partition.
class ParamStore {
 public:
  std::size_t add(std::string name, Partition partition, Tensor value) {
    if (find(name) >= 0) throw InputError("duplicate parameter name '" + name + "'");
    params_.push_back({std::move(name), partition, std::move(value)});
    return params_.size() - 1;
  }

  long find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return static_cast<long>(i);
    }
    return -1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
};

/// Gradients aligned index-for-index with a ParamStore.
using Gradients = std::vector<Tensor>;

inline Gradients zeros_like(const ParamStore& store) {
  Gradients g;
  g.reserve(store.size());
  for (const auto& p : store) g.emplace_back(p.value.shape);
  return g;
}

}  // namespace koopgen::net
