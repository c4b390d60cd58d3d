#pragma once

// Dense arrays, named parameter sets and the log-domain helpers the rest of
// the library is built on. Everything is 64-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mwerlab/errors.hpp"

namespace mwerlab {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Row-major dense array of doubles. A scalar has shape {1}.
class Array {
 public:
  Array() : shape_{1}, data_(1, 0.0) {}

  explicit Array(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    data_.assign(checked_count(shape_), fill);
  }

  Array(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_count(shape_))
      throw ContractError("Array: data length does not match shape");
  }

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array({n}, std::move(v));
  }
  static Array matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Array({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.front(); }
  std::size_t cols() const { return rank() < 2 ? 1 : data_.size() / shape_.front(); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const { return data_.front(); }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  static std::size_t checked_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ContractError("Array: empty shape");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ContractError("Array: zero-sized dimension");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Sub-network membership of a parameter.
enum class Role : std::uint8_t { encoder = 0, predictor = 1, joint = 2, other = 3 };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::encoder: return "encoder";
    case Role::predictor: return "predictor";
    case Role::joint: return "joint";
    case Role::other: return "other";
  }
  return "other";
}

inline Role role_from_name(const std::string& s) {
  if (s == "encoder") return Role::encoder;
  if (s == "predictor") return Role::predictor;
  if (s == "joint") return Role::joint;
  if (s == "other") return Role::other;
  throw FormatError("unknown parameter role '" + s + "'");
}

/// Ordered, uniquely-named parameters, each with exactly one role tag.
class ParamSet {
 public:
  struct Entry {
    Array value;
    Role role = Role::other;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  using Map = std::map<std::string, Entry>;

  void add(const std::string& name, Array value, Role role) {
    if (!entries_.emplace(name, Entry{std::move(value), role}).second)
      throw ContractError("ParamSet: duplicate parameter '" + name + "'");
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Array& value(const std::string& name) const { return entry(name).value; }
  Array& mutable_value(const std::string& name) { return entry(name).value; }
  Role role(const std::string& name) const { return entry(name).role; }

  const Map& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("ParamSet: no parameter '" + name + "'");
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("ParamSet: no parameter '" + name + "'");
    return it->second;
  }

  Map entries_;
};

/// Gradients keyed by parameter name, shapes matching the ParamSet.
class GradMap {
 public:
  using Map = std::map<std::string, Array>;

  GradMap() = default;

  static GradMap zeros_like(const ParamSet& params) {
    GradMap g;
    for (const auto& [name, e] : params.entries()) g.entries_.emplace(name, Array(e.value.shape()));
    return g;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Array& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("GradMap: no entry '" + name + "'");
    return it->second;
  }
  Array& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("GradMap: no entry '" + name + "'");
    return it->second;
  }
  void set(const std::string& name, Array a) { entries_.insert_or_assign(name, std::move(a)); }

  const Map& entries() const { return entries_; }
  Map& entries() { return entries_; }

  /// this += scale * other, over the keys of `other`.
  void add_scaled(const GradMap& other, double scale) {
    for (const auto& [name, a] : other.entries_) {
      auto it = entries_.find(name);
      if (it == entries_.end()) it = entries_.emplace(name, Array(a.shape())).first;
      auto dst = it->second.values();
      auto src = a.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
  }

  void scale(double s) {
    for (auto& [_, a] : entries_)
      for (double& v : a.values()) v *= s;
  }

  double l2_norm() const {
    double s = 0.0;
    for (const auto& [_, a] : entries_)
      for (double v : a.values()) s += v * v;
    return std::sqrt(s);
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& [_, a] : entries_)
      for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  Map entries_;
};

/// Gradient-vector relative error: max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|).
/// Both maps must cover the same keys. Two all-zero maps compare as 0.
inline double relative_error(const GradMap& a, const GradMap& b) {
  double diff = 0.0, scale = 0.0;
  for (const auto& [name, av] : a.entries()) {
    const Array& bv = b.at(name);
    if (!av.same_shape(bv)) throw ContractError("relative_error: shape mismatch for " + name);
    for (std::size_t i = 0; i < av.size(); ++i) {
      diff = std::max(diff, std::abs(av[i] - bv[i]));
      scale = std::max({scale, std::abs(av[i]), std::abs(bv[i])});
    }
  }
  if (b.entries().size() != a.entries().size())
    throw ContractError("relative_error: key sets differ");
  return scale == 0.0 ? 0.0 : diff / scale;
}

// ---------------------------------------------------------------------------
// log-domain helpers
// ---------------------------------------------------------------------------

/// log(exp(a) + exp(b)).
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  const double m = *std::max_element(x.begin(), x.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline void log_softmax(std::span<const double> x, std::span<double> out) {
  const double z = log_sum_exp(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - z;
}

inline std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  const double z = log_sum_exp(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i] - z);
  return out;
}

// ---------------------------------------------------------------------------
// small dense kernels; W is (rows x cols) row-major
// ---------------------------------------------------------------------------

/// y = W x (+ b when b is non-empty)
inline void matvec(const Array& W, std::span<const double> x, std::span<const double> b,
                   std::span<double> y) {
  const std::size_t r = W.rows(), c = W.cols();
  const double* w = W.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = b.empty() ? 0.0 : b[i];
    const double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) s += wi[j] * x[j];
    y[i] = s;
  }
}

/// x_grad += W^T y_grad
inline void matvec_transpose_acc(const Array& W, std::span<const double> y_grad,
                                 std::span<double> x_grad) {
  const std::size_t r = W.rows(), c = W.cols();
  const double* w = W.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double g = y_grad[i];
    if (g == 0.0) continue;
    const double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) x_grad[j] += wi[j] * g;
  }
}

/// W_grad += y_grad x^T
inline void outer_acc(std::span<const double> y_grad, std::span<const double> x, Array& W_grad) {
  const std::size_t c = W_grad.cols();
  double* w = W_grad.data();
  for (std::size_t i = 0; i < y_grad.size(); ++i) {
    const double g = y_grad[i];
    if (g == 0.0) continue;
    double* wi = w + i * c;
    for (std::size_t j = 0; j < c; ++j) wi[j] += g * x[j];
  }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace mwerlab
