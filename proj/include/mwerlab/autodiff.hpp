#pragma once

// Reverse-mode differentiation over a linear tape of array-valued nodes, plus
// a central-difference gradient used as an independent oracle.
//
// Nodes are appended in evaluation order, so the tape index is a topological
// order and the backward sweep (reverse index order) is deterministic.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mwerlab/numcore.hpp"

namespace mwerlab::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
 public:
  Var() = default;

  const Array& value() const;
  double item() const { return value().item(); }
  std::size_t size() const { return value().size(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Propagates the gradient of node `self` into its parents.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var input(Array value) { return push("input", std::move(value), nullptr); }

  Var push(const char* op, Array value, Backward bw) {
    if (!value.all_finite()) throw NumericError(std::string("numeric overflow in ") + op);
    nodes_.push_back(Node{std::move(value), Array(), std::move(bw)});
    return Var(this, nodes_.size() - 1);
  }

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  Array& grad(std::size_t id) { return nodes_[id].grad; }
  const Array& grad(const Var& v) const { return nodes_[v.id()].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape backwards.
  void backward(const Var& root) {
    if (root.size() != 1) throw ContractError("backward: root must be scalar");
    for (Node& n : nodes_) n.grad = Array(n.value.shape());
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

 private:
  struct Node {
    Array value;
    Array grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Array& Var::value() const { return tape_->value(id_); }

using Inputs = std::map<std::string, Var>;

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

inline Var constant(Tape& t, Array v) { return t.push("constant", std::move(v), nullptr); }
inline Var scalar(Tape& t, double v) { return constant(t, Array::scalar(v)); }

/// W x + b with W of shape (m, n), x of size n, b of size m.
inline Var affine(const Var& W, const Var& x, const Var& b) {
  Tape& t = W.tape();
  const Array& w = W.value();
  if (w.rank() != 2 || w.cols() != x.size() || w.rows() != b.size())
    throw ContractError("affine: shape mismatch");
  Array y({w.rows()});
  matvec(w, x.value().values(), b.value().values(), y.values());
  const std::size_t iw = W.id(), ix = x.id(), ib = b.id();
  return t.push("affine", std::move(y), [iw, ix, ib](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    outer_acc(g.values(), tp.value(ix).values(), tp.grad(iw));
    matvec_transpose_acc(tp.value(iw), g.values(), tp.grad(ix).values());
    axpy(1.0, g.values(), tp.grad(ib).values());
  });
}

/// W x without bias.
inline Var matmul(const Var& W, const Var& x) {
  Tape& t = W.tape();
  const Array& w = W.value();
  if (w.rank() != 2 || w.cols() != x.size()) throw ContractError("matmul: shape mismatch");
  Array y({w.rows()});
  matvec(w, x.value().values(), {}, y.values());
  const std::size_t iw = W.id(), ix = x.id();
  return t.push("matmul", std::move(y), [iw, ix](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    outer_acc(g.values(), tp.value(ix).values(), tp.grad(iw));
    matvec_transpose_acc(tp.value(iw), g.values(), tp.grad(ix).values());
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw ContractError("add: size mismatch");
  Array y = a.value();
  axpy(1.0, b.value().values(), y.values());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("add", std::move(y), [ia, ib](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    axpy(1.0, g.values(), tp.grad(ia).values());
    axpy(1.0, g.values(), tp.grad(ib).values());
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw ContractError("sub: size mismatch");
  Array y = a.value();
  axpy(-1.0, b.value().values(), y.values());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("sub", std::move(y), [ia, ib](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    axpy(1.0, g.values(), tp.grad(ia).values());
    axpy(-1.0, g.values(), tp.grad(ib).values());
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw ContractError("mul: size mismatch");
  Array y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("mul", std::move(y), [ia, ib](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& av = tp.value(ia);
    const Array& bv = tp.value(ib);
    Array& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Array& gb = tp.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& a, double c) {
  Array y = a.value();
  for (double& v : y.values()) v *= c;
  const std::size_t ia = a.id();
  return a.tape().push("scale", std::move(y), [ia, c](Tape& tp, std::size_t self) {
    axpy(c, tp.grad(self).values(), tp.grad(ia).values());
  });
}

inline Var add_constant(const Var& a, double c) {
  Array y = a.value();
  for (double& v : y.values()) v += c;
  const std::size_t ia = a.id();
  return a.tape().push("add_constant", std::move(y), [ia](Tape& tp, std::size_t self) {
    axpy(1.0, tp.grad(self).values(), tp.grad(ia).values());
  });
}

namespace detail {
template <class F, class D>
Var unary(const char* op, const Var& a, F f, D dfdx_from_x_y) {
  Array y = a.value();
  for (double& v : y.values()) v = f(v);
  const std::size_t ia = a.id();
  return a.tape().push(op, std::move(y), [ia, dfdx_from_x_y](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& x = tp.value(ia);
    const Array& yv = tp.value(self);
    Array& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx_from_x_y(x[i], yv[i]);
  });
}
}  // namespace detail

inline Var tanh(const Var& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

/// log(sum(exp(a))) as a scalar.
inline Var log_sum_exp(const Var& a) {
  const double z = mwerlab::log_sum_exp(a.value().values());
  const std::size_t ia = a.id();
  return a.tape().push("log_sum_exp", Array::scalar(z), [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    const double zv = tp.value(self)[0];
    const Array& x = tp.value(ia);
    Array& gx = tp.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * std::exp(x[i] - zv);
  });
}

inline Var log_softmax(const Var& a) {
  Array y(a.value().shape());
  mwerlab::log_softmax(a.value().values(), y.values());
  const std::size_t ia = a.id();
  return a.tape().push("log_softmax", std::move(y), [ia](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& yv = tp.value(self);
    double gsum = 0.0;
    for (double v : g.values()) gsum += v;
    Array& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(yv[i]) * gsum;
  });
}

inline Var softmax(const Var& a) {
  Array y = Array::vector(mwerlab::softmax(a.value().values()));
  const std::size_t ia = a.id();
  return a.tape().push("softmax", std::move(y), [ia](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    const Array& yv = tp.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
    Array& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += yv[i] * (g[i] - dot);
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().push("sum", Array::scalar(s), [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(ia).values()) v += g;
  });
}

inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

/// Element i of a vector, as a scalar.
inline Var index(const Var& a, std::size_t i) {
  if (i >= a.size()) throw ContractError("index: out of range");
  const std::size_t ia = a.id();
  return a.tape().push("index", Array::scalar(a.value()[i]), [ia, i](Tape& tp, std::size_t self) {
    tp.grad(ia)[i] += tp.grad(self)[0];
  });
}

/// Row r of a matrix, as a vector.
inline Var row(const Var& m, std::size_t r) {
  const Array& mv = m.value();
  if (mv.rank() != 2 || r >= mv.rows()) throw ContractError("row: out of range");
  auto src = mv.row(r);
  Array y = Array::vector(std::vector<double>(src.begin(), src.end()));
  const std::size_t im = m.id();
  return m.tape().push("row", std::move(y), [im, r](Tape& tp, std::size_t self) {
    axpy(1.0, tp.grad(self).values(), tp.grad(im).row(r));
  });
}

/// Stacks scalars into a vector.
inline Var stack(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ContractError("stack: no inputs");
  Tape& t = scalars.front().tape();
  std::vector<double> v;
  std::vector<std::size_t> ids;
  for (const Var& s : scalars) {
    v.push_back(s.item());
    ids.push_back(s.id());
  }
  return t.push("stack", Array::vector(std::move(v)), [ids](Tape& tp, std::size_t self) {
    const Array& g = tp.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) tp.grad(ids[i])[0] += g[i];
  });
}

/// log(exp(a) + exp(b)) for scalars.
inline Var log_add(const Var& a, const Var& b) { return log_sum_exp(stack({a, b})); }

// ---------------------------------------------------------------------------
// evaluation entry points
// ---------------------------------------------------------------------------

/// A scalar-valued computation built from the primitives above.
using Graph = std::function<Var(Tape&, const Inputs&)>;

inline Inputs bind_inputs(Tape& tape, const ParamSet& params) {
  Inputs in;
  for (const auto& [name, e] : params.entries()) in.emplace(name, tape.input(e.value));
  return in;
}

inline double evaluate(const Graph& f, const ParamSet& params) {
  Tape tape;
  Inputs in = bind_inputs(tape, params);
  return f(tape, in).item();
}

}  // namespace mwerlab::ad

namespace mwerlab {

struct ValueAndGrad {
  double value = 0.0;
  GradMap grads;
};

/// Exact reverse-mode derivatives of f at params.
inline ValueAndGrad eval_with_grad(const ad::Graph& f, const ParamSet& params) {
  ad::Tape tape;
  ad::Inputs in = ad::bind_inputs(tape, params);
  ad::Var out = f(tape, in);
  if (out.size() != 1) throw ContractError("eval_with_grad: output is not scalar");
  tape.backward(out);
  ValueAndGrad r;
  r.value = out.item();
  for (const auto& [name, v] : in) r.grads.set(name, tape.grad(v));
  return r;
}

/// Central differences (f(θ+eps·e_i) − f(θ−eps·e_i)) / (2·eps) per scalar parameter.
inline GradMap finite_diff_grad(const std::function<double(const ParamSet&)>& f,
                                const ParamSet& params, double eps = 1e-6) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  GradMap g = GradMap::zeros_like(params);
  ParamSet work = params;
  for (const auto& [name, e] : params.entries()) {
    Array& out = g.at(name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double orig = e.value[i];
      work.mutable_value(name)[i] = orig + eps;
      const double up = f(work);
      work.mutable_value(name)[i] = orig - eps;
      const double down = f(work);
      work.mutable_value(name)[i] = orig;
      out[i] = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

inline GradMap finite_diff_grad(const ad::Graph& f, const ParamSet& params, double eps = 1e-6) {
  return finite_diff_grad([&f](const ParamSet& p) { return ad::evaluate(f, p); }, params, eps);
}

}  // namespace mwerlab
