// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense matrices. A Tape
// records every op applied to its Vars; backward() walks the records in
// reverse and returns gradients for the named parameter leaves.
//
// All arithmetic is IEEE double with the default rounding mode and fixed
// loop order, so identical inputs give bit-identical outputs within a build.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ldar/errors.hpp"
#include "ldar/specials.hpp"
#include "ldar/tensor.hpp"

namespace ldar {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
};

using GradMap = std::map<std::string, Tensor>;

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input; never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }

  // Differentiable leaf owned by the tape (used by gradient checks).
  Var variable(Tensor value, std::string name) {
    Var v = push(std::move(value), {}, nullptr, true);
    nodes_[v.id].name = std::move(name);
    return v;
  }

  // Differentiable leaf that reads the caller's storage without copying.
  // Registering the same name twice yields the same Var.
  Var parameter(const std::string& name, const Tensor& storage) {
    if (auto it = by_name_.find(name); it != by_name_.end()) return Var{this, it->second};
    Node n;
    n.external = &storage;
    n.requires_grad = true;
    n.name = name;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    by_name_.emplace(name, id);
    return Var{this, id};
  }

  // Records an op node. `fn` receives the tape and the node index and must
  // accumulate into the grads of the node's inputs.
  Var push(Tensor value, std::vector<int> inputs, BackwardFn fn, bool leaf_requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = leaf_requires_grad;
    for (int i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int input(int id, std::size_t k) const { return nodes_[id].inputs[k]; }

  // Gradient buffer of a node, allocated on first use.
  Tensor& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      const Tensor& v = value(id);
      n.grad = Tensor(v.rows(), v.cols());
    }
    return n.grad;
  }

  // Reverse sweep from a 1x1 loss. Gradients are re-zeroed at the start, so
  // calling backward twice on the same tape returns the same result.
  GradMap backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
    const Tensor& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) throw UsageError("backward: loss must be a scalar, got " + shape_string(lv));
    for (Node& n : nodes_) n.grad = Tensor();
    GradMap out;
    if (!nodes_[loss.id].requires_grad) {
      collect(out);
      return out;
    }
    grad(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
    collect(out);
    return out;
  }

  void reset() {
    nodes_.clear();
    by_name_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  void collect(GradMap& out) {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.name.empty() || !n.requires_grad) continue;
      const Tensor& v = value(static_cast<int>(id));
      out[n.name] = n.grad.empty() ? Tensor(v.rows(), v.cols()) : n.grad;
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> by_name_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands recorded on different tapes");
  return *a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

// Elementwise unary op with derivative f'(x, y) given input x and output y.
template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return t.push(std::move(out), {x.id}, [df](Tape& tp, int self) {
    const int in = tp.input(self, 0);
    if (!tp.requires_grad(in)) return;
    const Tensor& xv = tp.value(in);
    const Tensor& yv = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& gi = tp.grad(in);
    for (std::size_t i = 0; i < xv.size(); ++i) gi[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

// C = A B.
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner extents differ " + shape_string(av) + " * " + shape_string(bv));
  Tensor out(av.rows(), bv.cols());
  kernel::gemm_acc(av, bv, out);
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, int self) {
    const int ia = tp.input(self, 0), ib = tp.input(self, 1);
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) kernel::gemm_acc(g, kernel::transpose(tp.value(ib)), tp.grad(ia));
    if (tp.requires_grad(ib)) kernel::gemm_tn_acc(tp.value(ia), g, tp.grad(ib));
  });
}

// C = A B^T, for attention scores.
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(av) + " * " + shape_string(bv) + "^T");
  Tensor out(av.rows(), bv.rows());
  kernel::gemm_acc(av, kernel::transpose(bv), out);
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, int self) {
    const int ia = tp.input(self, 0), ib = tp.input(self, 1);
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) kernel::gemm_acc(g, tp.value(ib), tp.grad(ia));
    if (tp.requires_grad(ib)) kernel::gemm_tn_acc(g, tp.value(ia), tp.grad(ib));
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.push(kernel::transpose(a.value()), {a.id}, [](Tape& tp, int self) {
    const int in = tp.input(self, 0);
    if (!tp.requires_grad(in)) return;
    const Tensor& g = tp.grad(self);
    Tensor& gi = tp.grad(in);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gi(j, i) += g(i, j);
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      const int in = tp.input(self, k);
      if (!tp.requires_grad(in)) continue;
      Tensor& gi = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const int ia = tp.input(self, 0), ib = tp.input(self, 1);
    if (tp.requires_grad(ia)) {
      Tensor& gi = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gi = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const int ia = tp.input(self, 0), ib = tp.input(self, 1);
    if (tp.requires_grad(ia)) {
      Tensor& gi = tp.grad(ia);
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gi = tp.grad(ib);
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * av[i];
    }
  });
}

// X + 1 x n row broadcast over every row of X.
inline Var add_row(Var x, Var bias) {
  Tape& t = detail::same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols())
    throw DimensionError("add_row: bias " + shape_string(bv) + " does not fit " + shape_string(xv));
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return t.push(std::move(out), {x.id, bias.id}, [](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const int ix = tp.input(self, 0), ib = tp.input(self, 1);
    if (tp.requires_grad(ix)) {
      Tensor& gi = tp.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
    }
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var sin(Var x) {
  return detail::unary(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

inline Var cos(Var x) {
  return detail::unary(x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

inline Var softplus(Var x) {
  return detail::unary(x, special::softplus, [](double v, double) { return special::sigmoid(v); });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, special::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var gelu(Var x) {
  return detail::unary(x, special::gelu, [](double v, double) { return special::gelu_derivative(v); });
}

inline Var log(Var x) {
  return detail::unary(x, special::checked_log, [](double v, double) { return 1.0 / v; });
}

inline Var lgamma(Var x) {
  return detail::unary(x, [](double v) { return special::lgamma(v); },
                       [](double v, double) { return special::digamma(v); });
}

// Sum of all entries, as a 1 x 1 Var.
inline Var sum(Var x) {
  Tape& t = *x.tape;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.push(Tensor::scalar(s), {x.id}, [](Tape& tp, int self) {
    const int in = tp.input(self, 0);
    if (!tp.requires_grad(in)) return;
    const double g = tp.grad(self)[0];
    Tensor& gi = tp.grad(in);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g;
  });
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mx = xv(i, 0);
    for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      out(i, j) = std::exp(xv(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) /= z;
  }
  return t.push(std::move(out), {x.id}, [](Tape& tp, int self) {
    const int in = tp.input(self, 0);
    if (!tp.requires_grad(in)) return;
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& gi = tp.grad(in);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) gi(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

// Per-row layer normalization with population variance and 1 x n affine.
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  Tape& t = detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  if (!(eps > 0.0)) throw UsageError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || !gain.value().same_shape(bias.value()))
    throw DimensionError("layer_norm: affine shape does not match " + shape_string(xv));
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  // Normalized activations and inverse std are kept for the backward pass.
  Tensor xhat(xv.rows(), n);
  Tensor inv_std(xv.rows(), 1);
  Tensor out(xv.rows(), n);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * is;
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  return t.push(std::move(out), {x.id, gain.id, bias.id},
                [xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const int ix = tp.input(self, 0), ig = tp.input(self, 1), ib = tp.input(self, 2);
                  const Tensor& g = tp.grad(self);
                  const Tensor& gv = tp.value(ig);
                  const std::size_t n = g.cols();
                  if (tp.requires_grad(ig)) {
                    Tensor& gg = tp.grad(ig);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += g(i, j) * xhat(i, j);
                  }
                  if (tp.requires_grad(ib)) {
                    Tensor& gb = tp.grad(ib);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
                  }
                  if (!tp.requires_grad(ix)) return;
                  Tensor& gx = tp.grad(ix);
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < g.rows(); ++i) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = g(i, j) * gv[j];
                      sum_d += d;
                      sum_dx += d * xhat(i, j);
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = g(i, j) * gv[j];
                      gx(i, j) += inv_std[i] * (d - inv_n * sum_d - xhat(i, j) * inv_n * sum_dx);
                    }
                  }
                });
}

// Columns [start, start + count) of X.
inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  Tape& t = *x.tape;
  const Tensor& xv = x.value();
  if (count == 0 || start + count > xv.cols()) throw DimensionError("slice_cols: range outside " + shape_string(xv));
  Tensor out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, start + j);
  return t.push(std::move(out), {x.id}, [start](Tape& tp, int self) {
    const int in = tp.input(self, 0);
    if (!tp.requires_grad(in)) return;
    const Tensor& g = tp.grad(self);
    Tensor& gi = tp.grad(in);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gi(i, start + j) += g(i, j);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return t.push(std::move(out), std::move(ids), [](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0;; ++k) {
      if (off >= g.cols()) break;
      const int in = tp.input(self, k);
      const std::size_t w = tp.value(in).cols();
      if (tp.requires_grad(in)) {
        Tensor& gi = tp.grad(in);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gi(i, j) += g(i, off + j);
      }
      off += w;
    }
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace ldar
