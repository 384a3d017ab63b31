#pragma once

// Define-by-run reverse-mode differentiation over Tensor<T>.
//
// A Tape records every operation of one forward pass. Values live on the tape
// (or are referenced, for parameters); backward() walks the records in reverse
// and accumulates gradients into each input. Parameters receive their
// gradients in Tensor::grad() once the pass finishes.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

#include "attmix/error.hpp"
#include "attmix/tensor.hpp"

namespace attmix {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatRM<T>>;
template <typename T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool needs_grad() const { return tape->needs_grad(id); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const std::vector<T>& grad_out)>;

  Tape() = default;
  // With record_grad == false nothing is differentiable (inference passes).
  explicit Tape(bool record_grad) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // The tape references `p`; it must outlive backward().
  Var<T> parameter(Tensor<T>& p) {
    Node n;
    n.ref = &p;
    n.param = &p;
    n.needs_grad = record_grad_ && p.requires_grad();
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> v) {
    Node n;
    n.own = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, Backward bw) {
    check_owner(inputs);
    Node n;
    n.own = std::move(v);
    for (const Var<T>& in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    if (check_finite_) {
      bool inputs_finite = true;
      for (const Var<T>& in : inputs) inputs_finite = inputs_finite && value(in.id).all_finite();
      if (inputs_finite && !n.own.all_finite()) {
        throw ContractError("non-finite value produced from finite inputs at tape node " +
                            std::to_string(nodes_.size()));
      }
    }
    if (n.needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.own;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  std::vector<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), T(0));
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  bool finished() const { return finished_; }

  // NaN/Inf check on every recorded value (on by default in debug builds).
  void set_check_finite(bool on) { check_finite_ = on; }

  void backward(Var<T> root) {
    if (root.tape != this) throw ContractError("backward root belongs to another tape");
    if (finished_) throw ContractError("backward already ran on this tape; build a new tape per pass");
    if (value(root.id).size() != 1) {
      throw ContractError("backward root must be a scalar, got shape " +
                          shape_str(value(root.id).shape()));
    }
    finished_ = true;
    if (nodes_[root.id].needs_grad) {
      grad(root.id)[0] = T(1);
      for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, n.grad);
      }
    }
    for (Node& n : nodes_) {
      if (!n.param || !n.needs_grad) continue;
      n.param->ensure_grad();
      if (n.grad.empty()) continue;
      std::vector<T>& g = n.param->grad();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
    }
  }

 private:
  struct Node {
    const Tensor<T>* ref = nullptr;
    Tensor<T>* param = nullptr;
    Tensor<T> own;
    std::vector<T> grad;
    bool needs_grad = false;
    Backward backward;
  };

  void check_owner(std::initializer_list<Var<T>> inputs) const {
    for (const Var<T>& in : inputs) {
      if (in.tape != this) throw ContractError("operation mixes values from different tapes");
    }
  }

  std::deque<Node> nodes_;
  bool record_grad_ = true;
  bool finished_ = false;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

namespace detail {

template <typename T>
void require_rank2(const Var<T>& v, const char* op) {
  if (v.value().rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(v.shape()));
  }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
CMapMat<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(t.data().data(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}

template <typename T>
MapMat<T> as_mat(std::vector<T>& g, std::size_t rows, std::size_t cols) {
  return MapMat<T>(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
CMapMat<T> as_mat(const std::vector<T>& g, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T, typename F>
Var<T> unary_elementwise(Var<T> x, F f, std::function<T(T, T)> dfdx_from_in_out) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  std::size_t xid = x.id;
  std::size_t self = x.tape->size();
  return x.tape->record(std::move(out), {x},
                        [xid, self, d = std::move(dfdx_from_in_out)](Tape<T>& t,
                                                                     const std::vector<T>& g) {
                          const Tensor<T>& in = t.value(xid);
                          const Tensor<T>& o = t.value(self);
                          std::vector<T>& gx = t.grad(xid);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(in[i], o[i]);
                        });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor<T> out({m, n});
  detail::as_mat(out.values(), m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), k, n);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, const std::vector<T>& g) {
    auto G = detail::as_mat(g, m, n);
    if (t.needs_grad(ai)) {
      detail::as_mat(t.grad(ai), m, k).noalias() +=
          G * detail::as_mat(t.value(bi), k, n).transpose();
    }
    if (t.needs_grad(bi)) {
      detail::as_mat(t.grad(bi), k, n).noalias() +=
          detail::as_mat(t.value(ai), m, k).transpose() * G;
    }
  });
}

// y = x·Wᵀ + b with W stored [out × in] and x [m × in]. Bias is optional.
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias = std::nullopt) {
  detail::require_rank2(weight, "linear");
  const std::size_t out_f = weight.shape()[0], in_f = weight.shape()[1];
  const std::size_t m = x.value().size() / in_f;
  if (x.value().rank() != 2 || x.shape()[1] != in_f) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias && bias->value().size() != out_f) {
    throw DimensionError("linear: bias " + shape_str(bias->shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  Tensor<T> out({m, out_f});
  auto Y = detail::as_mat(out.values(), m, out_f);
  Y.noalias() = detail::as_mat(x.value(), m, in_f) *
                detail::as_mat(weight.value(), out_f, in_f).transpose();
  if (bias) Y.rowwise() += CMapVec<T>(bias->value().data().data(), out_f).transpose();
  const std::size_t xi = x.id, wi = weight.id;
  const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  auto bw = [=](Tape<T>& t, const std::vector<T>& g) {
    auto G = detail::as_mat(g, m, out_f);
    if (t.needs_grad(xi)) {
      detail::as_mat(t.grad(xi), m, in_f).noalias() +=
          G * detail::as_mat(t.value(wi), out_f, in_f);
    }
    if (t.needs_grad(wi)) {
      detail::as_mat(t.grad(wi), out_f, in_f).noalias() +=
          G.transpose() * detail::as_mat(t.value(xi), m, in_f);
    }
    if (bi && t.needs_grad(*bi)) {
      MapVec<T>(t.grad(*bi).data(), out_f) += G.colwise().sum().transpose();
    }
  };
  if (bias) return x.tape->record(std::move(out), {x, weight, *bias}, bw);
  return x.tape->record(std::move(out), {x, weight}, bw);
}

// ---------------------------------------------------------------------------
// Elementwise family
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, const std::vector<T>& g) {
    for (std::size_t id : {ai, bi}) {
      if (!t.needs_grad(id)) continue;
      std::vector<T>& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, const std::vector<T>& g) {
    if (t.needs_grad(ai)) {
      std::vector<T>& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      std::vector<T>& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, const std::vector<T>& g) {
    if (t.needs_grad(ai)) {
      std::vector<T>& ga = t.grad(ai);
      const Tensor<T>& bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(bi)) {
      std::vector<T>& gb = t.grad(bi);
      const Tensor<T>& av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

// x [R × C] plus y [r × C] repeated down the rows (R must be a multiple of r).
// A bias vector is the r = 1 case; positional tables use r = sequence length.
template <typename T>
Var<T> add_tiled(Var<T> x, Var<T> y) {
  const std::size_t cols = y.value().rank() == 1 ? y.value().size() : y.value().cols();
  const std::size_t period = y.value().size() / cols;
  if (x.value().size() % cols != 0 || x.cols() != cols || x.rows() % period != 0) {
    throw DimensionError("add_tiled: " + shape_str(y.shape()) + " does not tile " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.rows();
  Tensor<T> out(x.shape());
  const Tensor<T>& xv = x.value();
  const Tensor<T>& yv = y.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t yr = r % period;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + yv[yr * cols + c];
  }
  const std::size_t xi = x.id, yi = y.id;
  return x.tape->record(std::move(out), {x, y}, [=](Tape<T>& t, const std::vector<T>& g) {
    if (t.needs_grad(xi)) {
      std::vector<T>& gx = t.grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs_grad(yi)) {
      std::vector<T>& gy = t.grad(yi);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t yr = r % period;
        for (std::size_t c = 0; c < cols; ++c) gy[yr * cols + c] += g[r * cols + c];
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary_elementwise<T>(
      x,
      [](T v) {
        // Split on sign so exp never overflows.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary_elementwise<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(kInvSqrt2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
        const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Softmax over the last axis, max-subtracted.
template <typename T>
Var<T> softmax(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax over an empty axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  const std::size_t xi = x.id, self = x.tape->size();
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& t, const std::vector<T>& g) {
    const Tensor<T>& y = t.value(self);
    std::vector<T>& gx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

// LayerNorm over the last axis with biased variance.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) +
                         " do not match width " + std::to_string(d));
  }
  if (!(eps > T(0))) throw ValidationError("layer_norm: eps must be positive");
  const std::size_t rows = xv.size() / d;
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                const std::vector<T>& g) {
        const Tensor<T>& gam = t.value(gi);
        if (t.needs_grad(gi) || t.needs_grad(bi)) {
          std::vector<T>* gg = t.needs_grad(gi) ? &t.grad(gi) : nullptr;
          std::vector<T>* gb = t.needs_grad(bi) ? &t.grad(bi) : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) (*gg)[j] += g[r * d + j] * xhat[r * d + j];
              if (gb) (*gb)[j] += g[r * d + j];
            }
          }
        }
        if (!t.needs_grad(xi)) return;
        std::vector<T>& gx = t.grad(xi);
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = g[r * d + j] * gam[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * xhat[r * d + j];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape and indexing
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value();
  out.set_requires_grad(false);
  out.clear_grad();
  out.reshape(std::move(shape));
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Rows of the 2D view of x at `index`, in order.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> index) {
  const std::size_t cols = x.cols(), rows = x.rows();
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  Tensor<T> out({index.size(), cols});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(x.value().data().data() + index[i] * cols, cols, out.data().data() + i * cols);
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {x},
                        [=, index = std::move(index)](Tape<T>& t, const std::vector<T>& g) {
                          std::vector<T>& gx = t.grad(xi);
                          for (std::size_t i = 0; i < index.size(); ++i) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              gx[index[i] * cols + c] += g[i * cols + c];
                            }
                          }
                        });
}

// Copy of `base` with row index[i] replaced by row i of `src`. Indices must be distinct.
template <typename T>
Var<T> scatter_rows(Var<T> base, Var<T> src, std::vector<std::size_t> index) {
  const std::size_t cols = base.cols(), rows = base.rows();
  if (src.cols() != cols || src.rows() != index.size()) {
    throw DimensionError("scatter_rows: source " + shape_str(src.shape()) + " vs base " +
                         shape_str(base.shape()) + " with " + std::to_string(index.size()) +
                         " indices");
  }
  std::vector<char> replaced(rows, 0);
  Tensor<T> out = base.value();
  out.set_requires_grad(false);
  out.clear_grad();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows || replaced[index[i]]) {
      throw DimensionError("scatter_rows: indices must be distinct and in range");
    }
    replaced[index[i]] = 1;
    std::copy_n(src.value().data().data() + i * cols, cols, out.data().data() + index[i] * cols);
  }
  const std::size_t bi = base.id, si = src.id;
  return base.tape->record(
      std::move(out), {base, src},
      [=, index = std::move(index), replaced = std::move(replaced)](Tape<T>& t,
                                                                   const std::vector<T>& g) {
        if (t.needs_grad(bi)) {
          std::vector<T>& gb = t.grad(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            if (replaced[r]) continue;
            for (std::size_t c = 0; c < cols; ++c) gb[r * cols + c] += g[r * cols + c];
          }
        }
        if (t.needs_grad(si)) {
          std::vector<T>& gs = t.grad(si);
          for (std::size_t i = 0; i < index.size(); ++i) {
            for (std::size_t c = 0; c < cols; ++c) gs[i * cols + c] += g[index[i] * cols + c];
          }
        }
      });
}

// A single row (vector or 1×d) repeated n times into [n × d].
template <typename T>
Var<T> repeat_rows(Var<T> row, std::size_t n) {
  const std::size_t d = row.value().size();
  if (n == 0) throw DimensionError("repeat_rows: count must be positive");
  Tensor<T> out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(row.value().data().data(), d, out.data().data() + r * d);
  }
  const std::size_t ri = row.id;
  return row.tape->record(std::move(out), {row}, [=](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>& gr = t.grad(ri);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) gr[c] += g[r * d + c];
    }
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != m) {
    throw DimensionError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor<T> out({m, p + q});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.value().data().data() + r * p, p, out.data().data() + r * (p + q));
    std::copy_n(b.value().data().data() + r * q, q, out.data().data() + r * (p + q) + p);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& t, const std::vector<T>& g) {
    if (t.needs_grad(ai)) {
      std::vector<T>& ga = t.grad(ai);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += g[r * (p + q) + c];
      }
    }
    if (t.needs_grad(bi)) {
      std::vector<T>& gb = t.grad(bi);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += g[r * (p + q) + p + c];
      }
    }
  });
}

// Mean over consecutive groups of `group` rows: [B·group × d] -> [B × d].
template <typename T>
Var<T> mean_groups(Var<T> x, std::size_t group) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (group == 0 || rows % group != 0) {
    throw DimensionError("mean_groups: " + std::to_string(rows) + " rows not divisible by " +
                         std::to_string(group));
  }
  const std::size_t b = rows / group;
  Tensor<T> out({b, d});
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < group; ++r) {
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += xv[(i * group + r) * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] /= T(group);
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>& gx = t.grad(xi);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t r = 0; r < group; ++r) {
        for (std::size_t c = 0; c < d; ++c) gx[(i * group + r) * d + c] += g[i * d + c] / T(group);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  const std::size_t xi = x.id;
  return x.tape->record(Tensor<T>({1}, {total}), {x}, [=](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>& gx = t.grad(xi);
    for (T& v : gx) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

inline constexpr double kProbClamp = 1e-7;

// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce_loss(Var<T> yhat, const std::vector<T>& labels) {
  const Tensor<T>& p = yhat.value();
  if (p.size() != labels.size()) {
    throw DimensionError("bce_loss: " + std::to_string(p.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (T y : labels) {
    if (y != T(0) && y != T(1)) throw ValidationError("bce_loss: labels must be 0 or 1");
  }
  const T lo = T(kProbClamp), hi = T(1) - T(kProbClamp);
  const std::size_t n = p.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(p[i], lo, hi);
    total -= labels[i] * std::log(q) + (T(1) - labels[i]) * std::log(T(1) - q);
  }
  const std::size_t pi = yhat.id;
  return yhat.tape->record(Tensor<T>({1}, {total / T(n)}), {yhat},
                           [=, labels = labels](Tape<T>& t, const std::vector<T>& g) {
                             const Tensor<T>& pv = t.value(pi);
                             std::vector<T>& gp = t.grad(pi);
                             for (std::size_t i = 0; i < n; ++i) {
                               const T q = pv[i];
                               if (q < lo || q > hi) continue;
                               gp[i] += g[0] * (q - labels[i]) / (q * (T(1) - q)) / T(n);
                             }
                           });
}

template <typename T>
Var<T> mse_loss(Var<T> pred, Var<T> target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.value().size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target.value()[i];
    total += d * d;
  }
  const std::size_t pi = pred.id, ti = target.id;
  return pred.tape->record(Tensor<T>({1}, {total / T(n)}), {pred, target},
                           [=](Tape<T>& t, const std::vector<T>& g) {
                             const Tensor<T>& pv = t.value(pi);
                             const Tensor<T>& tv = t.value(ti);
                             const T s = T(2) * g[0] / T(n);
                             if (t.needs_grad(pi)) {
                               std::vector<T>& gp = t.grad(pi);
                               for (std::size_t i = 0; i < n; ++i) gp[i] += s * (pv[i] - tv[i]);
                             }
                             if (t.needs_grad(ti)) {
                               std::vector<T>& gt = t.grad(ti);
                               for (std::size_t i = 0; i < n; ++i) gt[i] -= s * (pv[i] - tv[i]);
                             }
                           });
}

// ---------------------------------------------------------------------------
// Batched multi-head scaled dot-product attention core
// ---------------------------------------------------------------------------

// Softmax weights from one attention call, indexed [batch][head][query][key].
template <typename T>
struct AttentionWeights {
  std::size_t batch = 0, heads = 0, queries = 0, keys = 0;
  std::vector<T> weights;

  T at(std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
    return weights[((b * heads + h) * queries + q) * keys + k];
  }
};

// q: [batch·n_q × heads·d_k], k: [batch·n_kv × heads·d_k], v: [batch·n_kv × heads·d_v].
// Per sample and head: softmax(q kᵀ / √d_k) v, heads written side by side.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t heads,
                 AttentionWeights<T>* weights_out = nullptr) {
  detail::require_rank2(q, "attention");
  detail::require_rank2(k, "attention");
  detail::require_rank2(v, "attention");
  if (batch == 0 || heads == 0) throw DimensionError("attention: batch and heads must be positive");
  const std::size_t qw = q.cols(), vw = v.cols();
  if (k.cols() != qw || qw % heads != 0 || vw % heads != 0 || q.rows() % batch != 0 ||
      k.rows() % batch != 0 || v.rows() != k.rows()) {
    throw DimensionError("attention: incompatible shapes q" + shape_str(q.shape()) + " k" +
                         shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  const std::size_t nq = q.rows() / batch, nkv = k.rows() / batch;
  const std::size_t dk = qw / heads, dv = vw / heads;
  const T scale_f = T(1) / std::sqrt(T(dk));
  using Stride = Eigen::OuterStride<>;
  using CBlock = Eigen::Map<const MatRM<T>, 0, Stride>;
  using Block = Eigen::Map<MatRM<T>, 0, Stride>;
  const auto ei = [](std::size_t x) { return static_cast<Eigen::Index>(x); };

  std::vector<T> probs(batch * heads * nq * nkv);
  Tensor<T> out({batch * nq, vw});
  MatRM<T> scores;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      CBlock Q(q.value().data().data() + b * nq * qw + h * dk, ei(nq), ei(dk), Stride(ei(qw)));
      CBlock K(k.value().data().data() + b * nkv * qw + h * dk, ei(nkv), ei(dk), Stride(ei(qw)));
      CBlock V(v.value().data().data() + b * nkv * vw + h * dv, ei(nkv), ei(dv), Stride(ei(vw)));
      scores.noalias() = (Q * K.transpose()) * scale_f;
      MapMat<T> P(probs.data() + (b * heads + h) * nq * nkv, ei(nq), ei(nkv));
      for (Eigen::Index r = 0; r < ei(nq); ++r) {
        const T mx = scores.row(r).maxCoeff();
        T total = 0;
        for (Eigen::Index c = 0; c < ei(nkv); ++c) total += (P(r, c) = std::exp(scores(r, c) - mx));
        P.row(r) /= total;
      }
      Block O(out.data().data() + b * nq * vw + h * dv, ei(nq), ei(dv), Stride(ei(vw)));
      O.noalias() = P * V;
    }
  }
  if (weights_out) *weights_out = AttentionWeights<T>{batch, heads, nq, nkv, probs};

  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  return q.tape->record(
      std::move(out), {q, k, v},
      [=, probs = std::move(probs)](Tape<T>& t, const std::vector<T>& g) {
        const bool need_q = t.needs_grad(qi), need_k = t.needs_grad(ki), need_v = t.needs_grad(vi);
        T* gq = need_q ? t.grad(qi).data() : nullptr;
        T* gk = need_k ? t.grad(ki).data() : nullptr;
        T* gv = need_v ? t.grad(vi).data() : nullptr;
        MatRM<T> dP, dS;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            CBlock Q(t.value(qi).data().data() + b * nq * qw + h * dk, ei(nq), ei(dk),
                     Stride(ei(qw)));
            CBlock K(t.value(ki).data().data() + b * nkv * qw + h * dk, ei(nkv), ei(dk),
                     Stride(ei(qw)));
            CBlock V(t.value(vi).data().data() + b * nkv * vw + h * dv, ei(nkv), ei(dv),
                     Stride(ei(vw)));
            CBlock G(g.data() + b * nq * vw + h * dv, ei(nq), ei(dv), Stride(ei(vw)));
            CMapMat<T> P(probs.data() + (b * heads + h) * nq * nkv, ei(nq), ei(nkv));
            if (need_v) {
              Block GV(gv + b * nkv * vw + h * dv, ei(nkv), ei(dv), Stride(ei(vw)));
              GV.noalias() += P.transpose() * G;
            }
            if (!need_q && !need_k) continue;
            dP.noalias() = G * V.transpose();
            dS.resize(ei(nq), ei(nkv));
            for (Eigen::Index r = 0; r < ei(nq); ++r) {
              const T dot = dP.row(r).dot(P.row(r));
              for (Eigen::Index c = 0; c < ei(nkv); ++c) dS(r, c) = P(r, c) * (dP(r, c) - dot);
            }
            dS *= scale_f;
            if (need_q) {
              Block GQ(gq + b * nq * qw + h * dk, ei(nq), ei(dk), Stride(ei(qw)));
              GQ.noalias() += dS * K;
            }
            if (need_k) {
              Block GK(gk + b * nkv * qw + h * dk, ei(nkv), ei(dk), Stride(ei(qw)));
              GK.noalias() += dS.transpose() * Q;
            }
          }
        }
      });
}

}  // namespace attmix
