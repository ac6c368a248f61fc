#pragma once

// Differentiable primitives recorded on a Tape. Arrays are handled in their
// matrix view (rows x cols). Elementwise binary operations broadcast a
// dimension of size 1 against any size, numpy style.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rtify/diff/tape.hpp"

namespace rtify::diff {

namespace detail {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
ConstMatMap<T> as_matrix(const BasicArray<T>& a) {
  return ConstMatMap<T>(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
template <class T>
MatMap<T> as_matrix(BasicArray<T>& a) {
  return MatMap<T>(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + std::to_string(a) + " against " + std::to_string(b));
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  std::size_t a_index(std::size_t r, std::size_t c) const { return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c); }
  std::size_t b_index(std::size_t r, std::size_t c) const { return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c); }
};

template <class T>
Broadcast make_broadcast(const BasicArray<T>& a, const BasicArray<T>& b, const char* op) {
  Broadcast bc{};
  bc.ar = a.rows();
  bc.ac = a.cols();
  bc.br = b.rows();
  bc.bc = b.cols();
  bc.rows = broadcast_dim(bc.ar, bc.br, op);
  bc.cols = broadcast_dim(bc.ac, bc.bc, op);
  return bc;
}

/// Result shape of a broadcast: keeps an operand's full shape when it already
/// has the output size, otherwise the plain matrix shape.
template <class T>
Shape broadcast_shape(const BasicArray<T>& a, const BasicArray<T>& b, const Broadcast& bc) {
  if (a.rows() == bc.rows && a.cols() == bc.cols) return a.shape();
  if (b.rows() == bc.rows && b.cols() == bc.cols) return b.shape();
  return Shape{bc.rows, bc.cols};
}

template <class T, class F, class GA, class GB>
Var<T> binary(const char* op, const Var<T>& a, const Var<T>& b, F f, GA dfa, GB dfb) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const auto bc = make_broadcast(av, bv, op);
  BasicArray<T> out(broadcast_shape(av, bv, bc));
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      out[r * bc.cols + c] = f(av[bc.a_index(r, c)], bv[bc.b_index(r, c)]);
    }
  }
  return a.tape().record(op, std::move(out), {a, b}, [bc, dfa, dfb](const BackwardContext<T>& ctx) {
    const auto& x = *ctx.inputs[0];
    const auto& y = *ctx.inputs[1];
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        const T g = ctx.upstream[r * bc.cols + c];
        const auto ia = bc.a_index(r, c);
        const auto ib = bc.b_index(r, c);
        if (ctx.grads[0]) (*ctx.grads[0])[ia] += g * dfa(x[ia], y[ib]);
        if (ctx.grads[1]) (*ctx.grads[1])[ib] += g * dfb(x[ia], y[ib]);
      }
    }
  });
}

template <class T, class F, class DF>
Var<T> unary(const char* op, const Var<T>& a, F f, DF df) {
  const auto& av = a.value();
  BasicArray<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(op, std::move(out), {a}, [df](const BackwardContext<T>& ctx) {
    const auto& x = *ctx.inputs[0];
    auto& gx = *ctx.grads[0];
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += ctx.upstream[i] * df(x[i], ctx.output[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <class T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }

/// a * s + shift for compile-time-constant scalars (no gradient to s or shift).
template <class T>
Var<T> affine(const Var<T>& a, T s, T shift = T{0}) {
  return detail::unary(
      "affine", a, [s, shift](T x) { return x * s + shift; }, [s](T, T) { return s; });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) { return affine(a, s); }

template <class T>
Var<T> neg(const Var<T>& a) { return affine(a, T{-1}); }

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      "sigmoid", a, [](T x) { return T{1} / (T{1} + std::exp(-x)); }, [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// Matrix product of the matrix views of a (n x k) and b (k x m).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  BasicArray<T> out = BasicArray<T>::matrix(av.rows(), bv.cols());
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape().record("matmul", std::move(out), {a, b}, [](const BackwardContext<T>& ctx) {
    const auto g = detail::as_matrix(ctx.upstream);
    if (ctx.grads[0]) detail::as_matrix(*ctx.grads[0]).noalias() += g * detail::as_matrix(*ctx.inputs[1]).transpose();
    if (ctx.grads[1]) detail::as_matrix(*ctx.grads[1]).noalias() += detail::as_matrix(*ctx.inputs[0]).transpose() * g;
  });
}

/// Same data viewed with a new shape.
template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  auto out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](const BackwardContext<T>& ctx) {
    auto& g = *ctx.grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.upstream[i];
  });
}

/// Concatenation of matrix views along axis 0 (rows) or 1 (columns).
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    if (axis == 0) {
      if (p > 0 && v.cols() != cols) throw ShapeError("concat: column mismatch");
      cols = v.cols();
      rows += v.rows();
    } else {
      if (p > 0 && v.rows() != rows) throw ShapeError("concat: row mismatch");
      rows = v.rows();
      cols += v.cols();
    }
  }
  BasicArray<T> out = BasicArray<T>::matrix(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0) out(offset + r, c) = v(r, c);
        else out(r, offset + c) = v(r, c);
      }
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  return parts.front().tape().record("concat", std::move(out), parts, [axis](const BackwardContext<T>& ctx) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ctx.inputs.size(); ++p) {
      const auto& v = *ctx.inputs[p];
      if (auto* g = ctx.grads[p]) {
        for (std::size_t r = 0; r < v.rows(); ++r) {
          for (std::size_t c = 0; c < v.cols(); ++c) {
            (*g)(r, c) += axis == 0 ? ctx.upstream(offset + r, c) : ctx.upstream(r, offset + c);
          }
        }
      }
      offset += axis == 0 ? v.rows() : v.cols();
    }
  });
}

/// Rows [begin, end) (axis 0) or columns [begin, end) (axis 1) of the matrix view.
template <class T>
Var<T> slice(const Var<T>& a, int axis, std::size_t begin, std::size_t end) {
  const auto& v = a.value();
  const auto extent = axis == 0 ? v.rows() : v.cols();
  if ((axis != 0 && axis != 1) || begin > end || end > extent) {
    throw ShapeError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " +
                     shape_string(v.shape()));
  }
  const std::size_t rows = axis == 0 ? end - begin : v.rows();
  const std::size_t cols = axis == 1 ? end - begin : v.cols();
  BasicArray<T> out = BasicArray<T>::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = axis == 0 ? v(begin + r, c) : v(r, begin + c);
    }
  }
  return a.tape().record("slice", std::move(out), {a}, [axis, begin, rows, cols](const BackwardContext<T>& ctx) {
    auto& g = *ctx.grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (axis == 0) g(begin + r, c) += ctx.upstream(r, c);
        else g(r, begin + c) += ctx.upstream(r, c);
      }
    }
  });
}

/// Sum of all elements (1x1).
template <class T>
Var<T> sum(const Var<T>& a) {
  const auto& v = a.value();
  double acc = 0.0;
  for (auto x : v.values()) acc += static_cast<double>(x);
  return a.tape().record("sum", BasicArray<T>::scalar(static_cast<T>(acc)), {a}, [](const BackwardContext<T>& ctx) {
    const T g = ctx.upstream[0];
    for (auto& x : ctx.grads[0]->values()) x += g;
  });
}

/// Sum over rows (axis 0, result 1 x cols) or over columns (axis 1, result rows x 1).
template <class T>
Var<T> sum(const Var<T>& a, int axis) {
  const auto& v = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  const std::size_t rows = v.rows(), cols = v.cols();
  BasicArray<T> out = axis == 0 ? BasicArray<T>::matrix(1, cols) : BasicArray<T>::matrix(rows, 1);
  if (axis == 0) {
    std::vector<double> acc(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) acc[c] += v(r, c);
    for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<T>(acc[c]);
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += v(r, c);
      out[r] = static_cast<T>(acc);
    }
  }
  return a.tape().record("sum_axis", std::move(out), {a}, [axis, rows, cols](const BackwardContext<T>& ctx) {
    auto& g = *ctx.grads[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += ctx.upstream[axis == 0 ? c : r];
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const auto n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), T{1} / static_cast<T>(n));
}

template <class T>
Var<T> mean(const Var<T>& a, int axis) {
  const auto& v = a.value();
  const auto n = axis == 0 ? v.rows() : v.cols();
  if (n == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), T{1} / static_cast<T>(n));
}

/// Row-wise softmax over the last dimension.
template <class T>
Var<T> softmax(const Var<T>& a) {
  const auto& v = a.value();
  BasicArray<T> out(v.shape());
  const auto rows = v.rows(), cols = v.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, v(r, c));
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (out(r, c) = std::exp(v(r, c) - mx));
    for (std::size_t c = 0; c < cols; ++c) out(r, c) /= z;
  }
  return a.tape().record("softmax", std::move(out), {a}, [rows, cols](const BackwardContext<T>& ctx) {
    auto& g = *ctx.grads[0];
    const auto& y = ctx.output;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += ctx.upstream(r, c) * y(r, c);
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += y(r, c) * (ctx.upstream(r, c) - dot);
    }
  });
}

/// Row-wise log-softmax, stable for large logits.
template <class T>
Var<T> log_softmax(const Var<T>& a) {
  const auto& v = a.value();
  BasicArray<T> out(v.shape());
  const auto rows = v.rows(), cols = v.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, v(r, c));
    T z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(v(r, c) - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = v(r, c) - lse;
  }
  return a.tape().record("log_softmax", std::move(out), {a}, [rows, cols](const BackwardContext<T>& ctx) {
    auto& g = *ctx.grads[0];
    const auto& y = ctx.output;
    for (std::size_t r = 0; r < rows; ++r) {
      T total = 0;
      for (std::size_t c = 0; c < cols; ++c) total += ctx.upstream(r, c);
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += ctx.upstream(r, c) - std::exp(y(r, c)) * total;
    }
  });
}

/// Element picked from one of several same-shaped sources per output row:
/// out[i] = sources[picks[i].source](picks[i].row, picks[i].col). Result is n x 1.
struct Pick {
  std::size_t source;
  std::size_t row;
  std::size_t col;
};

template <class T>
Var<T> gather(const std::vector<Var<T>>& sources, const std::vector<Pick>& picks) {
  if (sources.empty()) throw ShapeError("gather: no sources");
  BasicArray<T> out = BasicArray<T>::matrix(picks.size(), 1);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& p = picks[i];
    if (p.source >= sources.size()) throw ShapeError("gather: source index out of range");
    const auto& v = sources[p.source].value();
    if (p.row >= v.rows() || p.col >= v.cols()) throw ShapeError("gather: element index out of range");
    out[i] = v(p.row, p.col);
  }
  return sources.front().tape().record("gather", std::move(out), sources, [picks](const BackwardContext<T>& ctx) {
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto& p = picks[i];
      if (auto* g = ctx.grads[p.source]) (*g)(p.row, p.col) += ctx.upstream[i];
    }
  });
}

/// Passes `x` through unchanged; the backward sweep calls `vjp(upstream)`
/// instead of the identity and adds its result to x's gradient.
template <class T>
using VjpRule = std::function<BasicArray<T>(const BasicArray<T>& upstream)>;

template <class T>
Var<T> custom_grad(const Var<T>& x, VjpRule<T> vjp) {
  return x.tape().record("custom_grad", x.value(), {x}, [vjp = std::move(vjp)](const BackwardContext<T>& ctx) {
    const auto g = vjp(ctx.upstream);
    auto& gx = *ctx.grads[0];
    if (g.size() != gx.size() || g.cols() != gx.cols()) {
      throw ShapeError("custom_grad: rule returned " + shape_string(g.shape()) + " for operand " +
                       shape_string(gx.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Node with an arbitrary forward value and a user rule mapping the upstream
/// gradient to one gradient per input.
template <class T>
using MultiVjpRule = std::function<std::vector<BasicArray<T>>(const BasicArray<T>& upstream)>;

template <class T>
Var<T> custom_op(std::string_view name, BasicArray<T> value, const std::vector<Var<T>>& inputs, MultiVjpRule<T> vjp) {
  if (inputs.empty()) throw ShapeError(std::string(name) + ": custom op needs at least one input");
  return inputs.front().tape().record(
      name, std::move(value), inputs, [vjp = std::move(vjp), label = std::string(name)](const BackwardContext<T>& ctx) {
        const auto gs = vjp(ctx.upstream);
        if (gs.size() != ctx.inputs.size()) {
          throw ShapeError(label + ": rule returned " + std::to_string(gs.size()) + " gradients for " +
                           std::to_string(ctx.inputs.size()) + " inputs");
        }
        for (std::size_t k = 0; k < gs.size(); ++k) {
          auto* gx = ctx.grads[k];
          if (!gx) continue;
          if (gs[k].size() != gx->size() || gs[k].cols() != gx->cols()) {
            throw ShapeError(label + ": rule returned " + shape_string(gs[k].shape()) + " for operand " +
                             shape_string(gx->shape()));
          }
          for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += gs[k][i];
        }
      });
}

/// Mean cross-entropy of row-wise logits against integer labels.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const auto& v = logits.value();
  if (labels.size() != v.rows()) throw ShapeError("cross_entropy: label count does not match rows");
  BasicArray<T> onehot = BasicArray<T>::matrix(v.rows(), v.cols());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= v.cols()) {
      throw ShapeError("cross_entropy: label out of range");
    }
    onehot(r, static_cast<std::size_t>(labels[r])) = T{1};
  }
  auto& tape = logits.tape();
  auto picked = sum(mul(log_softmax(logits), tape.constant(std::move(onehot))));
  return scale(picked, T{-1} / static_cast<T>(labels.size()));
}

}  // namespace rtify::diff
