// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records every operation applied to its Vars in construction order,
// which is already a topological order. backward() walks the tape once in
// reverse. Everything is templated on the scalar type: float for training,
// double for gradient verification.
//
// Tensors are rank-2 (rows x cols). Vectors are 1 x n, scalars 1 x 1. There is
// no implicit broadcasting except tensor-scalar ops; row broadcasts go through
// add_bias() explicitly.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace segalign {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "," + std::to_string(s.cols) + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, Shape a, Shape b)
      : std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                              to_string(b)) {}
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename Scalar>
class Graph;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Mat<Scalar>& value() const { return graph_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Shape shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return graph_->requires_grad(id_); }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item", shape(), Shape{1, 1});
    return value()(0, 0);
  }

 private:
  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Graph {
 public:
  using Matrix = Mat<Scalar>;
  // Receives the graph, the id of the node being differentiated and its
  // output gradient; accumulates into the inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t, const Matrix&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(Matrix value, bool requires_grad = false) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  // Non-owning leaf. The referenced matrix must outlive the graph and must not
  // change while the graph is alive.
  Var<Scalar> leaf_ref(const Matrix& value, bool requires_grad = false) {
    Node n;
    n.ext = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<Scalar> record(Matrix value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var<Scalar> record(Matrix value, std::span<const Var<Scalar>> inputs, BackwardFn fn) {
    Node n;
    n.own = std::move(value);
    for (const auto& in : inputs) {
      if (&in.graph() != this) throw std::logic_error("record: input belongs to another graph");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  void backward(Var<Scalar> loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
      throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
    if (!nodes_[loss.id()].requires_grad) return;
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, i, n.grad);
    }
  }

  bool has_grad(Var<Scalar> v) const { return nodes_[v.id()].has_grad; }

  // Zero matrix when nothing flowed into v.
  Matrix grad(Var<Scalar> v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    const Matrix& val = value(v.id());
    return Matrix::Zero(val.rows(), val.cols());
  }

  void zero_grad() {
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
  }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(std::string_view op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename Scalar>
void require_same_graph(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands belong to different graphs");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape("add", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.value() + b.value(), {a, b},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go);
                            g.accumulate(ib, go);
                          });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape("sub", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.value() - b.value(), {a, b},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go);
                            g.accumulate(ib, -go);
                          });
}

// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_graph(a, b);
  detail::require_same_shape("mul", a, b);
  const auto ia = a.id(), ib = b.id();
  return a.graph().record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go.cwiseProduct(g.value(ib)));
                            g.accumulate(ib, go.cwiseProduct(g.value(ia)));
                          });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  const auto ia = a.id();
  return a.graph().record(a.value() * s, {a},
                          [ia, s](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go * s);
                          });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar s) {
  const auto ia = a.id();
  return a.graph().record(a.value().array() + s, {a},
                          [ia](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go);
                          });
}

template <typename Scalar>
Var<Scalar> neg(Var<Scalar> a) {
  return scale(a, Scalar(-1));
}

// a * s where s is a 1x1 tensor.
template <typename Scalar>
Var<Scalar> scale_by(Var<Scalar> a, Var<Scalar> s) {
  detail::require_same_graph(a, s);
  if (s.shape() != Shape{1, 1}) throw ShapeError("scale_by", a.shape(), s.shape());
  const auto ia = a.id(), is = s.id();
  return a.graph().record(a.value() * s.item(), {a, s},
                          [ia, is](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go * g.value(is)(0, 0));
                            Mat<Scalar> gs(1, 1);
                            gs(0, 0) = go.cwiseProduct(g.value(ia)).sum();
                            g.accumulate(is, gs);
                          });
}

// a + broadcast(bias) over rows; bias is 1 x cols.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> a, Var<Scalar> bias) {
  detail::require_same_graph(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw ShapeError("add_bias", a.shape(), bias.shape());
  const auto ia = a.id(), ib = bias.id();
  Mat<Scalar> out = a.value();
  out.rowwise() += bias.value().row(0);
  return a.graph().record(std::move(out), {a, bias},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go);
                            g.accumulate(ib, go.colwise().sum());
                          });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  return sub(a, b);
}
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Scalar s) {
  return scale(a, s);
}
template <typename Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> a) {
  return scale(a, s);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_graph(a, b);
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value() * b.value();
  return a.graph().record(std::move(out), {a, b},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            if (g.requires_grad(ia)) g.accumulate(ia, go * g.value(ib).transpose());
                            if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * go);
                          });
}

// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_graph(a, b);
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt", a.shape(), b.shape());
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value() * b.value().transpose();
  return a.graph().record(std::move(out), {a, b},
                          [ia, ib](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            if (g.requires_grad(ia)) g.accumulate(ia, go * g.value(ib));
                            if (g.requires_grad(ib)) g.accumulate(ib, go.transpose() * g.value(ia));
                          });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  const auto ia = a.id();
  Mat<Scalar> out = a.value().transpose();
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go.transpose());
                          });
}

// 1-D convolution along rows, kernel 3, zero "same" padding.
// x: T x c_in, weight: (3 * c_in) x c_out with tap k applied to row t + k - 1.
template <typename Scalar>
Var<Scalar> conv1d(Var<Scalar> x, Var<Scalar> weight) {
  detail::require_same_graph(x, weight);
  const Eigen::Index t_len = x.rows(), c_in = x.cols();
  if (weight.rows() != 3 * c_in) throw ShapeError("conv1d", x.shape(), weight.shape());
  Mat<Scalar> cols = Mat<Scalar>::Zero(t_len, 3 * c_in);
  const auto& xv = x.value();
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (Eigen::Index k = 0; k < 3; ++k) {
      const Eigen::Index src = t + k - 1;
      if (src < 0 || src >= t_len) continue;
      cols.block(t, k * c_in, 1, c_in) = xv.row(src);
    }
  }
  Mat<Scalar> out = cols * weight.value();
  const auto ix = x.id(), iw = weight.id();
  return x.graph().record(
      std::move(out), {x, weight},
      [ix, iw, cols = std::move(cols), t_len, c_in](Graph<Scalar>& g, std::size_t,
                                                     const Mat<Scalar>& go) {
        if (g.requires_grad(iw)) g.accumulate(iw, cols.transpose() * go);
        if (!g.requires_grad(ix)) return;
        const Mat<Scalar> gcols = go * g.value(iw).transpose();
        Mat<Scalar> gx = Mat<Scalar>::Zero(t_len, c_in);
        for (Eigen::Index t = 0; t < t_len; ++t) {
          for (Eigen::Index k = 0; k < 3; ++k) {
            const Eigen::Index src = t + k - 1;
            if (src < 0 || src >= t_len) continue;
            gx.row(src) += gcols.block(t, k * c_in, 1, c_in);
          }
        }
        g.accumulate(ix, gx);
      });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  const auto ia = a.id();
  Mat<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t self, const Mat<Scalar>& go) {
                            const auto& y = g.value(self);
                            g.accumulate(ia, (y.array() > Scalar(0)).select(go, Scalar(0)));
                          });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  const auto ia = a.id();
  Mat<Scalar> out = a.value().array().exp().matrix();
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t self, const Mat<Scalar>& go) {
                            g.accumulate(ia, go.cwiseProduct(g.value(self)));
                          });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  const auto& v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (!(v(i, j) > Scalar(0))) {
        std::ostringstream msg;
        msg << "log: non-positive input " << v(i, j) << " at (" << i << "," << j << ")";
        throw DomainError(msg.str());
      }
    }
  }
  const auto ia = a.id();
  Mat<Scalar> out = v.array().log().matrix();
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go.cwiseQuotient(g.value(ia)));
                          });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  const auto ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().record(std::move(out), {a},
                          [ia, r, c](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, Mat<Scalar>::Constant(r, c, go(0, 0)));
                          });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

// Column-wise mean over rows: R x C -> 1 x C.
template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> a) {
  const auto ia = a.id();
  const Eigen::Index r = a.rows();
  Mat<Scalar> out = a.value().colwise().mean();
  return a.graph().record(std::move(out), {a},
                          [ia, r](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            g.accumulate(ia, go.replicate(r, 1) / static_cast<Scalar>(r));
                          });
}

// Row maxima: R x C -> R x 1. Gradient goes to the first maximal column.
template <typename Scalar>
Var<Scalar> max_rows(Var<Scalar> a) {
  const auto& v = a.value();
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.rows()));
  Mat<Scalar> out(v.rows(), 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < v.cols(); ++j)
      if (v(i, j) > v(i, best)) best = j;
    arg[static_cast<std::size_t>(i)] = best;
    out(i, 0) = v(i, best);
  }
  const auto ia = a.id();
  const Eigen::Index r = v.rows(), c = v.cols();
  return a.graph().record(std::move(out), {a},
                          [ia, r, c, arg = std::move(arg)](Graph<Scalar>& g, std::size_t,
                                                           const Mat<Scalar>& go) {
                            Mat<Scalar> ga = Mat<Scalar>::Zero(r, c);
                            for (Eigen::Index i = 0; i < r; ++i)
                              ga(i, arg[static_cast<std::size_t>(i)]) = go(i, 0);
                            g.accumulate(ia, ga);
                          });
}

// ---------------------------------------------------------------------------
// Softmax family (max-subtracted)

template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  const auto& v = a.value();
  Mat<Scalar> out = (v.colwise() - v.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t self, const Mat<Scalar>& go) {
                            const auto& s = g.value(self);
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
                                go.cwiseProduct(s).rowwise().sum();
                            Mat<Scalar> ga = go;
                            ga.colwise() -= dot;
                            g.accumulate(ia, ga.cwiseProduct(s));
                          });
}

template <typename Scalar>
Var<Scalar> log_softmax_rows(Var<Scalar> a) {
  const auto& v = a.value();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mx = v.rowwise().maxCoeff();
  Mat<Scalar> shifted = v.colwise() - mx;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse =
      shifted.array().exp().rowwise().sum().log().matrix();
  Mat<Scalar> out = shifted.colwise() - lse;
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia](Graph<Scalar>& g, std::size_t self, const Mat<Scalar>& go) {
                            const Mat<Scalar> s = g.value(self).array().exp().matrix();
                            Mat<Scalar> ga = s;
                            ga.array().colwise() *= go.rowwise().sum().array();
                            g.accumulate(ia, go - ga);
                          });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    detail::require_same_graph(parts[0], p);
    if (p.cols() != c) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
    r += p.rows();
  }
  Mat<Scalar> out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    slots.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].graph().record(
      std::move(out), parts, [slots = std::move(slots)](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
        for (const auto& [id, offset] : slots)
          g.accumulate(id, go.middleRows(offset, g.value(id).rows()));
      });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    detail::require_same_graph(parts[0], p);
    if (p.rows() != r) throw ShapeError("concat_cols", parts[0].shape(), p.shape());
    c += p.cols();
  }
  Mat<Scalar> out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    slots.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].graph().record(
      std::move(out), parts, [slots = std::move(slots)](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
        for (const auto& [id, offset] : slots)
          g.accumulate(id, go.middleCols(offset, g.value(id).cols()));
      });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::initializer_list<Var<Scalar>> parts) {
  return concat_rows(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}
template <typename Scalar>
Var<Scalar> concat_cols(std::initializer_list<Var<Scalar>> parts) {
  return concat_cols(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 1 || begin + count > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + to_string(a.shape()));
  const auto ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out = a.value().middleRows(begin, count);
  return a.graph().record(std::move(out), {a},
                          [ia, r, c, begin, count](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            Mat<Scalar> ga = Mat<Scalar>::Zero(r, c);
                            ga.middleRows(begin, count) = go;
                            g.accumulate(ia, ga);
                          });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 1 || begin + count > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + to_string(a.shape()));
  const auto ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out = a.value().middleCols(begin, count);
  return a.graph().record(std::move(out), {a},
                          [ia, r, c, begin, count](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            Mat<Scalar> ga = Mat<Scalar>::Zero(r, c);
                            ga.middleCols(begin, count) = go;
                            g.accumulate(ia, ga);
                          });
}

// out.row(i) = a.row(indices[i]); repeated indices accumulate in backward.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> a, std::vector<Eigen::Index> indices) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out(static_cast<Eigen::Index>(indices.size()), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= r)
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " outside " + to_string(a.shape()));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(indices[i]);
  }
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia, r, c, indices = std::move(indices)](Graph<Scalar>& g, std::size_t,
                                                                   const Mat<Scalar>& go) {
                            Mat<Scalar> ga = Mat<Scalar>::Zero(r, c);
                            for (std::size_t i = 0; i < indices.size(); ++i)
                              ga.row(indices[i]) += go.row(static_cast<Eigen::Index>(i));
                            g.accumulate(ia, ga);
                          });
}

// Picks a[rows[i], cols[i]] into an out_rows x out_cols result, row-major.
template <typename Scalar>
Var<Scalar> gather_elements(Var<Scalar> a, std::vector<Eigen::Index> rows, std::vector<Eigen::Index> cols,
                            Eigen::Index out_rows, Eigen::Index out_cols) {
  if (rows.size() != cols.size() || static_cast<Eigen::Index>(rows.size()) != out_rows * out_cols)
    throw ShapeError("gather_elements: index count does not match output shape " +
                     to_string(Shape{out_rows, out_cols}));
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out(out_rows, out_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= r || cols[i] < 0 || cols[i] >= c)
      throw ShapeError("gather_elements: (" + std::to_string(rows[i]) + "," + std::to_string(cols[i]) +
                       ") outside " + to_string(a.shape()));
    out.data()[i] = a.value()(rows[i], cols[i]);
  }
  const auto ia = a.id();
  return a.graph().record(
      std::move(out), {a},
      [ia, r, c, rows = std::move(rows), cols = std::move(cols)](Graph<Scalar>& g, std::size_t,
                                                                  const Mat<Scalar>& go) {
        Mat<Scalar> ga = Mat<Scalar>::Zero(r, c);
        for (std::size_t i = 0; i < rows.size(); ++i) ga(rows[i], cols[i]) += go.data()[i];
        g.accumulate(ia, ga);
      });
}

// Forward: identical copy. Backward: nothing.
template <typename Scalar>
Var<Scalar> stop_gradient(Var<Scalar> a) {
  return a.graph().leaf(a.value(), false);
}

// Forward value is `hard` exactly; the gradient flows into `soft` unchanged.
// Equivalent to soft + stop_gradient(hard - soft) without the rounding of the
// add/subtract round trip.
template <typename Scalar>
Var<Scalar> straight_through(Var<Scalar> soft, Var<Scalar> hard) {
  detail::require_same_graph(soft, hard);
  detail::require_same_shape("straight_through", soft, hard);
  const auto is = soft.id();
  return soft.graph().record(hard.value(), {soft},
                             [is](Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                               g.accumulate(is, go);
                             });
}

// ---------------------------------------------------------------------------
// Normalization and similarity

template <typename Scalar>
Var<Scalar> l2_normalize_rows(Var<Scalar> a) {
  const auto& v = a.value();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = v.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > Scalar(0)))
      throw DomainError("l2_normalize: row " + std::to_string(i) + " has zero norm");
  Mat<Scalar> out = v.array().colwise() / norms.array();
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia, norms = std::move(norms)](Graph<Scalar>& g, std::size_t self,
                                                         const Mat<Scalar>& go) {
                            const auto& y = g.value(self);
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
                                go.cwiseProduct(y).rowwise().sum();
                            Mat<Scalar> ga = y;
                            ga.array().colwise() *= dot.array();
                            ga = go - ga;
                            ga.array().colwise() /= norms.array();
                            g.accumulate(ia, ga);
                          });
}

// Cosine similarity of two 1 x n vectors -> 1 x 1.
template <typename Scalar>
Var<Scalar> cosine_similarity(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("cosine_similarity", a, b);
  if (a.rows() != 1) throw ShapeError("cosine_similarity: expects row vectors, got " + to_string(a.shape()));
  return sum(mul(l2_normalize_rows(a), l2_normalize_rows(b)));
}

// Pairwise row cosines: (Ra x d, Rb x d) -> Ra x Rb.
template <typename Scalar>
Var<Scalar> cosine_matrix(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_matrix", a.shape(), b.shape());
  return matmul_nt(l2_normalize_rows(a), l2_normalize_rows(b));
}

// Per-row standardization without affine parameters.
template <typename Scalar>
Var<Scalar> layer_norm_rows(Var<Scalar> a, Scalar eps = Scalar(1e-5)) {
  const auto& v = a.value();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu = v.rowwise().mean();
  Mat<Scalar> centered = v.colwise() - mu;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std =
      (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Mat<Scalar> out = centered.array().colwise() * inv_std.array();
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia, inv_std = std::move(inv_std)](Graph<Scalar>& g, std::size_t self,
                                                             const Mat<Scalar>& go) {
                            const auto& y = g.value(self);
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mg = go.rowwise().mean();
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mgy =
                                go.cwiseProduct(y).rowwise().mean();
                            Mat<Scalar> ga = go.colwise() - mg;
                            Mat<Scalar> yy = y;
                            yy.array().colwise() *= mgy.array();
                            ga -= yy;
                            ga.array().colwise() *= inv_std.array();
                            g.accumulate(ia, ga);
                          });
}

// Mean of contiguous row segments. starts[0] == 0, strictly increasing, each
// segment runs to the next start (last one to the end). Implemented as a
// single scatter pass over rows.
template <typename Scalar>
Var<Scalar> segment_mean(Var<Scalar> a, const std::vector<Eigen::Index>& starts) {
  const Eigen::Index len = a.rows(), c = a.cols();
  if (starts.empty() || starts.front() != 0)
    throw ShapeError("segment_mean: starts must begin at 0");
  for (std::size_t j = 1; j < starts.size(); ++j)
    if (starts[j] <= starts[j - 1] || starts[j] >= len)
      throw ShapeError("segment_mean: starts not strictly increasing within " + to_string(a.shape()));
  const auto m = static_cast<Eigen::Index>(starts.size());
  std::vector<Eigen::Index> seg_of(static_cast<std::size_t>(len));
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> counts = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(m);
  {
    Eigen::Index j = 0;
    for (Eigen::Index t = 0; t < len; ++t) {
      if (j + 1 < m && t == starts[static_cast<std::size_t>(j + 1)]) ++j;
      seg_of[static_cast<std::size_t>(t)] = j;
      counts(j) += Scalar(1);
    }
  }
  Mat<Scalar> out = Mat<Scalar>::Zero(m, c);
  const auto& v = a.value();
  for (Eigen::Index t = 0; t < len; ++t) out.row(seg_of[static_cast<std::size_t>(t)]) += v.row(t);
  out.array().colwise() /= counts.array();
  const auto ia = a.id();
  return a.graph().record(std::move(out), {a},
                          [ia, len, c, seg_of = std::move(seg_of), counts = std::move(counts)](
                              Graph<Scalar>& g, std::size_t, const Mat<Scalar>& go) {
                            Mat<Scalar> ga(len, c);
                            for (Eigen::Index t = 0; t < len; ++t) {
                              const auto j = seg_of[static_cast<std::size_t>(t)];
                              ga.row(t) = go.row(j) / counts(j);
                            }
                            g.accumulate(ia, ga);
                          });
}

// Cast a matrix between scalar types.
template <typename To, typename From>
Mat<To> cast(const Mat<From>& m) {
  return m.template cast<To>();
}

}  // namespace segalign
