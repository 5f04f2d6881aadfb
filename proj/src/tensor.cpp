#include "semmod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semmod/errors.hpp"

namespace semmod {

namespace detail {

// Private bridge between the operation implementations below and Tape's
// node storage. Closures capture node indices, never references: the node
// vector reallocates as the tape grows.
struct TapeOps {
  static std::size_t next_index(const Tape& t) { return t.nodes_.size(); }
  static Tensor emit(Tape& t, Shape shape, std::vector<double> value, bool requires_grad,
                     std::function<void(Tape&)> pull) {
    Tape::Node node;
    node.shape = shape;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.pull = std::move(pull);
    t.nodes_.push_back(std::move(node));
    return Tensor(&t, t.nodes_.size() - 1);
  }
  static const std::vector<double>& val(const Tape& t, std::size_t i) { return t.nodes_[i].value; }
  static std::vector<double>& grad(Tape& t, std::size_t i) { return t.nodes_[i].grad; }
  static bool rg(const Tape& t, std::size_t i) { return t.nodes_[i].requires_grad; }
  static const Shape& shape(const Tape& t, std::size_t i) { return t.nodes_[i].shape; }
  static std::size_t index(const Tensor& t) { return t.index_; }
};

}  // namespace detail

using detail::TapeOps;

// Tensor accessors ----------------------------------------------------------

Tape& Tensor::owner() const {
  if (!valid()) throw ContractViolation("owner: invalid tensor handle");
  return *tape_;
}
const Shape& Tensor::shape() const { return TapeOps::shape(*tape_, index_); }
double Tensor::operator[](std::size_t i) const { return TapeOps::val(*tape_, index_)[i]; }
double Tensor::at(std::size_t r, std::size_t c) const {
  return TapeOps::val(*tape_, index_)[r * shape().d1 + c];
}
const std::vector<double>& Tensor::values() const { return TapeOps::val(*tape_, index_); }
Array Tensor::to_array() const { return Array{shape(), values()}; }
bool Tensor::requires_grad() const { return TapeOps::rg(*tape_, index_); }
const std::vector<double>& Tensor::grad() const { return TapeOps::grad(*tape_, index_); }

Array Array::mat(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols)
    throw ContractViolation("Array::mat: value count does not match extents");
  return Array{Shape::mat(rows, cols), std::move(values)};
}

// Tape ----------------------------------------------------------------------

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.rank != 1 && shape.rank != 2) throw ContractViolation("leaf: rank must be 1 or 2");
  if (shape.rank == 1 && shape.d1 != 1) throw ContractViolation("leaf: rank-1 shape with d1 != 1");
  if (values.size() != shape.size())
    throw ContractViolation("leaf: value count does not match shape");
  return TapeOps::emit(*this, shape, std::move(values), requires_grad, nullptr);
}

Tensor Tape::leaf(const Array& a, bool requires_grad) { return leaf(a.shape, a.data, requires_grad); }

Tensor Tape::scalar(double v) { return leaf(Shape::vec(1), {v}, false); }

void Tape::backward(const Tensor& root) {
  if (!root.valid() || root.tape_ != this)
    throw ContractViolation("backward: root does not belong to this tape");
  if (root.size() != 1) throw ContractViolation("backward: root must be a scalar");
  for (Node& n : nodes_) {
    if (n.requires_grad)
      n.grad.assign(n.value.size(), 0.0);
    else
      n.grad.clear();
  }
  if (!nodes_[root.index_].requires_grad) return;
  nodes_[root.index_].grad[0] = 1.0;
  for (std::size_t i = root.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.pull) n.pull(*this);
  }
}

void backward(const Tensor& loss) { loss.owner().backward(loss); }

// Operation helpers ---------------------------------------------------------

namespace {

Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (&a.owner() != &b.owner()) throw ContractViolation("operands live on different tapes");
  return a.owner();
}

Tape& tape(const Tensor& a) { return a.owner(); }

void require(bool cond, const char* msg) {
  if (!cond) throw ContractViolation(msg);
}

std::size_t index_of(const Tensor& t) { return TapeOps::index(t); }

}  // namespace

// Matrix products -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = same_tape(a, b);
  require(a.shape().rank == 2 && b.shape().rank == 2, "matmul: both operands must be rank 2");
  require(a.cols() == b.rows(), "matmul: inner extents disagree");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
      out[i * n + j] = acc;
    }
  const std::size_t ia = index_of(a), ib = index_of(b), self = TapeOps::next_index(t);
  return TapeOps::emit(
      t, Shape::mat(m, n), std::move(out), a.requires_grad() || b.requires_grad(),
      [=](Tape& tp) {
        const auto& g = TapeOps::grad(tp, self);
        const auto& A = TapeOps::val(tp, ia);
        const auto& B = TapeOps::val(tp, ib);
        if (TapeOps::rg(tp, ia)) {
          auto& ga = TapeOps::grad(tp, ia);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (TapeOps::rg(tp, ib)) {
          auto& gb = TapeOps::grad(tp, ib);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += A[i * k + p] * g[i * n + j];
              gb[p * n + j] += acc;
            }
        }
      });
}

Tensor vecmat(const Tensor& v, const Tensor& m) {
  Tape& t = same_tape(v, m);
  require(v.shape().rank == 1 && m.shape().rank == 2, "vecmat: expects vector x matrix");
  require(v.size() == m.rows(), "vecmat: extents disagree");
  const std::size_t k = v.size(), n = m.cols();
  const auto& vv = v.values();
  const auto& mv = m.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += vv[i] * mv[i * n + j];
    out[j] = acc;
  }
  const std::size_t iv = index_of(v), im = index_of(m), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(n), std::move(out), v.requires_grad() || m.requires_grad(),
                       [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         const auto& V = TapeOps::val(tp, iv);
                         const auto& M = TapeOps::val(tp, im);
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t i = 0; i < k; ++i) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += g[j] * M[i * n + j];
                             gv[i] += acc;
                           }
                         }
                         if (TapeOps::rg(tp, im)) {
                           auto& gm = TapeOps::grad(tp, im);
                           for (std::size_t i = 0; i < k; ++i)
                             for (std::size_t j = 0; j < n; ++j) gm[i * n + j] += V[i] * g[j];
                         }
                       });
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  Tape& t = same_tape(m, v);
  require(m.shape().rank == 2 && v.shape().rank == 1, "matvec: expects matrix x vector");
  require(m.cols() == v.size(), "matvec: extents disagree");
  const std::size_t r = m.rows(), k = m.cols();
  const auto& mv = m.values();
  const auto& vv = v.values();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += mv[i * k + j] * vv[j];
    out[i] = acc;
  }
  const std::size_t im = index_of(m), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(r), std::move(out), m.requires_grad() || v.requires_grad(),
                       [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         const auto& M = TapeOps::val(tp, im);
                         const auto& V = TapeOps::val(tp, iv);
                         if (TapeOps::rg(tp, im)) {
                           auto& gm = TapeOps::grad(tp, im);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < k; ++j) gm[i * k + j] += g[i] * V[j];
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t j = 0; j < k; ++j) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < r; ++i) acc += M[i * k + j] * g[i];
                             gv[j] += acc;
                           }
                         }
                       });
}

Tensor transpose(const Tensor& m) {
  Tape& t = tape(m);
  require(m.shape().rank == 2, "transpose: expects rank 2");
  const std::size_t r = m.rows(), c = m.cols();
  const auto& mv = m.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = mv[i * c + j];
  const std::size_t im = index_of(m), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::mat(c, r), std::move(out), m.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gm = TapeOps::grad(tp, im);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += g[j * r + i];
  });
}

// Elementwise ----------------------------------------------------------------

namespace {

enum class Bin { Add, Sub, Mul };

Tensor binary_same_shape(const Tensor& a, const Tensor& b, Bin op) {
  Tape& t = same_tape(a, b);
  require(a.shape() == b.shape(), "elementwise op: shapes disagree");
  const std::size_t n = a.size();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case Bin::Add: out[i] = av[i] + bv[i]; break;
      case Bin::Sub: out[i] = av[i] - bv[i]; break;
      case Bin::Mul: out[i] = av[i] * bv[i]; break;
    }
  }
  const std::size_t ia = index_of(a), ib = index_of(b), self = TapeOps::next_index(t);
  return TapeOps::emit(t, a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                       [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         const auto& A = TapeOps::val(tp, ia);
                         const auto& B = TapeOps::val(tp, ib);
                         if (TapeOps::rg(tp, ia)) {
                           auto& ga = TapeOps::grad(tp, ia);
                           for (std::size_t i = 0; i < n; ++i)
                             ga[i] += op == Bin::Mul ? g[i] * B[i] : g[i];
                         }
                         if (TapeOps::rg(tp, ib)) {
                           auto& gb = TapeOps::grad(tp, ib);
                           for (std::size_t i = 0; i < n; ++i) {
                             switch (op) {
                               case Bin::Add: gb[i] += g[i]; break;
                               case Bin::Sub: gb[i] -= g[i]; break;
                               case Bin::Mul: gb[i] += g[i] * A[i]; break;
                             }
                           }
                         }
                       });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_same_shape(a, b, Bin::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_same_shape(a, b, Bin::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_same_shape(a, b, Bin::Mul); }

Tensor scale(const Tensor& x, double c) {
  Tape& t = tape(x);
  const std::size_t n = x.size();
  const auto& xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * c;
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, x.shape(), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c;
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  Tape& t = tape(x);
  const std::size_t n = x.size();
  const auto& xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] + c;
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, x.shape(), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
  });
}

// Row / column broadcasts ----------------------------------------------------

namespace {

enum class RowOp { Scale, Div, Add, Sub };

Tensor row_broadcast(const Tensor& m, const Tensor& v, RowOp op) {
  Tape& t = same_tape(m, v);
  require(m.shape().rank == 2 && v.shape().rank == 1, "row broadcast: expects matrix and vector");
  require(v.size() == m.rows(), "row broadcast: vector length must equal row count");
  const std::size_t r = m.rows(), c = m.cols();
  const auto& mv = m.values();
  const auto& vv = v.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double x = mv[i * c + j];
      switch (op) {
        case RowOp::Scale: out[i * c + j] = x * vv[i]; break;
        case RowOp::Div: out[i * c + j] = x / vv[i]; break;
        case RowOp::Add: out[i * c + j] = x + vv[i]; break;
        case RowOp::Sub: out[i * c + j] = x - vv[i]; break;
      }
    }
  const std::size_t im = index_of(m), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                       [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         const auto& M = TapeOps::val(tp, im);
                         const auto& V = TapeOps::val(tp, iv);
                         if (TapeOps::rg(tp, im)) {
                           auto& gm = TapeOps::grad(tp, im);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) {
                               switch (op) {
                                 case RowOp::Scale: gm[i * c + j] += g[i * c + j] * V[i]; break;
                                 case RowOp::Div: gm[i * c + j] += g[i * c + j] / V[i]; break;
                                 case RowOp::Add:
                                 case RowOp::Sub: gm[i * c + j] += g[i * c + j]; break;
                               }
                             }
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t i = 0; i < r; ++i) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < c; ++j) {
                               double gij = g[i * c + j];
                               switch (op) {
                                 case RowOp::Scale: acc += gij * M[i * c + j]; break;
                                 case RowOp::Div: acc -= gij * M[i * c + j] / (V[i] * V[i]); break;
                                 case RowOp::Add: acc += gij; break;
                                 case RowOp::Sub: acc -= gij; break;
                               }
                             }
                             gv[i] += acc;
                           }
                         }
                       });
}

enum class ColOp { Scale, Add };

Tensor col_broadcast(const Tensor& m, const Tensor& v, ColOp op) {
  Tape& t = same_tape(m, v);
  require(m.shape().rank == 2 && v.shape().rank == 1, "column broadcast: expects matrix and vector");
  require(v.size() == m.cols(), "column broadcast: vector length must equal column count");
  const std::size_t r = m.rows(), c = m.cols();
  const auto& mv = m.values();
  const auto& vv = v.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = op == ColOp::Scale ? mv[i * c + j] * vv[j] : mv[i * c + j] + vv[j];
  const std::size_t im = index_of(m), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, m.shape(), std::move(out), m.requires_grad() || v.requires_grad(),
                       [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         const auto& M = TapeOps::val(tp, im);
                         const auto& V = TapeOps::val(tp, iv);
                         if (TapeOps::rg(tp, im)) {
                           auto& gm = TapeOps::grad(tp, im);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               gm[i * c + j] += op == ColOp::Scale ? g[i * c + j] * V[j] : g[i * c + j];
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t j = 0; j < c; ++j) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < r; ++i)
                               acc += op == ColOp::Scale ? g[i * c + j] * M[i * c + j] : g[i * c + j];
                             gv[j] += acc;
                           }
                         }
                       });
}

}  // namespace

Tensor scale_rows(const Tensor& m, const Tensor& v) { return row_broadcast(m, v, RowOp::Scale); }
Tensor div_rows(const Tensor& m, const Tensor& v) { return row_broadcast(m, v, RowOp::Div); }
Tensor add_rows(const Tensor& m, const Tensor& v) { return row_broadcast(m, v, RowOp::Add); }
Tensor sub_rows(const Tensor& m, const Tensor& v) { return row_broadcast(m, v, RowOp::Sub); }
Tensor scale_cols(const Tensor& m, const Tensor& v) { return col_broadcast(m, v, ColOp::Scale); }
Tensor add_cols(const Tensor& m, const Tensor& v) { return col_broadcast(m, v, ColOp::Add); }

// Nonlinearities and normalizations -------------------------------------------

Tensor tanh(const Tensor& x) {
  Tape& t = tape(x);
  const std::size_t n = x.size();
  const auto& xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(xv[i]);
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, x.shape(), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    const auto& y = TapeOps::val(tp, self);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor softmax_row(const Tensor& x) {
  Tape& t = tape(x);
  const std::size_t r = x.shape().rank == 2 ? x.rows() : 1;
  const std::size_t c = x.shape().rank == 2 ? x.cols() : x.size();
  require(c >= 1, "softmax_row: empty rows");
  const auto& xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = xv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(xv[i * c + j] - mx);
      denom += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, x.shape(), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    const auto& y = TapeOps::val(tp, self);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < r; ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < c; ++j) inner += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - inner);
    }
  });
}

Tensor row_mean(const Tensor& x) {
  Tape& t = tape(x);
  require(x.shape().rank == 2, "row_mean: expects rank 2");
  const std::size_t r = x.rows(), c = x.cols();
  require(c >= 1, "row_mean: empty rows");
  const auto& xv = x.values();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j];
    out[i] = acc / static_cast<double>(c);
  }
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(r), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gx = TapeOps::grad(tp, ix);
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * inv;
  });
}

Tensor row_std(const Tensor& x) {
  Tape& t = tape(x);
  require(x.shape().rank == 2, "row_std: expects rank 2");
  const std::size_t r = x.rows(), c = x.cols();
  require(c >= 1, "row_std: empty rows");
  const auto& xv = x.values();
  std::vector<double> out(r, 0.0);
  std::vector<double> mean(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j];
    mean[i] = acc / static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = xv[i * c + j] - mean[i];
      var += d * d;
    }
    var /= static_cast<double>(c);  // population variance
    out[i] = std::max(std::sqrt(var), kSigmaFloor);
  }
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(r), std::move(out), x.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    const auto& s = TapeOps::val(tp, self);
    const auto& X = TapeOps::val(tp, ix);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < r; ++i) {
      // Recompute mean; floored rows have zero gradient.
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += X[i * c + j];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        double d = X[i * c + j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      if (std::sqrt(var) <= kSigmaFloor) continue;
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += g[i] * (X[i * c + j] - mu) / (static_cast<double>(c) * s[i]);
    }
  });
}

std::pair<Tensor, Tensor> row_stats(const Tensor& x) { return {row_mean(x), row_std(x)}; }

Tensor adaptive_avg_pool_cols(const Tensor& x) { return row_mean(x); }

// Reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tape& t = tape(x);
  const std::size_t n = x.size();
  const auto& xv = x.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += xv[i];
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(1), {acc}, x.requires_grad(), [=](Tape& tp) {
    const double g = TapeOps::grad(tp, self)[0];
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor dot(const Tensor& u, const Tensor& v) {
  Tape& t = same_tape(u, v);
  require(u.shape().rank == 1 && v.shape().rank == 1, "dot: expects rank-1 operands");
  require(u.size() == v.size(), "dot: lengths disagree");
  const std::size_t n = u.size();
  const auto& uv = u.values();
  const auto& vv = v.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += uv[i] * vv[i];
  const std::size_t iu = index_of(u), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(1), {acc}, u.requires_grad() || v.requires_grad(),
                       [=](Tape& tp) {
                         const double g = TapeOps::grad(tp, self)[0];
                         const auto& U = TapeOps::val(tp, iu);
                         const auto& V = TapeOps::val(tp, iv);
                         if (TapeOps::rg(tp, iu)) {
                           auto& gu = TapeOps::grad(tp, iu);
                           for (std::size_t i = 0; i < n; ++i) gu[i] += g * V[i];
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t i = 0; i < n; ++i) gv[i] += g * U[i];
                         }
                       });
}

Tensor l1_norm(const Tensor& x) {
  Tape& t = tape(x);
  const std::size_t n = x.size();
  const auto& xv = x.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(xv[i]);
  const std::size_t ix = index_of(x), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(1), {acc}, x.requires_grad(), [=](Tape& tp) {
    const double g = TapeOps::grad(tp, self)[0];
    const auto& X = TapeOps::val(tp, ix);
    auto& gx = TapeOps::grad(tp, ix);
    for (std::size_t i = 0; i < n; ++i) {
      // subgradient at zero is zero
      double s = X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0);
      gx[i] += g * s;
    }
  });
}

Tensor masked_l2(const Tensor& x, const Tensor& mask) {
  Tape& t = same_tape(x, mask);
  require(x.shape() == mask.shape(), "masked_l2: shapes disagree");
  const std::size_t n = x.size();
  const auto& xv = x.values();
  const auto& mv = mask.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = xv[i] * mv[i];
    acc += e * e;
  }
  const double norm = std::sqrt(acc);
  const std::size_t ix = index_of(x), imask = index_of(mask), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(1), {norm}, x.requires_grad(), [=](Tape& tp) {
    const double g = TapeOps::grad(tp, self)[0];
    const double r = TapeOps::val(tp, self)[0];
    if (r == 0.0) return;  // subgradient 0 at the origin
    const auto& X = TapeOps::val(tp, ix);
    const auto& M = TapeOps::val(tp, imask);
    if (TapeOps::rg(tp, ix)) {
      auto& gx = TapeOps::grad(tp, ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g * X[i] * M[i] * M[i] / r;
    }
  });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  Tape& t = same_tape(u, v);
  require(u.shape().rank == 1 && v.shape().rank == 1, "cosine_similarity: expects vectors");
  require(u.size() == v.size(), "cosine_similarity: lengths disagree");
  const std::size_t n = u.size();
  const auto& uv = u.values();
  const auto& vv = v.values();
  double uu = 0.0, vw = 0.0, uvdot = 0.0;
  for (std::size_t i = 0; i < n; ++i) uu += uv[i] * uv[i];
  for (std::size_t i = 0; i < n; ++i) vw += vv[i] * vv[i];
  for (std::size_t i = 0; i < n; ++i) uvdot += uv[i] * vv[i];
  const double nu = std::sqrt(uu), nv = std::sqrt(vw);
  if (nu == 0.0 || nv == 0.0)
    throw DegenerateInput("cosine_similarity: zero-norm input");
  const double c = std::clamp(uvdot / (nu * nv), -1.0, 1.0);
  const std::size_t iu = index_of(u), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(1), {c}, u.requires_grad() || v.requires_grad(),
                       [=](Tape& tp) {
                         const double g = TapeOps::grad(tp, self)[0];
                         const auto& U = TapeOps::val(tp, iu);
                         const auto& V = TapeOps::val(tp, iv);
                         double uu2 = 0.0, vv2 = 0.0, d = 0.0;
                         for (std::size_t i = 0; i < n; ++i) uu2 += U[i] * U[i];
                         for (std::size_t i = 0; i < n; ++i) vv2 += V[i] * V[i];
                         for (std::size_t i = 0; i < n; ++i) d += U[i] * V[i];
                         const double a = std::sqrt(uu2), b = std::sqrt(vv2);
                         const double cc = d / (a * b);
                         if (TapeOps::rg(tp, iu)) {
                           auto& gu = TapeOps::grad(tp, iu);
                           for (std::size_t i = 0; i < n; ++i)
                             gu[i] += g * (V[i] / (a * b) - cc * U[i] / uu2);
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t i = 0; i < n; ++i)
                             gv[i] += g * (U[i] / (a * b) - cc * V[i] / vv2);
                         }
                       });
}

Tensor l2_normalize(const Tensor& v) {
  Tape& t = tape(v);
  require(v.shape().rank == 1, "l2_normalize: expects a vector");
  const std::size_t n = v.size();
  const auto& vv = v.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += vv[i] * vv[i];
  const double norm = std::sqrt(acc);
  if (norm < 1e-9) throw DegenerateInput("l2_normalize: norm below 1e-9");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = vv[i] / norm;
  const std::size_t iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(n), std::move(out), v.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    const auto& y = TapeOps::val(tp, self);
    const auto& V = TapeOps::val(tp, iv);
    auto& gv = TapeOps::grad(tp, iv);
    double r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) r2 += V[i] * V[i];
    const double r = std::sqrt(r2);
    double gy = 0.0;
    for (std::size_t i = 0; i < n; ++i) gy += g[i] * y[i];
    for (std::size_t i = 0; i < n; ++i) gv[i] += (g[i] - y[i] * gy) / r;
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape& t = same_tape(x, w);
  same_tape(w, b);
  require(x.shape().rank == 1 && w.shape().rank == 2 && b.shape().rank == 1,
          "affine: expects vector, matrix, vector");
  require(x.size() == w.rows() && b.size() == w.cols(), "affine: extents disagree");
  const std::size_t k = x.size(), n = w.cols();
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = bv[j];
    for (std::size_t i = 0; i < k; ++i) acc += xv[i] * wv[i * n + j];
    out[j] = acc;
  }
  const std::size_t ix = index_of(x), iw = index_of(w), ib = index_of(b);
  const std::size_t self = TapeOps::next_index(t);
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return TapeOps::emit(t, Shape::vec(n), std::move(out), rg, [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    const auto& X = TapeOps::val(tp, ix);
    const auto& W = TapeOps::val(tp, iw);
    if (TapeOps::rg(tp, ix)) {
      auto& gx = TapeOps::grad(tp, ix);
      for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[j] * W[i * n + j];
        gx[i] += acc;
      }
    }
    if (TapeOps::rg(tp, iw)) {
      auto& gw = TapeOps::grad(tp, iw);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += X[i] * g[j];
    }
    if (TapeOps::rg(tp, ib)) {
      auto& gb = TapeOps::grad(tp, ib);
      for (std::size_t j = 0; j < n; ++j) gb[j] += g[j];
    }
  });
}

// Structural ops ---------------------------------------------------------------

Tensor flatten(const Tensor& m) {
  Tape& t = tape(m);
  require(m.shape().rank == 2, "flatten: expects rank 2");
  const std::size_t n = m.size();
  const std::size_t im = index_of(m), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(n), m.values(), m.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gm = TapeOps::grad(tp, im);
    for (std::size_t i = 0; i < n; ++i) gm[i] += g[i];
  });
}

Tensor slice(const Tensor& v, std::size_t offset, std::size_t len) {
  Tape& t = tape(v);
  require(v.shape().rank == 1, "slice: expects a vector");
  require(offset + len <= v.size(), "slice: range out of bounds");
  const auto& vv = v.values();
  std::vector<double> out(vv.begin() + static_cast<std::ptrdiff_t>(offset),
                          vv.begin() + static_cast<std::ptrdiff_t>(offset + len));
  const std::size_t iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(len), std::move(out), v.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gv = TapeOps::grad(tp, iv);
    for (std::size_t i = 0; i < len; ++i) gv[offset + i] += g[i];
  });
}

Tensor concat(const Tensor& u, const Tensor& v) {
  Tape& t = same_tape(u, v);
  require(u.shape().rank == 1 && v.shape().rank == 1, "concat: expects vectors");
  const std::size_t nu = u.size(), nv = v.size();
  std::vector<double> out;
  out.reserve(nu + nv);
  out.insert(out.end(), u.values().begin(), u.values().end());
  out.insert(out.end(), v.values().begin(), v.values().end());
  const std::size_t iu = index_of(u), iv = index_of(v), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(nu + nv), std::move(out),
                       u.requires_grad() || v.requires_grad(), [=](Tape& tp) {
                         const auto& g = TapeOps::grad(tp, self);
                         if (TapeOps::rg(tp, iu)) {
                           auto& gu = TapeOps::grad(tp, iu);
                           for (std::size_t i = 0; i < nu; ++i) gu[i] += g[i];
                         }
                         if (TapeOps::rg(tp, iv)) {
                           auto& gv = TapeOps::grad(tp, iv);
                           for (std::size_t i = 0; i < nv; ++i) gv[i] += g[nu + i];
                         }
                       });
}

Tensor row_of(const Tensor& m, std::size_t row) {
  Tape& t = tape(m);
  require(m.shape().rank == 2, "row_of: expects rank 2");
  require(row < m.rows(), "row_of: row out of range");
  const std::size_t c = m.cols();
  const auto& mv = m.values();
  std::vector<double> out(mv.begin() + static_cast<std::ptrdiff_t>(row * c),
                          mv.begin() + static_cast<std::ptrdiff_t>((row + 1) * c));
  const std::size_t im = index_of(m), self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::vec(c), std::move(out), m.requires_grad(), [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    auto& gm = TapeOps::grad(tp, im);
    for (std::size_t j = 0; j < c; ++j) gm[row * c + j] += g[j];
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  Tape& t = tape(rows[0]);
  const std::size_t c = rows[0].size();
  bool rg = false;
  for (const Tensor& r : rows) {
    same_tape(rows[0], r);
    require(r.shape().rank == 1 && r.size() == c, "stack_rows: rows must be equal-length vectors");
    rg = rg || r.requires_grad();
  }
  const std::size_t k = rows.size();
  std::vector<double> out;
  out.reserve(k * c);
  for (const Tensor& r : rows) out.insert(out.end(), r.values().begin(), r.values().end());
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = TapeOps::index(rows[i]);
  const std::size_t self = TapeOps::next_index(t);
  return TapeOps::emit(t, Shape::mat(k, c), std::move(out), rg, [=](Tape& tp) {
    const auto& g = TapeOps::grad(tp, self);
    for (std::size_t i = 0; i < k; ++i) {
      if (!TapeOps::rg(tp, idx[i])) continue;
      auto& gr = TapeOps::grad(tp, idx[i]);
      for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
    }
  });
}

}  // namespace semmod
