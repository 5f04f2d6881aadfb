#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace semmod {

// Dense shape of rank 1 or 2. Rank-1 tensors are plain vectors, rank-2
// tensors are row-major matrices. Scalars are rank-1 tensors of length 1.
struct Shape {
  int rank = 1;
  std::size_t d0 = 0;  // rank 1: length; rank 2: rows
  std::size_t d1 = 1;  // rank 2: columns

  static Shape vec(std::size_t n) { return Shape{1, n, 1}; }
  static Shape mat(std::size_t rows, std::size_t cols) { return Shape{2, rows, cols}; }
  std::size_t size() const { return d0 * d1; }
  bool operator==(const Shape&) const = default;
};

// Plain dense value detached from any tape. Used for parameters, latent
// codes and everything that lives across tape lifetimes.
struct Array {
  Shape shape;
  std::vector<double> data;

  static Array zeros(Shape s) { return Array{s, std::vector<double>(s.size(), 0.0)}; }
  static Array vec(std::vector<double> values) {
    Shape s = Shape::vec(values.size());
    return Array{s, std::move(values)};
  }
  static Array mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t size() const { return shape.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * shape.d1 + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape.d1 + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

class Tape;
namespace detail {
struct TapeOps;
}

// Handle to a node owned by a Tape. Cheap to copy. A default-constructed
// handle is invalid and must not be passed to any operation.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  // Tape that owns this tensor's node.
  Tape& owner() const;
  const Shape& shape() const;
  std::size_t rows() const { return shape().d0; }
  std::size_t cols() const { return shape().d1; }
  std::size_t size() const { return shape().size(); }

  double operator[](std::size_t i) const;        // flat, row-major
  double at(std::size_t r, std::size_t c) const; // rank-2 element
  const std::vector<double>& values() const;
  Array to_array() const;

  bool requires_grad() const;
  // Gradient buffer, valid after Tape::backward. Empty for nodes that do
  // not require gradients.
  const std::vector<double>& grad() const;

 private:
  friend class Tape;
  friend struct detail::TapeOps;
  Tensor(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Records every executed operation in order and supports a single reverse
// traversal that populates gradients. Single-threaded; distinct tapes are
// independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Tensor leaf(const Array& a, bool requires_grad = false);
  Tensor scalar(double v);

  // Seeds d(root)/d(root) = 1 and pulls gradients back through every
  // recorded operation in reverse execution order. The root must be a
  // scalar (one element).
  void backward(const Tensor& root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Tensor;
  friend struct detail::TapeOps;
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Tape&)> pull;  // accumulates this node's grad into its parents
  };
  std::vector<Node> nodes_;
};

// --- operations -----------------------------------------------------------
// All operations append one node to the operands' tape and are differentiable
// with respect to every floating-point input unless noted. Reductions sum
// left-to-right in index order so repeated runs are bitwise identical.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n] -> [m,n]
Tensor vecmat(const Tensor& v, const Tensor& m);     // [k] x [k,n] -> [n]
Tensor matvec(const Tensor& m, const Tensor& v);     // [m,k] x [k] -> [m]
Tensor transpose(const Tensor& m);

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

// Broadcasts of a length-m vector over the rows of an [m,n] matrix and of a
// length-n vector over its columns.
Tensor scale_rows(const Tensor& m, const Tensor& v); // y[i,j] = m[i,j] * v[i]
Tensor div_rows(const Tensor& m, const Tensor& v);   // y[i,j] = m[i,j] / v[i]
Tensor add_rows(const Tensor& m, const Tensor& v);   // y[i,j] = m[i,j] + v[i]
Tensor sub_rows(const Tensor& m, const Tensor& v);   // y[i,j] = m[i,j] - v[i]
Tensor scale_cols(const Tensor& m, const Tensor& v); // y[i,j] = m[i,j] * v[j]
Tensor add_cols(const Tensor& m, const Tensor& v);   // y[i,j] = m[i,j] + v[j]

Tensor tanh(const Tensor& x);

// Row-wise softmax, stabilized by subtracting the per-row maximum before
// exponentiation. Rank-1 input is treated as a single row.
Tensor softmax_row(const Tensor& x);

// Per-row population mean / standard deviation. The deviation is floored at
// kSigmaFloor so degenerate rows stay differentiable downstream.
inline constexpr double kSigmaFloor = 1e-5;
Tensor row_mean(const Tensor& x);
Tensor row_std(const Tensor& x);
std::pair<Tensor, Tensor> row_stats(const Tensor& x);

// Mean across columns per row; adaptive average pooling to output size 1.
Tensor adaptive_avg_pool_cols(const Tensor& x);

Tensor sum(const Tensor& x);                         // scalar
Tensor dot(const Tensor& u, const Tensor& v);        // scalar, rank-1 inputs
Tensor l1_norm(const Tensor& x);                     // scalar; subgradient 0 at 0
Tensor masked_l2(const Tensor& x, const Tensor& mask);  // || x . mask ||_2; mask is not differentiated
Tensor cosine_similarity(const Tensor& u, const Tensor& v);  // scalar in [-1, 1]
Tensor l2_normalize(const Tensor& v);                // v / ||v||; ||v|| < 1e-9 is degenerate

// y[j] = sum_i x[i] * w[i,j] + b[j]; the fully-connected affine map.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor flatten(const Tensor& m);                     // [m,n] -> [m*n], row-major
Tensor slice(const Tensor& v, std::size_t offset, std::size_t len);
Tensor concat(const Tensor& u, const Tensor& v);
Tensor row_of(const Tensor& m, std::size_t row);
Tensor stack_rows(const std::vector<Tensor>& rows);  // k vectors of length n -> [k,n]

// Free-function spelling of Tape::backward.
void backward(const Tensor& loss);

}  // namespace semmod
