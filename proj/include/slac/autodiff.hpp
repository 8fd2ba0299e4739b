#pragma once

// Reverse-mode differentiation over a fixed set of dense matrix ops.
//
// A Tape records nodes in evaluation order; each node owns its value, its
// gradient buffer (allocated on first use) and a closure that pushes the
// node's gradient into its inputs. Parameter leaves forward their gradient
// into ParamTensor::grad when Tape::backward finishes. Row convention: a
// matrix with n rows holds n samples (triplets, instances).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slac/common.hpp"

namespace slac {

struct ParamTensor {
  std::string name;
  Matrix value;
  // Gradient accumulator. Mutable so that a frozen model can be read through
  // const references while training code still accumulates into it.
  mutable Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string name, Eigen::Index rows, Eigen::Index cols);

  Eigen::Index size() const { return value.size(); }
  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

/// Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_init(ParamTensor& p, Rng& rng);

namespace ad {

struct Var {
  int id = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var input(Matrix value);
  Var parameter(const ParamTensor& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient of the last backward() root w.r.t. v (zeros if v was not reached).
  Matrix grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(root)/d(.) through the tape; root must be 1x1.
  void backward(Var root, double seed = 1.0);

  // ---- op authoring ----
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    const ParamTensor* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- primitives ----
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
/// x (n x c) plus a 1 x c row broadcast over rows.
Var add_bias(Tape& t, Var x, Var bias);
/// x W + b: x n x in, W in x out, b 1 x out.
Var dense(Tape& t, Var x, Var weights, Var bias);
Var tanh(Tape& t, Var x);
Var scale(Tape& t, Var x, double factor);
Var softmax_rows(Tape& t, Var x);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var gather_rows(Tape& t, Var table, std::span<const int> rows);
/// softmax(q k^T / sqrt(dk)) v, rows of q attend over rows of k/v.
Var attention(Tape& t, Var q, Var k, Var v);
/// (1/B) sum_k sum_j m_kj (pred_kj - target_kj)^2; masked-off entries are never read.
Var masked_mse(Tape& t, Var pred, const Matrix& target, const Matrix& mask);
/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels);
Var sum_squares(Tape& t, Var x);
Var sum(Tape& t, Var x);

}  // namespace ad

/// Row-wise stable softmax (no tape).
Matrix softmax_rows(const Matrix& x);

}  // namespace slac
