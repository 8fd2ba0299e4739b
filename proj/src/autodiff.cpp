#include "slac/autodiff.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace slac {

ParamTensor::ParamTensor(std::string n, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

void glorot_init(ParamTensor& p, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = (2.0 * uniform_draw(rng) - 1.0) * limit;
  p.zero_grad();
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

namespace ad {

namespace {
void check_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok)
    throw Error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()) + ")");
}

// Reusable backing storage for the n x n attention matrices. Fresh allocations
// of that size go through mmap and pay a page fault per 4 KiB on first touch,
// which dominates the attention cost; recycled buffers keep their pages.
// Buffers are vector-aligned so reductions over them do not depend on where
// the allocator placed them.
using ScratchBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

class ScratchPool {
 public:
  ScratchBuffer take(std::size_t n) {
    auto best = free_.end();
    for (auto it = free_.begin(); it != free_.end(); ++it)
      if (best == free_.end() || it->size() > best->size()) best = it;
    ScratchBuffer buf;
    if (best != free_.end()) {
      buf = std::move(*best);
      free_.erase(best);
    }
    if (buf.size() < n) buf.resize(n);
    return buf;
  }
  void give(ScratchBuffer&& buf) {
    if (free_.size() < 32) free_.push_back(std::move(buf));
  }

 private:
  std::vector<ScratchBuffer> free_;
};

ScratchPool& scratch_pool() {
  thread_local ScratchPool pool;
  return pool;
}

class ScratchMatrix {
 public:
  ScratchMatrix(Eigen::Index rows, Eigen::Index cols)
      : buf_(scratch_pool().take(static_cast<std::size_t>(rows * cols))), rows_(rows), cols_(cols) {}
  ~ScratchMatrix() { scratch_pool().give(std::move(buf_)); }
  ScratchMatrix(const ScratchMatrix&) = delete;
  ScratchMatrix& operator=(const ScratchMatrix&) = delete;

  Eigen::Map<Matrix> map() { return {buf_.data(), rows_, cols_}; }
  Eigen::Map<const Matrix> map() const { return {buf_.data(), rows_, cols_}; }

 private:
  ScratchBuffer buf_;
  Eigen::Index rows_, cols_;
};
}  // namespace

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), {}, {}, nullptr, false});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) {
  nodes_.push_back({std::move(value), {}, {}, nullptr, true});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const ParamTensor& p) {
  nodes_.push_back({p.value, {}, {}, &p, true});
  return {static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar(Var v) const {
  const auto& m = nodes_[v.id].value;
  if (m.size() != 1) throw Error("Tape::scalar: node is not 1x1");
  return m(0, 0);
}

Matrix Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool rg = false;
  for (auto in : inputs) rg = rg || nodes_[in.id].requires_grad;
  nodes_.push_back({std::move(value), {}, rg ? std::move(fn) : BackwardFn{}, nullptr, rg});
  return {static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root, double seed) {
  if (nodes_[root.id].value.size() != 1) throw Error("Tape::backward: root must be scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Constant(1, 1, seed);
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Var matmul(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  check_shape(A.cols() == B.rows(), "matmul", A, B);
  return t.record(A * B, {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var transpose(Tape& t, Var a) {
  return t.record(t.value(a).transpose(), {a},
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g.transpose()); });
}

Var add(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  check_shape(A.rows() == B.rows() && A.cols() == B.cols(), "add", A, B);
  return t.record(A + B, {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var add_bias(Tape& t, Var x, Var bias) {
  const auto& X = t.value(x);
  const auto& B = t.value(bias);
  check_shape(B.rows() == 1 && B.cols() == X.cols(), "add_bias", X, B);
  Matrix out = X.rowwise() + B.row(0);
  return t.record(std::move(out), {x, bias}, [x, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

Var dense(Tape& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  check_shape(X.cols() == W.rows(), "dense", X, W);
  check_shape(B.rows() == 1 && B.cols() == W.cols(), "dense bias", W, B);
  Matrix out = X * W;
  out.rowwise() += B.row(0);
  return t.record(std::move(out), {x, w, b}, [x, w, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

Var tanh(Tape& t, Var x) {
  Matrix y = t.value(x).array().tanh().matrix();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(y), {x}, [x, self](Tape& tp, const Matrix& g) {
    const auto& Y = tp.value(Var{self});
    tp.accumulate(x, (g.array() * (1.0 - Y.array().square())).matrix());
  });
}

Var scale(Tape& t, Var x, double factor) {
  return t.record(t.value(x) * factor, {x},
                  [x, factor](Tape& tp, const Matrix& g) { tp.accumulate(x, g * factor); });
}

Var softmax_rows(Tape& t, Var x) {
  Matrix y = slac::softmax_rows(t.value(x));
  const int self = static_cast<int>(t.size());
  return t.record(std::move(y), {x}, [x, self](Tape& tp, const Matrix& g) {
    const auto& Y = tp.value(Var{self});
    Vector dot = (g.array() * Y.array()).rowwise().sum();
    Matrix dx = (Y.array() * (g.colwise() - dot).array()).matrix();
    tp.accumulate(x, dx);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (auto p : parts) {
    check_shape(t.value(p).rows() == rows, "concat_cols", t.value(parts[0]), t.value(p));
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (auto p : parts) {
    out.middleCols(c, t.value(p).cols()) = t.value(p);
    c += t.value(p).cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ins](Tape& tp, const Matrix& g) {
    Eigen::Index c0 = 0;
    for (auto p : ins) {
      const auto w = tp.value(p).cols();
      tp.accumulate(p, g.middleCols(c0, w));
      c0 += w;
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (auto p : parts) {
    check_shape(t.value(p).cols() == cols, "concat_rows", t.value(parts[0]), t.value(p));
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (auto p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ins](Tape& tp, const Matrix& g) {
    Eigen::Index r0 = 0;
    for (auto p : ins) {
      const auto h = tp.value(p).rows();
      tp.accumulate(p, g.middleRows(r0, h));
      r0 += h;
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> rows) {
  const auto& T = t.value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= T.rows())
      throw Error("gather_rows: index " + std::to_string(rows[i]) + " out of range [0, " +
                  std::to_string(T.rows()) + ")");
    out.row(static_cast<Eigen::Index>(i)) = T.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {table}, [table, idx](Tape& tp, const Matrix& g) {
    const auto& T0 = tp.value(table);
    Matrix dt = Matrix::Zero(T0.rows(), T0.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, dt);
  });
}

Var attention(Tape& t, Var q, Var k, Var v) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  check_shape(Q.cols() == K.cols(), "attention q/k", Q, K);
  check_shape(K.rows() == V.rows(), "attention k/v", K, V);
  const double inv = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  // Scores are stored transposed (keys x queries) so every softmax runs down a
  // contiguous column. The probabilities live in the closure.
  auto probs = std::make_shared<ScratchMatrix>(K.rows(), Q.rows());
  auto P = probs->map();
  const Matrix scaled_q = Q * inv;
  P.noalias() = K * scaled_q.transpose();
  for (Eigen::Index j = 0; j < P.cols(); ++j) {
    auto col = P.col(j);
    const double mx = col.maxCoeff();
    col = (col.array() - mx).exp();
    col /= col.sum();
  }
  Matrix out(Q.rows(), V.cols());
  out.noalias() = P.transpose() * V;
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), {q, k, v}, [q, k, v, probs, inv, self](Tape& tp, const Matrix& g) {
    const auto P = std::as_const(*probs).map();
    if (tp.requires_grad(v)) {
      Matrix dv(P.rows(), g.cols());
      dv.noalias() = P * g;
      tp.accumulate(v, dv);
    }
    if (!tp.requires_grad(q) && !tp.requires_grad(k)) return;
    const Vector rowdot = (g.array() * tp.value(Var{self}).array()).rowwise().sum();
    ScratchMatrix scratch(P.rows(), P.cols());
    auto dS = scratch.map();
    dS.noalias() = tp.value(v) * g.transpose();
    for (Eigen::Index j = 0; j < dS.cols(); ++j)
      dS.col(j) = ((dS.col(j).array() - rowdot[j]) * P.col(j).array() * inv).matrix();
    if (tp.requires_grad(q)) {
      Matrix dq(dS.cols(), tp.value(k).cols());
      dq.noalias() = dS.transpose() * tp.value(k);
      tp.accumulate(q, dq);
    }
    if (tp.requires_grad(k)) {
      Matrix dk(dS.rows(), tp.value(q).cols());
      dk.noalias() = dS * tp.value(q);
      tp.accumulate(k, dk);
    }
  });
}

Var masked_mse(Tape& t, Var pred, const Matrix& target, const Matrix& mask) {
  const auto& P = t.value(pred);
  check_shape(P.rows() == target.rows() && P.cols() == target.cols(), "masked_mse target", P, target);
  check_shape(P.rows() == mask.rows() && P.cols() == mask.cols(), "masked_mse mask", P, mask);
  const double inv_b = P.rows() > 0 ? 1.0 / static_cast<double>(P.rows()) : 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < P.rows(); ++r)
    for (Eigen::Index c = 0; c < P.cols(); ++c) {
      if (mask(r, c) == 0.0) continue;
      const double d = P(r, c) - target(r, c);
      total += mask(r, c) * d * d;
    }
  Matrix out(1, 1);
  out(0, 0) = total * inv_b;
  return t.record(std::move(out), {pred}, [pred, target, mask, inv_b](Tape& tp, const Matrix& g) {
    const auto& P0 = tp.value(pred);
    Matrix d = Matrix::Zero(P0.rows(), P0.cols());
    for (Eigen::Index r = 0; r < P0.rows(); ++r)
      for (Eigen::Index c = 0; c < P0.cols(); ++c)
        if (mask(r, c) != 0.0) d(r, c) = 2.0 * mask(r, c) * (P0(r, c) - target(r, c)) * inv_b;
    tp.accumulate(pred, d * g(0, 0));
  });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const auto& L = t.value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != L.rows())
    throw Error("softmax_cross_entropy: label count does not match rows");
  Matrix probs = slac::softmax_rows(L);
  double total = 0.0;
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= L.cols()) throw Error("softmax_cross_entropy: label out of range");
    const double mx = L.row(r).maxCoeff();
    const double lse = mx + std::log((L.row(r).array() - mx).exp().sum());
    total += lse - L(r, y);
  }
  const double inv_b = 1.0 / static_cast<double>(std::max<Eigen::Index>(L.rows(), 1));
  Matrix out(1, 1);
  out(0, 0) = total * inv_b;
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(std::move(out), {logits}, [logits, probs, ys, inv_b](Tape& tp, const Matrix& g) {
    Matrix d = probs;
    for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
    tp.accumulate(logits, d * (inv_b * g(0, 0)));
  });
}

Var sum_squares(Tape& t, Var x) {
  Matrix out(1, 1);
  out(0, 0) = t.value(x).squaredNorm();
  return t.record(std::move(out), {x},
                  [x](Tape& tp, const Matrix& g) { tp.accumulate(x, tp.value(x) * (2.0 * g(0, 0))); });
}

Var sum(Tape& t, Var x) {
  Matrix out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.record(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    const auto& X = tp.value(x);
    tp.accumulate(x, Matrix::Constant(X.rows(), X.cols(), g(0, 0)));
  });
}

}  // namespace ad
}  // namespace slac
