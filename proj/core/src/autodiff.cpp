#include "trajclust/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>

#include "trajclust/common.hpp"

namespace trajclust::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return ConstMap(t.raw(), t.rows(), t.cols()); }
MutMap as_mat(Tensor& t) { return MutMap(t.raw(), t.rows(), t.cols()); }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void check_offsets(const char* op, std::span<const std::size_t> offsets, std::size_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows)
    throw ShapeError(std::string(op) + ": segment offsets do not cover " + std::to_string(rows) + " rows");
  for (std::size_t b = 1; b < offsets.size(); ++b)
    if (offsets[b] < offsets[b - 1]) throw ShapeError(std::string(op) + ": segment offsets not sorted");
}

}  // namespace

void SparseRows::add_row(std::span<const std::uint32_t> active) {
  indices.insert(indices.end(), active.begin(), active.end());
  offsets.push_back(indices.size());
}

Tensor SparseRows::to_dense() const {
  Tensor out(matrix_shape(rows(), cols));
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t p = offsets[r]; p < offsets[r + 1]; ++p) out.at(r, indices[p]) += 1.0;
  return out;
}

const Tensor& Var::value() const {
  if (!tape_) throw Error("Var::value on an unbound variable");
  return tape_->nodes_[id_].value;
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backprop backprop) {
  assert(value.all_finite() && "non-finite value produced by a forward op");
  bool needs_grad = false;
  for (Var p : parents) {
    check_owner(p);
    needs_grad = needs_grad || nodes_[p.id_].needs_grad;
  }
  Node node;
  node.value = std::move(value);
  node.needs_grad = track_ && needs_grad;
  if (node.needs_grad) node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::slot(std::vector<Tensor>& grads, Var v) const {
  Tensor& g = grads[v.id_];
  if (g.empty() && !nodes_[v.id_].value.empty()) g = Tensor(nodes_[v.id_].value.shape());
  return g;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), track_, {}});
  leaves_.push_back(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::matmul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols() != B.rows()) mismatch("matmul", A, B);
  Tensor out(matrix_shape(A.rows(), B.cols()));
  as_mat(out).noalias() = as_mat(A) * as_mat(B);
  return push(std::move(out), {a, b}, [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
    if (needs(a)) as_mat(slot(grads, a)).noalias() += as_mat(g) * as_mat(val(b)).transpose();
    if (needs(b)) as_mat(slot(grads, b)).noalias() += as_mat(val(a)).transpose() * as_mat(g);
  });
}

Var Tape::add(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape() != B.shape()) mismatch("add", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return push(std::move(out), {a, b}, [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
    for (Var p : {a, b}) {
      if (!needs(p)) continue;
      Tensor& s = slot(grads, p);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape() != B.shape()) mismatch("sub", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return push(std::move(out), {a, b}, [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
    if (needs(a)) {
      Tensor& s = slot(grads, a);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    }
    if (needs(b)) {
      Tensor& s = slot(grads, b);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] -= g[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  check_owner(a);
  check_owner(row);
  const Tensor& A = val(a);
  const Tensor& R = val(row);
  if (R.rows() != 1 || R.cols() != A.cols()) mismatch("add_row", A, R);
  Tensor out = A;
  const std::size_t n = A.rows(), d = A.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += R[c];
  return push(std::move(out), {a, row}, [this, a, row](const Tensor& g, std::vector<Tensor>& grads) {
    if (needs(a)) {
      Tensor& s = slot(grads, a);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    }
    if (needs(row)) {
      Tensor& s = slot(grads, row);
      const std::size_t d = s.size();
      for (std::size_t i = 0; i < g.size(); ++i) s[i % d] += g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape() != B.shape()) mismatch("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return push(std::move(out), {a, b}, [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
    if (needs(a)) {
      Tensor& s = slot(grads, a);
      const Tensor& other = val(b);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * other[i];
    }
    if (needs(b)) {
      Tensor& s = slot(grads, b);
      const Tensor& other = val(a);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * other[i];
    }
  });
}

Var Tape::scale(Var a, double factor) {
  check_owner(a);
  Tensor out = map_values(val(a), [factor](double x) { return x * factor; });
  return push(std::move(out), {a}, [this, a, factor](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * factor;
  });
}

Var Tape::tanh(Var a) {
  check_owner(a);
  Tensor out = map_values(val(a), [](double x) { return std::tanh(x); });
  const std::size_t self = nodes_.size();
  return push(std::move(out), {a}, [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& y = nodes_[self].value;
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::relu(Var a) {
  check_owner(a);
  Tensor out = map_values(val(a), [](double x) { return x > 0.0 ? x : 0.0; });
  return push(std::move(out), {a}, [this, a](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& x = val(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) s[i] += g[i];
  });
}

Var Tape::exp(Var a) {
  check_owner(a);
  Tensor out = map_values(val(a), [](double x) { return std::exp(x); });
  const std::size_t self = nodes_.size();
  return push(std::move(out), {a}, [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& y = nodes_[self].value;
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * y[i];
  });
}

Var Tape::log(Var a) {
  check_owner(a);
  Tensor out = map_values(val(a), [](double x) { return std::log(x); });
  return push(std::move(out), {a}, [this, a](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& x = val(a);
    for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] / x[i];
  });
}

Var Tape::softmax(Var a) {
  check_owner(a);
  const Tensor& A = val(a);
  Tensor out(A.shape());
  const std::size_t n = A.rows(), d = A.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = A.raw() + r * d;
    double* y = out.raw() + r * d;
    const double m = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (y[c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < d; ++c) y[c] /= z;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), {a}, [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& y = nodes_[self].value;
    const std::size_t n = y.rows(), d = y.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) s[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var Tape::log_softmax(Var a) {
  check_owner(a);
  const Tensor& A = val(a);
  Tensor out(A.shape());
  const std::size_t n = A.rows(), d = A.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = A.raw() + r * d;
    double* y = out.raw() + r * d;
    const double m = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(x[c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < d; ++c) y[c] = x[c] - lse;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), {a}, [this, a, self](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& y = nodes_[self].value;
    const std::size_t n = y.rows(), d = y.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < d; ++c) total += g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) s[r * d + c] += g[r * d + c] - std::exp(y[r * d + c]) * total;
    }
  });
}

Var Tape::sum(Var a) {
  check_owner(a);
  const Tensor& A = val(a);
  double total = 0.0;
  for (double x : A.data()) total += x;
  return push(Tensor::scalar(total), {a}, [this, a](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[0];
  });
}

Var Tape::mean(Var a) {
  check_owner(a);
  const Tensor& A = val(a);
  if (A.empty()) throw ShapeError("mean: empty tensor " + shape_string(A.shape()));
  double total = 0.0;
  for (double x : A.data()) total += x;
  const double n = static_cast<double>(A.size());
  return push(Tensor::scalar(total / n), {a}, [this, a, n](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[0] / n;
  });
}

Var Tape::sq_dist(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols() != B.cols()) mismatch("sq_dist", A, B);
  const std::size_t n = A.rows(), m = B.rows(), d = A.cols();
  Tensor out(matrix_shape(n, m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = A[i * d + c] - B[j * d + c];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  return push(std::move(out), {a, b}, [this, a, b](const Tensor& g, std::vector<Tensor>& grads) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    const std::size_t n = A.rows(), m = B.rows(), d = A.cols();
    Tensor* ga = needs(a) ? &slot(grads, a) : nullptr;
    Tensor* gb = needs(b) ? &slot(grads, b) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double w = 2.0 * g[i * m + j];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = A[i * d + c] - B[j * d + c];
          if (ga) (*ga)[i * d + c] += w * diff;
          if (gb) (*gb)[j * d + c] -= w * diff;
        }
      }
  });
}

Var Tape::concat(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.rows() != B.rows()) mismatch("concat", A, B);
  const std::size_t n = A.rows(), da = A.cols(), db = B.cols();
  Tensor out(matrix_shape(n, da + db));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(A.raw() + r * da, da, out.raw() + r * (da + db));
    std::copy_n(B.raw() + r * db, db, out.raw() + r * (da + db) + da);
  }
  return push(std::move(out), {a, b}, [this, a, b, n, da, db](const Tensor& g, std::vector<Tensor>& grads) {
    if (needs(a)) {
      Tensor& s = slot(grads, a);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < da; ++c) s[r * da + c] += g[r * (da + db) + c];
    }
    if (needs(b)) {
      Tensor& s = slot(grads, b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < db; ++c) s[r * db + c] += g[r * (da + db) + da + c];
    }
  });
}

Var Tape::row_min(Var a) {
  check_owner(a);
  const Tensor& A = val(a);
  const std::size_t n = A.rows(), m = A.cols();
  if (m == 0) throw ShapeError("row_min: no columns in " + shape_string(A.shape()));
  Tensor out(matrix_shape(n, 1));
  std::vector<std::size_t> arg(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m; ++c)
      if (A[r * m + c] < A[r * m + best]) best = c;
    arg[r] = best;
    out[r] = A[r * m + best];
  }
  return push(std::move(out), {a}, [this, a, m, arg = std::move(arg)](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t r = 0; r < arg.size(); ++r) s[r * m + arg[r]] += g[r];
  });
}

Var Tape::clamp_max(Var a, double cap) {
  check_owner(a);
  Tensor out = map_values(val(a), [cap](double x) { return std::min(x, cap); });
  return push(std::move(out), {a}, [this, a, cap](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    const Tensor& x = val(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] < cap) s[i] += g[i];
  });
}

Var Tape::embedding_bag(Var table, const SparseRows& rows) {
  check_owner(table);
  const Tensor& T = val(table);
  if (rows.cols != T.rows())
    throw ShapeError("embedding_bag: sparse input has " + std::to_string(rows.cols) + " columns, table is " +
                     shape_string(T.shape()));
  const std::size_t d = T.cols(), n = rows.rows();
  Tensor out(matrix_shape(n, d));
  for (std::size_t r = 0; r < n; ++r) {
    double* y = out.raw() + r * d;
    for (std::size_t p = rows.offsets[r]; p < rows.offsets[r + 1]; ++p) {
      const std::uint32_t idx = rows.indices[p];
      if (idx >= T.rows()) throw ShapeError("embedding_bag: index " + std::to_string(idx) + " out of range");
      const double* w = T.raw() + static_cast<std::size_t>(idx) * d;
      for (std::size_t c = 0; c < d; ++c) y[c] += w[c];
    }
  }
  // The backward closure keeps its own copy so callers may discard `rows`.
  return push(std::move(out), {table}, [this, table, rows](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, table);
    const std::size_t d = s.cols();
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      const double* gr = g.raw() + r * d;
      for (std::size_t p = rows.offsets[r]; p < rows.offsets[r + 1]; ++p) {
        double* w = s.raw() + static_cast<std::size_t>(rows.indices[p]) * d;
        for (std::size_t c = 0; c < d; ++c) w[c] += gr[c];
      }
    }
  });
}

Var Tape::gather_rows(Var a, std::span<const std::size_t> index) {
  check_owner(a);
  const Tensor& A = val(a);
  const std::size_t d = A.cols();
  Tensor out(matrix_shape(index.size(), d));
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= A.rows()) throw ShapeError("gather_rows: index out of range for " + shape_string(A.shape()));
    std::copy_n(A.raw() + index[r] * d, d, out.raw() + r * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return push(std::move(out), {a}, [this, a, d, idx = std::move(idx)](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) s[idx[r] * d + c] += g[r * d + c];
  });
}

Var Tape::pick(Var a, std::span<const std::size_t> column) {
  check_owner(a);
  const Tensor& A = val(a);
  const std::size_t n = A.rows(), m = A.cols();
  if (column.size() != n)
    throw ShapeError("pick: " + std::to_string(column.size()) + " columns for " + shape_string(A.shape()));
  Tensor out(matrix_shape(n, 1));
  for (std::size_t r = 0; r < n; ++r) {
    if (column[r] >= m) throw ShapeError("pick: column index out of range for " + shape_string(A.shape()));
    out[r] = A[r * m + column[r]];
  }
  std::vector<std::size_t> cols(column.begin(), column.end());
  return push(std::move(out), {a}, [this, a, m, cols = std::move(cols)](const Tensor& g, std::vector<Tensor>& grads) {
    Tensor& s = slot(grads, a);
    for (std::size_t r = 0; r < cols.size(); ++r) s[r * m + cols[r]] += g[r];
  });
}

Var Tape::segment_softmax(Var scores, std::span<const std::size_t> offsets) {
  check_owner(scores);
  const Tensor& S = val(scores);
  if (S.cols() != 1) throw ShapeError("segment_softmax: expected a column, got " + shape_string(S.shape()));
  check_offsets("segment_softmax", offsets, S.rows());
  Tensor out(matrix_shape(S.rows(), 1));
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    const std::size_t lo = offsets[b], hi = offsets[b + 1];
    if (lo == hi) continue;
    const double m = *std::max_element(S.raw() + lo, S.raw() + hi);
    double z = 0.0;
    for (std::size_t s = lo; s < hi; ++s) z += (out[s] = std::exp(S[s] - m));
    for (std::size_t s = lo; s < hi; ++s) out[s] /= z;
  }
  std::vector<std::size_t> seg(offsets.begin(), offsets.end());
  const std::size_t self = nodes_.size();
  return push(std::move(out), {scores},
              [this, scores, self, seg = std::move(seg)](const Tensor& g, std::vector<Tensor>& grads) {
                Tensor& s = slot(grads, scores);
                const Tensor& y = nodes_[self].value;
                for (std::size_t b = 0; b + 1 < seg.size(); ++b) {
                  double dot = 0.0;
                  for (std::size_t k = seg[b]; k < seg[b + 1]; ++k) dot += g[k] * y[k];
                  for (std::size_t k = seg[b]; k < seg[b + 1]; ++k) s[k] += y[k] * (g[k] - dot);
                }
              });
}

Var Tape::segment_weighted_sum(Var weights, Var values, std::span<const std::size_t> offsets) {
  check_owner(weights);
  check_owner(values);
  const Tensor& W = val(weights);
  const Tensor& Y = val(values);
  if (W.cols() != 1 || W.rows() != Y.rows()) mismatch("segment_weighted_sum", W, Y);
  check_offsets("segment_weighted_sum", offsets, Y.rows());
  const std::size_t d = Y.cols(), nseg = offsets.size() - 1;
  Tensor out(matrix_shape(nseg, d));
  for (std::size_t b = 0; b < nseg; ++b)
    for (std::size_t s = offsets[b]; s < offsets[b + 1]; ++s)
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += W[s] * Y[s * d + c];
  std::vector<std::size_t> seg(offsets.begin(), offsets.end());
  return push(std::move(out), {weights, values},
              [this, weights, values, d, seg = std::move(seg)](const Tensor& g, std::vector<Tensor>& grads) {
                const Tensor& W = val(weights);
                const Tensor& Y = val(values);
                Tensor* gw = needs(weights) ? &slot(grads, weights) : nullptr;
                Tensor* gy = needs(values) ? &slot(grads, values) : nullptr;
                for (std::size_t b = 0; b + 1 < seg.size(); ++b)
                  for (std::size_t s = seg[b]; s < seg[b + 1]; ++s)
                    for (std::size_t c = 0; c < d; ++c) {
                      if (gw) (*gw)[s] += g[b * d + c] * Y[s * d + c];
                      if (gy) (*gy)[s * d + c] += g[b * d + c] * W[s];
                    }
              });
}

Var Tape::gaussian_log_prob(Var mean, Var log_std, const Tensor& target) {
  check_owner(mean);
  check_owner(log_std);
  const Tensor& M = val(mean);
  const Tensor& L = val(log_std);
  if (M.rows() != target.rows() || M.cols() != target.cols()) mismatch("gaussian_log_prob", M, target);
  if (L.rows() != 1 || L.cols() != M.cols()) mismatch("gaussian_log_prob", M, L);
  const std::size_t n = M.rows(), d = M.cols();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out(matrix_shape(n, 1));
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = (target[r * d + c] - M[r * d + c]) * std::exp(-L[c]);
      acc += -0.5 * z * z - L[c] - half_log_2pi;
    }
    out[r] = acc;
  }
  return push(std::move(out), {mean, log_std},
              [this, mean, log_std, target, n, d](const Tensor& g, std::vector<Tensor>& grads) {
                const Tensor& M = val(mean);
                const Tensor& L = val(log_std);
                Tensor* gm = needs(mean) ? &slot(grads, mean) : nullptr;
                Tensor* gl = needs(log_std) ? &slot(grads, log_std) : nullptr;
                for (std::size_t r = 0; r < n; ++r)
                  for (std::size_t c = 0; c < d; ++c) {
                    const double inv_var = std::exp(-2.0 * L[c]);
                    const double diff = target[r * d + c] - M[r * d + c];
                    if (gm) (*gm)[r * d + c] += g[r] * diff * inv_var;
                    if (gl) (*gl)[c] += g[r] * (diff * diff * inv_var - 1.0);
                  }
              });
}

std::vector<Tensor> Tape::backward(Var root) const {
  check_owner(root);
  const Tensor& R = val(root);
  if (R.size() != 1 || R.rank() > 2 || (R.rank() > 0 && R.rows() * R.cols() != 1))
    throw ShapeError("backward: root must be scalar, got " + shape_string(R.shape()));

  std::vector<Tensor> grads(nodes_.size());
  if (nodes_[root.id_].needs_grad) {
    grads[root.id_] = Tensor(R.shape(), 1.0);
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.needs_grad || !node.backprop || grads[i].empty()) continue;
      node.backprop(grads[i], grads);
    }
  }

  std::vector<Tensor> out;
  out.reserve(leaves_.size());
  for (std::size_t id : leaves_) {
    if (grads[id].empty())
      out.emplace_back(nodes_[id].value.shape());
    else
      out.push_back(std::move(grads[id]));
  }
  return out;
}

}  // namespace trajclust::nn
