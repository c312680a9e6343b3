#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <deque>
#include <vector>

#include "trajclust/tensor.hpp"

namespace trajclust::nn {

/// Sparse 0/1 design matrix in CSR form: row r has a one in every column
/// listed in indices[offsets[r], offsets[r+1]).
struct SparseRows {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::size_t cols = 0;

  std::size_t rows() const { return offsets.size() - 1; }
  void add_row(std::span<const std::uint32_t> active);
  /// Dense copy, for tests and small inputs.
  Tensor to_dense() const;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(const Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  const Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of forward operations. Nodes are appended in
/// execution order, so the node list is already topologically sorted and the
/// backward pass is one reverse sweep.
///
/// A Tape is single-owner; it is neither copyable nor movable because the
/// recorded backward closures refer to it.
class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return track_; }

  Var constant(Tensor value);
  /// Tracked parameter. backward() reports its gradient at position
  /// leaf_count() (as of this call).
  Var leaf(Tensor value);
  std::size_t leaf_count() const { return leaves_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// [n x d] + [1 x d], the row broadcast over every row of a.
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  /// Along the last axis.
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var sum(Var a);
  Var mean(Var a);
  /// Pairwise squared Euclidean distances of rows: [n x d], [m x d] -> [n x m].
  Var sq_dist(Var a, Var b);
  /// Column concatenation of two matrices with equal row counts.
  Var concat(Var a, Var b);
  /// Minimum of each row, [n x m] -> [n x 1]; the gradient flows to the
  /// first minimal entry.
  Var row_min(Var a);
  Var clamp_max(Var a, double cap);

  /// Row r of the result is the sum of table rows listed in sparse row r.
  Var embedding_bag(Var table, const SparseRows& rows);
  Var gather_rows(Var a, std::span<const std::size_t> index);
  /// out[r] = a[r, column[r]], shape [n x 1].
  Var pick(Var a, std::span<const std::size_t> column);
  /// Softmax of a [S x 1] column within each segment [offsets[b], offsets[b+1]).
  Var segment_softmax(Var scores, std::span<const std::size_t> offsets);
  /// out[b] = sum_{s in segment b} weights[s] * values[s], shape [B x d].
  Var segment_weighted_sum(Var weights, Var values, std::span<const std::size_t> offsets);
  /// Diagonal-Gaussian log density of each target row, [S x d] -> [S x 1].
  /// log_std is [1 x d] and shared by all rows.
  Var gaussian_log_prob(Var mean, Var log_std, const Tensor& target);

  /// d root / d leaf for every leaf in creation order. Leaves the root does
  /// not depend on get zero tensors. Throws ShapeError for non-scalar roots.
  std::vector<Tensor> backward(Var root) const;

 private:
  using Backprop = std::function<void(const Tensor& grad_out, std::vector<Tensor>& grads)>;

  struct Node {
    Tensor value;
    bool needs_grad = false;
    Backprop backprop;
  };

  Var push(Tensor value, std::initializer_list<Var> parents, Backprop backprop);
  const Tensor& val(Var v) const { return nodes_[v.id_].value; }
  bool needs(Var v) const { return nodes_[v.id_].needs_grad; }
  Tensor& slot(std::vector<Tensor>& grads, Var v) const;
  void check_owner(Var v) const;

  friend class Var;

  bool track_;
  std::deque<Node> nodes_;  // stable addresses for Var::value()
  std::vector<std::size_t> leaves_;
};

}  // namespace trajclust::nn
