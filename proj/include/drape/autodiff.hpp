#pragma once

// Minimal tensor-level reverse-mode differentiation.
//
// A Tape records every value produced during a forward pass together with a
// closure that pushes the output gradient back to its inputs. Values are
// dense row-major matrices; scalars are 1×1. Nodes are appended in
// topological order, so backward() is a single reverse sweep.

#include "drape/types.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <span>
#include <vector>

namespace drape::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  Var constant(Mat value);
  Var variable(Mat value);
  Var record(Mat value, Backward backward, std::span<const Var> inputs);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() root w.r.t. node `id`; zeros if the node
  /// received no gradient.
  Mat grad(int id) const;
  Mat grad(Var v) const { return grad(v.id); }

  /// Adds `g` into the gradient buffer of `v` if it requires gradients.
  void accumulate(Var v, const Mat& g);
  void accumulate_rows(Var v, const std::vector<int>& rows, const Mat& g);

  /// Seeds d(root)/d(root) = 1 (root must be 1×1) and sweeps backwards.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  Mat& grad_buffer(int id);

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Linear algebra.
Var matmul(Var a, Var b);
Var spmm(const SparseMat& a, Var b);  // constant sparse × variable
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);          // broadcast a 1×C row over every row of a
Var mul_row(Var a, Var row);
Var add_col(Var a, Var col);          // broadcast an N×1 column over every column of a
Var mul_col(Var a, Var col);
Var div(Var a, Var b);                // elementwise
Var transpose(Var a);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

// Elementwise nonlinearities.
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var silu(Var a);
Var square(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var clamp(Var a, double lo, double hi);
Var max_scalar(Var a, double lo);

// Reductions and structure.
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);                  // N×C → 1×C
Var sum_cols(Var a);                  // N×C → N×1
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, const std::vector<int>& rows);
Var scatter_rows(Var a, const std::vector<int>& rows, Eigen::Index total_rows);
Var broadcast_rows(Var row, Eigen::Index rows);  // 1×C → N×C
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

/// Dense layer y = x W + b, with W stored (in × out) and b (1 × out).
Var linear(Var x, Var weight, Var bias);

}  // namespace drape::ad
