// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Leaves either carry a
// gradient sink (a caller-owned matrix that receives the accumulated gradient
// on backward) or are frozen. Gradients are only propagated through nodes that
// transitively depend on a trainable leaf, so frozen subgraphs cost nothing on
// the backward pass.
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace lta {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

namespace ad {

struct Var {
  int id = -1;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value with no gradient.
  Var constant(Mat value);
  /// Parameter referenced in place; `sink` (may be null) receives d(out)/d(param).
  Var param(const Mat& value, Mat* sink);

  const Mat& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  double scalar(Var v) const { return value(v)(0, 0); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every sink.
  void backward(Var out);

  // Internal API for op implementations.
  using BackFn = std::function<void(Tape&, int self)>;
  Var push(Mat value, bool needs_grad, BackFn back);
  Mat& grad(int id);
  const Mat& value(int id) const { return value(Var{id}); }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    Mat* sink = nullptr;
    bool needs_grad = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// a [m x k] * b [k x n]
Var matmul(Tape& t, Var a, Var b);
/// a [m x k] * b^T where b is [n x k]; the x * W^T convention of linear layers.
Var matmul_nt(Tape& t, Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var relu(Tape& t, Var a);
/// Row-wise RMS normalisation with per-column gain (1 x d).
Var rms_norm(Tape& t, Var x, Var gain, double eps);

// Shape manipulation.
Var rows(Tape& t, Var a, int begin, int count);
Var concat_rows(Tape& t, std::span<const Var> parts);
/// Embedding lookup: out row i = table row ids[i].
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
/// Mean over rows -> 1 x d.
Var mean_rows(Tape& t, Var a);
Var reshape(Tape& t, Var a, int rows, int cols);
/// Weighted sum of 1x1 scalars.
Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> weights);

/// Multi-head scaled dot-product attention over q, k, v of shape [T x d].
/// `causal` masks keys after the query position.
Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal);

}  // namespace ad
}  // namespace lta
