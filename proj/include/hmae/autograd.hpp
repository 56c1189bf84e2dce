#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

namespace hmae::ag {

using Eigen::MatrixXd;

/// One matrix-valued node of a dynamically built computation graph.
struct Node {
  MatrixXd value;
  MatrixXd grad;
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order; parents always precede children
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents
};

using Var = std::shared_ptr<Node>;

/// Leaf that accumulates gradients (a trainable parameter).
Var parameter(MatrixXd value);
/// Leaf treated as data: no gradient flows into it.
Var constant(MatrixXd value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var cwise_mul(const Var& a, const Var& b);      // same shape
Var cwise_mul_const(const Var& a, const MatrixXd& m);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
/// Per-row standardization (x - mean)/sqrt(var + eps); no affine part.
Var layer_norm_rows(const Var& a, double eps = 1e-5);
/// Row-broadcast: adds a 1 x d row vector to every row of a.
Var add_row_broadcast(const Var& a, const Var& row);
/// Row-broadcast elementwise product with a 1 x d row vector.
Var mul_row_broadcast(const Var& a, const Var& row);
/// 1 x d mean over rows.
Var mean_rows(const Var& a);
/// Column block view [col0, col0+cols); gradients accumulate into the block.
Var col_block(const Var& a, Eigen::Index col0, Eigen::Index cols);
/// Rows r0..r0+rows of a parameter/matrix (e.g. position-embedding lookup).
Var row_block(const Var& a, Eigen::Index row0, Eigen::Index rows);
Var hconcat(const std::vector<Var>& parts);

/// Scalar (1x1) node: sum_i w_i ||pred_i - target_i||^2 over rows.
Var weighted_row_sse(const Var& pred, const MatrixXd& target,
                     const Eigen::VectorXd& row_weights);
/// Scalar mean squared error against a constant target.
Var mse(const Var& pred, const MatrixXd& target);

/// Reverse-mode sweep from a 1x1 loss node. Accumulates into .grad of every
/// reachable node with requires_grad set.
void backward(const Var& loss);

}  // namespace hmae::ag
