#include "hmae/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "hmae/pauli.hpp"

namespace hmae::ag {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

Var make_node(MatrixXd value, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->id = g_next_id.fetch_add(1);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw shape_error(std::string(op) + ": shape mismatch " +
                      std::to_string(a->value.rows()) + "x" + std::to_string(a->value.cols()) +
                      " vs " + std::to_string(b->value.rows()) + "x" +
                      std::to_string(b->value.cols()));
}

}  // namespace

Var parameter(MatrixXd value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->grad = MatrixXd::Zero(node->value.rows(), node->value.cols());
  node->requires_grad = true;
  node->id = g_next_id.fetch_add(1);
  return node;
}

Var constant(MatrixXd value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = false;
  node->id = g_next_id.fetch_add(1);
  return node;
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a->value + b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->value - b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad -= n.grad;
  });
}

Var scale(const Var& a, double s) {
  return make_node(a->value * s, {a}, [s](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += s * n.grad;
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows())
    throw shape_error("matmul: inner dimensions differ");
  return make_node(a->value * b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad += n.grad * n.parents[1]->value.transpose();
    if (n.parents[1]->requires_grad)
      n.parents[1]->grad += n.parents[0]->value.transpose() * n.grad;
  });
}

Var transpose(const Var& a) {
  return make_node(a->value.transpose(), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad.transpose();
  });
}

Var cwise_mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cwise_mul");
  return make_node(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->value);
    if (n.parents[1]->requires_grad)
      n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value);
  });
}

Var cwise_mul_const(const Var& a, const MatrixXd& m) {
  if (a->value.rows() != m.rows() || a->value.cols() != m.cols())
    throw shape_error("cwise_mul_const: shape mismatch");
  return make_node(a->value.cwiseProduct(m), {a}, [m](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad.cwiseProduct(m);
  });
}

Var relu(const Var& a) {
  return make_node(a->value.cwiseMax(0.0), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->grad +=
        n.grad.cwiseProduct((n.parents[0]->value.array() > 0.0).cast<double>().matrix());
  });
}

Var softmax_rows(const Var& a) {
  MatrixXd out = a->value;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::RowVectorXd row = out.row(i);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    out.row(i) = row / row.sum();
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    // dX_i = (dY_i - <dY_i, Y_i>) ∘ Y_i per row
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const double dot = n.grad.row(i).dot(n.value.row(i));
      n.parents[0]->grad.row(i) +=
          (n.grad.row(i).array() - dot).matrix().cwiseProduct(n.value.row(i));
    }
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const Eigen::Index d = a->value.cols();
  MatrixXd out(a->value.rows(), d);
  Eigen::VectorXd inv_sigma(a->value.rows());
  for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
    const double mu = a->value.row(i).mean();
    const double var = (a->value.row(i).array() - mu).square().mean();
    inv_sigma(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (a->value.row(i).array() - mu) * inv_sigma(i);
  }
  return make_node(std::move(out), {a}, [inv_sigma](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    // dx = (g - mean(g) - y * mean(g ∘ y)) / sigma per row
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      const Eigen::RowVectorXd g = n.grad.row(i);
      const Eigen::RowVectorXd y = n.value.row(i);
      const double gm = g.mean();
      const double gym = g.cwiseProduct(y).mean();
      n.parents[0]->grad.row(i) +=
          inv_sigma(i) * (g.array() - gm - y.array() * gym).matrix();
    }
  });
}

Var add_row_broadcast(const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
    throw shape_error("add_row_broadcast: row must be 1 x cols(a)");
  return make_node(a->value.rowwise() + row->value.row(0), {a, row}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad += n.grad.colwise().sum();
  });
}

Var mul_row_broadcast(const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
    throw shape_error("mul_row_broadcast: row must be 1 x cols(a)");
  MatrixXd out = a->value.array().rowwise() * row->value.row(0).array();
  return make_node(std::move(out), {a, row}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad +=
          (n.grad.array().rowwise() * n.parents[1]->value.row(0).array()).matrix();
    if (n.parents[1]->requires_grad)
      n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value).colwise().sum();
  });
}

Var mean_rows(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.rows());
  return make_node(a->value.colwise().mean(), {a}, [inv](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->grad += inv * n.grad.row(0).replicate(n.parents[0]->value.rows(), 1);
  });
}

Var col_block(const Var& a, Eigen::Index col0, Eigen::Index cols) {
  if (col0 < 0 || cols <= 0 || col0 + cols > a->value.cols())
    throw shape_error("col_block: range out of bounds");
  return make_node(a->value.middleCols(col0, cols), {a}, [col0, cols](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad.middleCols(col0, cols) += n.grad;
  });
}

Var row_block(const Var& a, Eigen::Index row0, Eigen::Index rows) {
  if (row0 < 0 || rows <= 0 || row0 + rows > a->value.rows())
    throw shape_error("row_block: range out of bounds");
  return make_node(a->value.middleRows(row0, rows), {a}, [row0, rows](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad.middleRows(row0, rows) += n.grad;
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw shape_error("hconcat: no parts");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != parts[0]->value.rows())
      throw shape_error("hconcat: row count mismatch");
    cols += p->value.cols();
  }
  MatrixXd out(parts[0]->value.rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
  }
  return make_node(std::move(out), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->grad += n.grad.middleCols(at, p->value.cols());
      at += p->value.cols();
    }
  });
}

Var weighted_row_sse(const Var& pred, const MatrixXd& target,
                     const Eigen::VectorXd& row_weights) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols())
    throw shape_error("weighted_row_sse: target shape mismatch");
  if (row_weights.size() != pred->value.rows())
    throw shape_error("weighted_row_sse: weight count mismatch");
  MatrixXd diff = pred->value - target;
  double total = 0.0;
  for (Eigen::Index i = 0; i < diff.rows(); ++i)
    total += row_weights(i) * diff.row(i).squaredNorm();
  MatrixXd out(1, 1);
  out(0, 0) = total;
  return make_node(std::move(out), {pred},
                   [diff = std::move(diff), row_weights](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const double g = n.grad(0, 0);
                     for (Eigen::Index i = 0; i < diff.rows(); ++i)
                       n.parents[0]->grad.row(i) += 2.0 * g * row_weights(i) * diff.row(i);
                   });
}

Var mse(const Var& pred, const MatrixXd& target) {
  if (pred->value.rows() != target.rows() || pred->value.cols() != target.cols())
    throw shape_error("mse: target shape mismatch");
  const double inv = 1.0 / static_cast<double>(target.size());
  MatrixXd diff = pred->value - target;
  MatrixXd out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return make_node(std::move(out), {pred}, [diff = std::move(diff), inv](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->grad += 2.0 * inv * n.grad(0, 0) * diff;
  });
}

void backward(const Var& loss) {
  if (loss->value.rows() != 1 || loss->value.cols() != 1)
    throw shape_error("backward: loss must be 1x1");
  if (!loss->requires_grad) return;

  // Collect reachable grad-requiring nodes; descending creation id is a valid
  // reverse topological order since parents are always created first.
  std::vector<Var> order;
  std::unordered_set<Node*> seen;
  std::vector<Var> stack{loss};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Var cur = std::move(stack.back());
    stack.pop_back();
    order.push_back(cur);
    for (const auto& p : order.back()->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Var& a, const Var& b) { return a->id > b->id; });

  for (const auto& node : order) {
    if (node->grad.size() == 0)
      node->grad = MatrixXd::Zero(node->value.rows(), node->value.cols());
  }
  loss->grad(0, 0) = 1.0;
  for (const auto& node : order) {
    if (node->backward_fn) node->backward_fn(*node);
  }
}

}  // namespace hmae::ag
