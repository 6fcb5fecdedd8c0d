#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "motionsep/tensor.hpp"

namespace motionsep::ag {

// Reverse-mode autodiff over a dynamically built DAG. Values and gradients
// are double precision throughout; matrix products are delegated to Eigen.
// The graph is rebuilt per forward pass; nodes own their parents, so keeping
// the root alive keeps everything reachable.

struct Node;
using NodeRef = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // valid only when has_grad
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<NodeRef> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
  std::string name;                        // parameter / debug label

  const Shape& shape() const { return value.shape(); }
  Tensor& ensure_grad();
  void accum_grad(const Tensor& g);
  void clear_grad() { has_grad = false; }
};

NodeRef leaf(Tensor value, bool requires_grad = true, std::string name = {});
NodeRef constant(Tensor value);

// Runs reverse-mode accumulation from root. If seed is empty the root is
// seeded with ones (the usual scalar-loss case).
void backward(const NodeRef& root, const Tensor* seed = nullptr);

// --- elementwise / broadcast ---
// Binary ops broadcast with trailing-axis alignment (an axis of size 1, or a
// missing leading axis, stretches to match).
NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef mul(const NodeRef& a, const NodeRef& b);
NodeRef scale(const NodeRef& a, double s);
NodeRef add_scalar(const NodeRef& a, double s);
NodeRef silu(const NodeRef& a);

// --- linear algebra ---
// x: (..., d_in), w: (d_out, d_in) -> (..., d_out); y = x * w^T.
NodeRef linear(const NodeRef& x, const NodeRef& w);
// x * w^T + b with b: (d_out).
NodeRef affine(const NodeRef& x, const NodeRef& w, const NodeRef& b);
// Batched matmul on 3-D tensors: (B, n, k) x (B, k, m) -> (B, n, m), with
// optional per-slice transposes applied before multiplying.
NodeRef bmm(const NodeRef& a, const NodeRef& b, bool trans_a = false, bool trans_b = false);

// --- normalization / attention pieces ---
NodeRef softmax_last(const NodeRef& x);
NodeRef layer_norm(const NodeRef& x, const NodeRef& gamma, const NodeRef& beta,
                   double eps = 1e-5);

// --- shape manipulation ---
NodeRef reshape(const NodeRef& x, Shape shape);
NodeRef permute(const NodeRef& x, std::vector<int> perm);
NodeRef broadcast_to(const NodeRef& x, Shape shape);
NodeRef concat_last(const std::vector<NodeRef>& parts);
NodeRef slice_last(const NodeRef& x, int64_t start, int64_t len);
// table: (n, d), indices into its rows -> (k, d).
NodeRef gather_rows(const NodeRef& table, std::vector<int64_t> indices);

// --- reductions ---
NodeRef sum_all(const NodeRef& x);
NodeRef mean_all(const NodeRef& x);
// mean((a - b)^2) as a scalar node.
NodeRef mse(const NodeRef& a, const NodeRef& b);

}  // namespace motionsep::ag
