#include "motionsep/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "motionsep/errors.hpp"

namespace motionsep::ag {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

Tensor& Node::ensure_grad() {
  if (!has_grad) {
    grad = Tensor(value.shape());
    has_grad = true;
  }
  return grad;
}

void Node::accum_grad(const Tensor& g) {
  Tensor& dst = ensure_grad();
  if (!dst.same_shape(g)) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                     shape_str(dst.shape()) + (name.empty() ? "" : " for " + name));
  }
  for (int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

NodeRef leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

NodeRef constant(Tensor value) { return leaf(std::move(value), false); }

namespace {

NodeRef make_op(Tensor value, std::vector<NodeRef> parents,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

// ---- broadcasting machinery ----

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (size_t i = 0; i < nd; ++i) {
    const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> str(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    str[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return str;
}

// Strides for reading `in` at each axis of the broadcast shape `out`
// (0 where the input axis is stretched).
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> str(out.size(), 0);
  const auto in_str = contiguous_strides(in);
  const size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) str[off + i] = in_str[i];
  }
  return str;
}

// Applies f(a_elem, b_elem) over the broadcast of two tensors.
template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, F f) {
  if (a.same_shape(b)) {  // fast path: elementwise
    Tensor out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  Tensor out(os);
  const int nd = static_cast<int>(os.size());
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = f(a[offa], b[offb]);
    for (int ax = nd - 1; ax >= 0; --ax) {
      auto& ia = idx[static_cast<size_t>(ax)];
      ++ia;
      offa += sa[static_cast<size_t>(ax)];
      offb += sb[static_cast<size_t>(ax)];
      if (ia < os[static_cast<size_t>(ax)]) break;
      offa -= sa[static_cast<size_t>(ax)] * ia;
      offb -= sb[static_cast<size_t>(ax)] * ia;
      ia = 0;
    }
  }
  return out;
}

// Sums g (shaped like the broadcast output) down to `target` shape.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const auto st = broadcast_strides(target, g.shape());
  const Shape& os = g.shape();
  const int nd = static_cast<int>(os.size());
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t offt = 0;
  for (int64_t i = 0; i < g.size(); ++i) {
    out[offt] += g[i];
    for (int ax = nd - 1; ax >= 0; --ax) {
      auto& ia = idx[static_cast<size_t>(ax)];
      ++ia;
      offt += st[static_cast<size_t>(ax)];
      if (ia < os[static_cast<size_t>(ax)]) break;
      offt -= st[static_cast<size_t>(ax)] * ia;
      ia = 0;
    }
  }
  return out;
}

// Multiplies grad-of-output by a weight tensor under broadcast, then reduces
// to the target parent shape. Used by mul's backward.
Tensor bc_mul_reduce(const Tensor& g, const Tensor& other, const Shape& target) {
  Tensor prod = broadcast_apply(g, other, [](double x, double y) { return x * y; });
  return reduce_to(prod, target);
}

int64_t rows_before_last(const Shape& s) {
  int64_t n = 1;
  for (size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

// ---- elementwise ----

NodeRef add(const NodeRef& a, const NodeRef& b) {
  Tensor v = broadcast_apply(a->value, b->value, [](double x, double y) { return x + y; });
  return make_op(std::move(v), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->accum_grad(reduce_to(n.grad, a->shape()));
    if (b->requires_grad) b->accum_grad(reduce_to(n.grad, b->shape()));
  });
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  Tensor v = broadcast_apply(a->value, b->value, [](double x, double y) { return x - y; });
  return make_op(std::move(v), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->accum_grad(reduce_to(n.grad, a->shape()));
    if (b->requires_grad) {
      Tensor neg = n.grad;
      for (int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      b->accum_grad(reduce_to(neg, b->shape()));
    }
  });
}

NodeRef mul(const NodeRef& a, const NodeRef& b) {
  Tensor v = broadcast_apply(a->value, b->value, [](double x, double y) { return x * y; });
  return make_op(std::move(v), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->accum_grad(bc_mul_reduce(n.grad, b->value, a->shape()));
    if (b->requires_grad) b->accum_grad(bc_mul_reduce(n.grad, a->value, b->shape()));
  });
}

NodeRef scale(const NodeRef& a, double s) {
  Tensor v = a->value;
  for (int64_t i = 0; i < v.size(); ++i) v[i] *= s;
  return make_op(std::move(v), {a}, [a, s](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.size(); ++i) g[i] *= s;
    a->accum_grad(g);
  });
}

NodeRef add_scalar(const NodeRef& a, double s) {
  Tensor v = a->value;
  for (int64_t i = 0; i < v.size(); ++i) v[i] += s;
  return make_op(std::move(v), {a}, [a](Node& n) { a->accum_grad(n.grad); });
}

NodeRef silu(const NodeRef& a) {
  Tensor v(a->shape());
  for (int64_t i = 0; i < v.size(); ++i) {
    const double x = a->value[i];
    v[i] = x / (1.0 + std::exp(-x));
  }
  return make_op(std::move(v), {a}, [a](Node& n) {
    Tensor g(a->shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const double x = a->value[i];
      const double sig = 1.0 / (1.0 + std::exp(-x));
      g[i] = n.grad[i] * sig * (1.0 + x * (1.0 - sig));
    }
    a->accum_grad(g);
  });
}

// ---- linear algebra ----

NodeRef linear(const NodeRef& x, const NodeRef& w) {
  const Shape& xs = x->shape();
  const Shape& ws = w->shape();
  if (ws.size() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(ws));
  const int64_t d_in = xs.back();
  const int64_t d_out = ws[0];
  if (ws[1] != d_in) {
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(ws));
  }
  const int64_t rows = rows_before_last(xs);
  Shape out_shape = xs;
  out_shape.back() = d_out;
  Tensor out(out_shape);
  {
    CMapM X(x->value.data(), rows, d_in);
    CMapM W(w->value.data(), d_out, d_in);
    MapM Y(out.data(), rows, d_out);
    Y.noalias() = X * W.transpose();
  }
  return make_op(std::move(out), {x, w}, [x, w, rows, d_in, d_out](Node& n) {
    CMapM G(n.grad.data(), rows, d_out);
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      MapM GX(gx.data(), rows, d_in);
      CMapM W(w->value.data(), d_out, d_in);
      GX.noalias() += G * W;
    }
    if (w->requires_grad) {
      Tensor& gw = w->ensure_grad();
      MapM GW(gw.data(), d_out, d_in);
      CMapM X(x->value.data(), rows, d_in);
      GW.noalias() += G.transpose() * X;
    }
  });
}

NodeRef affine(const NodeRef& x, const NodeRef& w, const NodeRef& b) {
  return add(linear(x, w), b);
}

NodeRef bmm(const NodeRef& a, const NodeRef& b, bool trans_a, bool trans_b) {
  const Shape& as = a->shape();
  const Shape& bs = b->shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) {
    throw ShapeError("bmm: want matching 3-D batches, got " + shape_str(as) + " and " +
                     shape_str(bs));
  }
  const int64_t batch = as[0];
  const int64_t n = trans_a ? as[2] : as[1];
  const int64_t k = trans_a ? as[1] : as[2];
  const int64_t kb = trans_b ? bs[2] : bs[1];
  const int64_t m = trans_b ? bs[1] : bs[2];
  if (k != kb) {
    throw ShapeError("bmm: inner dims disagree for " + shape_str(as) + " and " + shape_str(bs));
  }
  Tensor out({batch, n, m});
  for (int64_t i = 0; i < batch; ++i) {
    CMapM A(a->value.data() + i * as[1] * as[2], as[1], as[2]);
    CMapM B(b->value.data() + i * bs[1] * bs[2], bs[1], bs[2]);
    MapM O(out.data() + i * n * m, n, m);
    if (!trans_a && !trans_b) O.noalias() = A * B;
    else if (!trans_a && trans_b) O.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) O.noalias() = A.transpose() * B;
    else O.noalias() = A.transpose() * B.transpose();
  }
  return make_op(std::move(out), {a, b}, [a, b, trans_a, trans_b, batch, n, m](Node& nd) {
    const Shape& as = a->shape();
    const Shape& bs = b->shape();
    for (int64_t i = 0; i < batch; ++i) {
      CMapM G(nd.grad.data() + i * n * m, n, m);
      CMapM A(a->value.data() + i * as[1] * as[2], as[1], as[2]);
      CMapM B(b->value.data() + i * bs[1] * bs[2], bs[1], bs[2]);
      if (a->requires_grad) {
        MapM GA(a->ensure_grad().data() + i * as[1] * as[2], as[1], as[2]);
        if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
        else if (!trans_a && trans_b) GA.noalias() += G * B;
        else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (b->requires_grad) {
        MapM GB(b->ensure_grad().data() + i * bs[1] * bs[2], bs[1], bs[2]);
        if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
        else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
        else if (trans_a && !trans_b) GB.noalias() += A * G;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

// ---- softmax / layer norm ----

NodeRef softmax_last(const NodeRef& x) {
  const int64_t d = x->shape().back();
  const int64_t rows = rows_before_last(x->shape());
  Tensor out(x->shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x->value.data() + r * d;
    double* o = out.data() + r * d;
    double mx = in[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (int64_t j = 0; j < d; ++j) o[j] /= sum;
  }
  Tensor y = out;  // retained for the backward pass
  return make_op(std::move(out), {x}, [x, y = std::move(y), rows, d](Node& n) {
    Tensor g(x->shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double* yv = y.data() + r * d;
      const double* gv = n.grad.data() + r * d;
      double inner = 0.0;
      for (int64_t j = 0; j < d; ++j) inner += yv[j] * gv[j];
      double* go = g.data() + r * d;
      for (int64_t j = 0; j < d; ++j) go[j] = yv[j] * (gv[j] - inner);
    }
    x->accum_grad(g);
  });
}

NodeRef layer_norm(const NodeRef& x, const NodeRef& gamma, const NodeRef& beta, double eps) {
  const int64_t d = x->shape().back();
  if (gamma->shape() != Shape{d} || beta->shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta must be (" + std::to_string(d) + ")");
  }
  const int64_t rows = rows_before_last(x->shape());
  Tensor out(x->shape());
  Tensor xhat(x->shape());
  std::vector<double> inv(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x->value.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[static_cast<size_t>(r)] = iv;
    double* xh = xhat.data() + r * d;
    double* o = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mu) * iv;
      o[j] = gamma->value[j] * xh[j] + beta->value[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), rows, d](Node& n) {
                   Tensor gg({d});
                   Tensor gb({d});
                   Tensor gx(x->shape());
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* xh = xhat.data() + r * d;
                     const double* gv = n.grad.data() + r * d;
                     double m1 = 0.0, m2 = 0.0;
                     for (int64_t j = 0; j < d; ++j) {
                       const double gxh = gv[j] * gamma->value[j];
                       m1 += gxh;
                       m2 += gxh * xh[j];
                       gg[j] += gv[j] * xh[j];
                       gb[j] += gv[j];
                     }
                     m1 /= static_cast<double>(d);
                     m2 /= static_cast<double>(d);
                     const double iv = inv[static_cast<size_t>(r)];
                     double* go = gx.data() + r * d;
                     for (int64_t j = 0; j < d; ++j) {
                       const double gxh = gv[j] * gamma->value[j];
                       go[j] = iv * (gxh - m1 - xh[j] * m2);
                     }
                   }
                   if (x->requires_grad) x->accum_grad(gx);
                   if (gamma->requires_grad) gamma->accum_grad(gg);
                   if (beta->requires_grad) beta->accum_grad(gb);
                 });
}

// ---- shape manipulation ----

NodeRef reshape(const NodeRef& x, Shape shape) {
  Tensor v = x->value.reshaped(shape);
  return make_op(std::move(v), {x}, [x](Node& n) {
    x->accum_grad(n.grad.reshaped(x->shape()));
  });
}

namespace {

Tensor permute_tensor(const Tensor& in, const std::vector<int>& perm) {
  const Shape& s = in.shape();
  const int nd = static_cast<int>(s.size());
  Shape os(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) os[static_cast<size_t>(i)] = s[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  Tensor out(os);
  const auto ostr = contiguous_strides(os);
  // Walking the input linearly, axis ax of the input advances output axis
  // inv_perm[ax].
  std::vector<int64_t> step(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) step[static_cast<size_t>(perm[static_cast<size_t>(i)])] = ostr[static_cast<size_t>(i)];
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t ooff = 0;
  for (int64_t i = 0; i < in.size(); ++i) {
    out[ooff] = in[i];
    for (int ax = nd - 1; ax >= 0; --ax) {
      auto& ia = idx[static_cast<size_t>(ax)];
      ++ia;
      ooff += step[static_cast<size_t>(ax)];
      if (ia < s[static_cast<size_t>(ax)]) break;
      ooff -= step[static_cast<size_t>(ax)] * ia;
      ia = 0;
    }
  }
  return out;
}

}  // namespace

NodeRef permute(const NodeRef& x, std::vector<int> perm) {
  const int nd = x->value.ndim();
  if (static_cast<int>(perm.size()) != nd) {
    throw ShapeError("permute: axis list rank mismatch for " + shape_str(x->shape()));
  }
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int p : perm) {
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)]) {
      throw ShapeError("permute: invalid axis permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Tensor v = permute_tensor(x->value, perm);
  return make_op(std::move(v), {x}, [x, perm](Node& n) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    x->accum_grad(permute_tensor(n.grad, inv));
  });
}

NodeRef broadcast_to(const NodeRef& x, Shape shape) {
  const Shape in = x->shape();
  broadcast_shape(in, shape);  // validates compatibility
  Tensor ones(shape, 0.0);
  Tensor v = broadcast_apply(x->value, ones, [](double a, double) { return a; });
  if (v.shape() != shape) {
    throw ShapeError("broadcast_to: " + shape_str(in) + " does not expand to " + shape_str(shape));
  }
  return make_op(std::move(v), {x}, [x](Node& n) {
    x->accum_grad(reduce_to(n.grad, x->shape()));
  });
}

NodeRef concat_last(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const Shape base = parts[0]->shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p->shape();
    if (s.size() != base.size()) throw ShapeError("concat_last: rank mismatch");
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      if (s[i] != base[i]) throw ShapeError("concat_last: leading dims differ");
    }
    total += s.back();
  }
  Shape os = base;
  os.back() = total;
  const int64_t rows = rows_before_last(base);
  Tensor out(os);
  int64_t col = 0;
  for (const auto& p : parts) {
    const int64_t d = p->shape().back();
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(p->value.data() + r * d, d, out.data() + r * total + col);
    }
    col += d;
  }
  std::vector<NodeRef> parents = parts;
  return make_op(std::move(out), std::move(parents), [parts, rows, total](Node& n) {
    int64_t col = 0;
    for (const auto& p : parts) {
      const int64_t d = p->shape().back();
      if (p->requires_grad) {
        Tensor g(p->shape());
        for (int64_t r = 0; r < rows; ++r) {
          std::copy_n(n.grad.data() + r * total + col, d, g.data() + r * d);
        }
        p->accum_grad(g);
      }
      col += d;
    }
  });
}

NodeRef slice_last(const NodeRef& x, int64_t start, int64_t len) {
  const Shape& s = x->shape();
  const int64_t d = s.back();
  if (start < 0 || len <= 0 || start + len > d) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " + std::to_string(d));
  }
  Shape os = s;
  os.back() = len;
  const int64_t rows = rows_before_last(s);
  Tensor out(os);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(x->value.data() + r * d + start, len, out.data() + r * len);
  }
  return make_op(std::move(out), {x}, [x, start, len, rows, d](Node& n) {
    Tensor g(x->shape());
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(n.grad.data() + r * len, len, g.data() + r * d + start);
    }
    x->accum_grad(g);
  });
}

NodeRef gather_rows(const NodeRef& table, std::vector<int64_t> indices) {
  const Shape& s = table->shape();
  if (s.size() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_str(s));
  const int64_t n = s[0];
  const int64_t d = s[1];
  for (int64_t i : indices) {
    if (i < 0 || i >= n) {
      throw VocabError("gather_rows: index " + std::to_string(i) + " outside table of " +
                       std::to_string(n) + " rows");
    }
  }
  const int64_t k = static_cast<int64_t>(indices.size());
  Tensor out({k, d});
  for (int64_t r = 0; r < k; ++r) {
    std::copy_n(table->value.data() + indices[static_cast<size_t>(r)] * d, d, out.data() + r * d);
  }
  return make_op(std::move(out), {table}, [table, indices = std::move(indices), d](Node& n) {
    Tensor g(table->shape());
    for (size_t r = 0; r < indices.size(); ++r) {
      const double* src = n.grad.data() + static_cast<int64_t>(r) * d;
      double* dst = g.data() + indices[r] * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    table->accum_grad(g);
  });
}

// ---- reductions ----

NodeRef sum_all(const NodeRef& x) {
  Tensor v = Tensor::scalar(x->value.sum());
  return make_op(std::move(v), {x}, [x](Node& n) {
    Tensor g(x->shape(), n.grad[0]);
    x->accum_grad(g);
  });
}

NodeRef mean_all(const NodeRef& x) {
  const double inv = 1.0 / static_cast<double>(x->value.size());
  Tensor v = Tensor::scalar(x->value.sum() * inv);
  return make_op(std::move(v), {x}, [x, inv](Node& n) {
    Tensor g(x->shape(), n.grad[0] * inv);
    x->accum_grad(g);
  });
}

NodeRef mse(const NodeRef& a, const NodeRef& b) {
  NodeRef d = sub(a, b);
  return mean_all(mul(d, d));
}

// ---- backward driver ----

void backward(const NodeRef& root, const Tensor* seed) {
  if (!root->requires_grad) return;
  // Post-order over parents, then reverse: children before parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  if (seed) {
    root->accum_grad(*seed);
  } else {
    root->accum_grad(Tensor(root->shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
}

}  // namespace motionsep::ag
