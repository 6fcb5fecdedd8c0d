#include <doctest.h>

#include <cmath>
#include <functional>

#include "motionsep/autograd.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"

using namespace motionsep;
using namespace motionsep::ag;

namespace {

// Finite-difference oracle: rebuilds the graph per evaluation and compares
// reverse-mode gradients of a scalar loss against central differences for
// every element of every parameter.
void check_grads(const std::vector<NodeRef>& params, const std::function<NodeRef()>& build,
                 double tol = 5e-7, double h = 1e-5) {
  for (const auto& p : params) p->clear_grad();
  NodeRef loss = build();
  REQUIRE(loss->value.size() == 1);
  backward(loss);
  for (const auto& p : params) {
    REQUIRE(p->has_grad);
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double fp = build()->value[0];
      p->value[i] = orig - h;
      const double fm = build()->value[0];
      p->value[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double got = p->grad[i];
      const double scale = std::max({1.0, std::abs(fd), std::abs(got)});
      INFO("param ", p->name, " elem ", i, " fd=", fd, " grad=", got);
      CHECK(std::abs(fd - got) <= tol * scale);
    }
  }
}

NodeRef random_leaf(Shape shape, Rng& rng, const std::string& name) {
  Tensor t(shape);
  rng.fill_normal(t.data(), t.size());
  return leaf(std::move(t), true, name);
}

}  // namespace

TEST_CASE("add/sub/mul values and broadcast gradients") {
  Rng rng(1);
  auto a = random_leaf({2, 3}, rng, "a");
  auto b = random_leaf({3}, rng, "b");
  auto c = random_leaf({2, 1}, rng, "c");

  NodeRef s = add(a, b);
  CHECK(s->value.at({1, 2}) == doctest::Approx(a->value.at({1, 2}) + b->value[2]));

  check_grads({a, b}, [&] { return mean_all(mul(add(a, b), add(a, b))); });
  check_grads({a, c}, [&] { return mean_all(mul(sub(a, c), sub(a, c))); });
  check_grads({a, b, c}, [&] { return mean_all(mul(mul(a, b), c)); });

  auto bad = leaf(Tensor({4}), true);
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("scale, add_scalar, silu") {
  Rng rng(2);
  auto x = random_leaf({5}, rng, "x");
  CHECK(scale(x, 2.5)->value[3] == doctest::Approx(2.5 * x->value[3]));
  CHECK(add_scalar(x, -1.0)->value[0] == doctest::Approx(x->value[0] - 1.0));

  auto z = leaf(Tensor::from({3}, {0.0, 1.0, -2.0}), true, "z");
  NodeRef y = silu(z);
  CHECK(y->value[0] == doctest::Approx(0.0));
  CHECK(y->value[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(y->value[2] == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))));

  check_grads({x}, [&] { return mean_all(silu(scale(add_scalar(x, 0.3), 1.7))); });
}

TEST_CASE("linear matches hand matmul and differentiates") {
  // Hand oracle: y = x W^T with x (2,3), W (4,3).
  auto x = leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), true, "x");
  auto w = leaf(Tensor::from({4, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1}), true, "w");
  NodeRef y = linear(x, w);
  REQUIRE(y->shape() == Shape{2, 4});
  CHECK(y->value.at({0, 0}) == doctest::Approx(1.0));
  CHECK(y->value.at({0, 3}) == doctest::Approx(6.0));
  CHECK(y->value.at({1, 1}) == doctest::Approx(5.0));
  CHECK(y->value.at({1, 3}) == doctest::Approx(15.0));

  Rng rng(3);
  auto xr = random_leaf({2, 2, 3}, rng, "xr");  // leading batch dims collapse
  auto wr = random_leaf({4, 3}, rng, "wr");
  auto br = random_leaf({4}, rng, "br");
  check_grads({xr, wr, br}, [&] { return mean_all(mul(affine(xr, wr, br), affine(xr, wr, br))); });

  CHECK_THROWS_AS(linear(x, leaf(Tensor({4, 4}))), ShapeError);
  CHECK_THROWS_AS(linear(x, leaf(Tensor({4}))), ShapeError);
}

TEST_CASE("bmm all transpose combinations") {
  Rng rng(4);
  // Hand value oracle on a tiny case.
  auto a = leaf(Tensor::from({1, 2, 2}, {1, 2, 3, 4}), true, "a");
  auto b = leaf(Tensor::from({1, 2, 2}, {5, 6, 7, 8}), true, "b");
  NodeRef o = bmm(a, b);
  CHECK(o->value.at({0, 0, 0}) == doctest::Approx(19));
  CHECK(o->value.at({0, 0, 1}) == doctest::Approx(22));
  CHECK(o->value.at({0, 1, 0}) == doctest::Approx(43));
  CHECK(o->value.at({0, 1, 1}) == doctest::Approx(50));
  NodeRef ot = bmm(a, b, false, true);  // a * b^T
  CHECK(ot->value.at({0, 0, 0}) == doctest::Approx(17));
  CHECK(ot->value.at({0, 1, 1}) == doctest::Approx(53));

  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{3, 4, 2} : Shape{3, 2, 4};
      Shape sb = tb ? Shape{3, 5, 4} : Shape{3, 4, 5};
      auto pa = random_leaf(sa, rng, "pa");
      auto pb = random_leaf(sb, rng, "pb");
      check_grads({pa, pb}, [&] { return mean_all(mul(bmm(pa, pb, ta, tb), bmm(pa, pb, ta, tb))); });
    }
  }

  CHECK_THROWS_AS(bmm(a, leaf(Tensor({2, 2, 2}))), ShapeError);
  CHECK_THROWS_AS(bmm(a, leaf(Tensor({1, 3, 2}))), ShapeError);
}

TEST_CASE("softmax_last rows are stochastic, translation-invariant, differentiable") {
  // Hand oracle: softmax(0, ln 2) = (1/3, 2/3).
  auto x = leaf(Tensor::from({1, 2}, {0.0, std::log(2.0)}), true, "x");
  NodeRef y = softmax_last(x);
  CHECK(y->value[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(y->value[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  Rng rng(5);
  auto z = random_leaf({4, 6}, rng, "z");
  NodeRef sm = softmax_last(z);
  for (int64_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 6; ++j) s += sm->value.at({r, j});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  //

  Tensor shifted = z->value;
  for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 100.0;
  NodeRef sm2 = softmax_last(constant(shifted));
  CHECK(max_abs_diff(sm->value, sm2->value) < 1e-12);

  auto probew = random_leaf({4, 6}, rng, "probe");
  check_grads({z}, [&] { return mean_all(mul(softmax_last(z), probew)); });
}

TEST_CASE("layer_norm normalizes and differentiates") {
  Rng rng(6);
  auto x = random_leaf({3, 8}, rng, "x");
  auto g = leaf(Tensor({8}, 1.0), true, "gamma");
  auto b = leaf(Tensor({8}, 0.0), true, "beta");
  NodeRef y = layer_norm(x, g, b);
  for (int64_t r = 0; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (int64_t j = 0; j < 8; ++j) mu += y->value.at({r, j});
    mu /= 8.0;
    for (int64_t j = 0; j < 8; ++j) {
      const double d = y->value.at({r, j}) - mu;
      var += d * d;
    }
    var /= 8.0;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator shifts it slightly
  }
  auto probew = random_leaf({3, 8}, rng, "probe");
  check_grads({x, g, b}, [&] { return mean_all(mul(layer_norm(x, g, b), probew)); }, 2e-6);
}

TEST_CASE("reshape and permute") {
  auto x = leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), true, "x");
  NodeRef p = permute(x, {1, 0});
  REQUIRE(p->shape() == Shape{3, 2});
  CHECK(p->value.at({0, 1}) == doctest::Approx(4));
  CHECK(p->value.at({2, 0}) == doctest::Approx(3));

  // Round-trip permute is the identity.
  NodeRef rt = permute(permute(x, {1, 0}), {1, 0});
  CHECK(max_abs_diff(rt->value, x->value) == 0.0);

  Rng rng(7);
  auto t = random_leaf({2, 3, 4}, rng, "t");
  auto probe3 = random_leaf({4, 2, 3}, rng, "p3");
  check_grads({t}, [&] { return mean_all(mul(permute(t, {2, 0, 1}), probe3)); });
  auto probe2 = random_leaf({4, 6}, rng, "p2");
  check_grads({t}, [&] { return mean_all(mul(reshape(t, {4, 6}), probe2)); });

  CHECK_THROWS_AS(permute(x, {0, 0}), ShapeError);
  CHECK_THROWS_AS(permute(x, {0}), ShapeError);
}

TEST_CASE("broadcast_to, concat_last, slice_last, gather_rows") {
  Rng rng(8);
  auto x = random_leaf({2, 1, 3}, rng, "x");
  NodeRef bx = broadcast_to(x, {2, 4, 3});
  CHECK(bx->value.at({1, 3, 2}) == doctest::Approx(x->value.at({1, 0, 2})));
  auto probeb = random_leaf({2, 4, 3}, rng, "pb");
  check_grads({x}, [&] { return mean_all(mul(broadcast_to(x, {2, 4, 3}), probeb)); });

  auto a = random_leaf({2, 2}, rng, "a");
  auto b = random_leaf({2, 3}, rng, "b");
  NodeRef cat = concat_last({a, b});
  REQUIRE(cat->shape() == Shape{2, 5});
  CHECK(cat->value.at({1, 0}) == doctest::Approx(a->value.at({1, 0})));
  CHECK(cat->value.at({1, 4}) == doctest::Approx(b->value.at({1, 2})));
  NodeRef back = slice_last(cat, 2, 3);
  CHECK(max_abs_diff(back->value, b->value) == 0.0);
  auto probec = random_leaf({2, 5}, rng, "pc");
  check_grads({a, b}, [&] { return mean_all(mul(concat_last({a, b}), probec)); });
  check_grads({a}, [&] { return mean_all(mul(slice_last(a, 1, 1), constant(Tensor({2, 1}, 2.0)))); });

  auto table = random_leaf({4, 3}, rng, "table");
  NodeRef rows = gather_rows(table, {2, 0, 2});
  CHECK(rows->value.at({0, 1}) == doctest::Approx(table->value.at({2, 1})));
  CHECK(rows->value.at({1, 0}) == doctest::Approx(table->value.at({0, 0})));
  // Repeated index 2 must receive summed gradient; FD verifies that.
  auto prober = random_leaf({3, 3}, rng, "pr");
  check_grads({table}, [&] { return mean_all(mul(gather_rows(table, {2, 0, 2}), prober)); });
  CHECK_THROWS_AS(gather_rows(table, {4}), VocabError);
  CHECK_THROWS_AS(concat_last({a, random_leaf({3, 2}, rng, "bad")}), ShapeError);
}

TEST_CASE("reductions and mse") {
  auto x = leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true, "x");
  CHECK(sum_all(x)->value[0] == doctest::Approx(10.0));
  CHECK(mean_all(x)->value[0] == doctest::Approx(2.5));
  auto y = leaf(Tensor::from({2, 2}, {1, 1, 1, 1}), true, "y");
  CHECK(mse(x, y)->value[0] == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0));
  check_grads({x, y}, [&] { return mse(x, y); });
}

TEST_CASE("shared subgraphs accumulate gradients") {
  // z = x + x, loss = sum(z*z) = sum(4 x^2) -> dloss/dx = 8x.
  auto x = leaf(Tensor::from({3}, {1.0, -2.0, 0.5}), true, "x");
  NodeRef z = add(x, x);
  NodeRef loss = sum_all(mul(z, z));
  backward(loss);
  REQUIRE(x->has_grad);
  for (int64_t i = 0; i < 3; ++i) CHECK(x->grad[i] == doctest::Approx(8.0 * x->value[i]));
}

TEST_CASE("constants do not accumulate gradients") {
  auto x = leaf(Tensor::from({2}, {1.0, 2.0}), true, "x");
  auto c = constant(Tensor::from({2}, {3.0, 4.0}));
  NodeRef loss = sum_all(mul(x, c));
  backward(loss);
  CHECK(x->has_grad);
  CHECK_FALSE(c->has_grad);
  CHECK(x->grad[0] == doctest::Approx(3.0));
  CHECK(x->grad[1] == doctest::Approx(4.0));

  // A graph with no trainable leaves is a no-op.
  NodeRef dead = mean_all(mul(c, c));
  backward(dead);
  CHECK_FALSE(dead->has_grad);
}

TEST_CASE("transformer-shaped composite differentiates end to end") {
  // Chains every op family the network uses: embedding lookup, affine,
  // layer norm, attention-style bmm+softmax, SiLU feed-forward, mse.
  Rng rng(9);
  const int64_t b = 2, n = 3, d = 4;
  auto tok = random_leaf({b, n, d}, rng, "tok");
  auto wq = random_leaf({d, d}, rng, "wq");
  auto wk = random_leaf({d, d}, rng, "wk");
  auto wv = random_leaf({d, d}, rng, "wv");
  auto g = leaf(Tensor({static_cast<int64_t>(d)}, 1.0), true, "g");
  auto be = leaf(Tensor({static_cast<int64_t>(d)}, 0.0), true, "be");
  auto w1 = random_leaf({2 * d, d}, rng, "w1");
  auto w2 = random_leaf({d, 2 * d}, rng, "w2");
  auto target = random_leaf({b, n, d}, rng, "target");

  auto build = [&]() -> NodeRef {
    NodeRef h = layer_norm(tok, g, be);
    NodeRef q = linear(h, wq);
    NodeRef k = linear(h, wk);
    NodeRef v = linear(h, wv);
    NodeRef att = softmax_last(scale(bmm(q, k, false, true), 1.0 / std::sqrt(double(d))));
    NodeRef o = add(tok, bmm(att, v));
    NodeRef ff = linear(silu(linear(o, w1)), w2);
    return mse(add(o, ff), target);
  };
  check_grads({tok, wq, wk, wv, g, be, w1, w2}, build, 2e-6);
}
