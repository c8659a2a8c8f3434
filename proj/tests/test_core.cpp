#include <catch2/catch_amalgamated.hpp>

#include "medk2n/core/params.hpp"
#include "medk2n/core/rng.hpp"
#include "medk2n/core/tape.hpp"

using medk2n::AdamOptimizer;
using medk2n::ParamStore;
using medk2n::Tape;
using medk2n::Tensor;

TEST_CASE("tensor shape and indexing") {
  Tensor<double> t({2, 3, 4});
  REQUIRE(t.numel() == 24);
  t.at(1, 2, 3) = 5.0;
  REQUIRE(t.x[23] == 5.0);
  REQUIRE(t.dim(0) == 2);
  Tensor<double> s = Tensor<double>::scalar(7.0);
  REQUIRE(s.numel() == 1);
  REQUIRE(s.x[0] == 7.0);
}

TEST_CASE("elementwise forward values") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({3}, {1.0, -2.0, 0.5}));
  auto b = tape.constant(Tensor<double>({3}, {2.0, 3.0, -1.0}));
  REQUIRE(tape.val(tape.add(a, b)).x[1] == 1.0);
  REQUIRE(tape.val(tape.mul(a, b)).x[0] == 2.0);
  REQUIRE(tape.val(tape.div(a, b)).x[2] == Catch::Approx(-0.5));
  REQUIRE(tape.val(tape.sigmoid(tape.constant_scalar(0.0))).x[0] == 0.5);
  REQUIRE(tape.val(tape.relu(a)).x[1] == 0.0);
  REQUIRE(tape.val(tape.clamp(a, -1.0, 1.0)).x[1] == -1.0);
  REQUIRE(tape.val(tape.abs_(a)).x[1] == 2.0);
}

TEST_CASE("reductions and softmax") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}));
  REQUIRE(tape.val(tape.sum(a)).x[0] == 10.0);
  REQUIRE(tape.val(tape.mean(a)).x[0] == 2.5);
  auto sm = tape.val(tape.softmax_vec(a));
  double s = 0;
  for (double v : sm.x) s += v;
  REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(sm.x[3] > sm.x[0]);
  // logsumexp of identical entries is entry + log(n)
  auto c = tape.constant(Tensor<double>({3}, {2.0, 2.0, 2.0}));
  REQUIRE(tape.val(tape.logsumexp(c)).x[0] == Catch::Approx(2.0 + std::log(3.0)));
}

TEST_CASE("linear and matvec agree with hand loops") {
  Tape<double> tape;
  Tensor<double> w({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> x({3}, {1, -1, 2});
  Tensor<double> bias({2}, {0.5, -0.5});
  auto y = tape.val(tape.linear(tape.constant(w), tape.constant(bias), tape.constant(x)));
  REQUIRE(y.x[0] == Catch::Approx(1 - 2 + 6 + 0.5));
  REQUIRE(y.x[1] == Catch::Approx(4 - 5 + 12 - 0.5));
  auto mv = tape.val(tape.matvec(tape.constant(w), tape.constant(x)));
  REQUIRE(mv.x[0] == Catch::Approx(5.0));
  Tensor<double> v2({2}, {1, 1});
  auto mtv = tape.val(tape.matvec_t(tape.constant(w), tape.constant(v2)));
  REQUIRE(mtv.x[0] == Catch::Approx(5.0));
  REQUIRE(mtv.x[2] == Catch::Approx(9.0));
}

TEST_CASE("backward seeds a simple chain") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, {3.0}));
  auto y = tape.mul(x, x);  // y = x^2, dy/dx = 6
  tape.backward(y);
  REQUIRE(tape.grad(x).x[0] == Catch::Approx(6.0));
}

TEST_CASE("engine and hash determinism") {
  auto e1 = medk2n::make_engine(42, 1, 2, 3);
  auto e2 = medk2n::make_engine(42, 1, 2, 3);
  REQUIRE(e1() == e2());
  auto e3 = medk2n::make_engine(42, 1, 2, 4);
  REQUIRE(medk2n::make_engine(42)() != e3());
  REQUIRE(medk2n::hash_str("abc") != medk2n::hash_str("abd"));
}

TEST_CASE("parameter init is seeded by name, not creation order") {
  ParamStore<double> s1, s2;
  s1.get_or_create("a", {4}, 7, 4);
  s1.get_or_create("b", {4}, 7, 4);
  s2.get_or_create("b", {4}, 7, 4);
  s2.get_or_create("a", {4}, 7, 4);
  REQUIRE(s1.at("a").value.x == s2.at("a").value.x);
  REQUIRE(s1.at("b").value.x == s2.at("b").value.x);
  REQUIRE(s1.at("a").value.x != s1.at("b").value.x);
  REQUIRE_THROWS(s1.get_or_create("a", {5}, 7, 4));
  s1.at("a").grad.x[0] = 1.0;
  s1.zero_grad();
  REQUIRE(s1.at("a").grad.x[0] == 0.0);
}

TEST_CASE("adam minimizes a quadratic") {
  ParamStore<double> store;
  store.get_or_create("w", {2}, 1, 2);
  AdamOptimizer<double> opt;
  for (int it = 0; it < 500; ++it) {
    auto& e = store.at("w");
    for (int i = 0; i < 2; ++i) e.grad.x[i] = 2.0 * (e.value.x[i] - 1.5);
    opt.step(store, 0.05);
  }
  REQUIRE(store.at("w").value.x[0] == Catch::Approx(1.5).margin(1e-3));
  REQUIRE(store.at("w").value.x[1] == Catch::Approx(1.5).margin(1e-3));
}
