#include <doctest.h>

#include <cmath>

#include "emc/autodiff.hpp"
#include "oracles.hpp"

using emc::Rng;
using emc::ad::Reduce;
using emc::ad::Tape;
using emc::ad::Tensor;
using emc::ad::Var;

TEST_CASE("matmul forward") {
  Tape t;
  Var id2 = t.input(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var m = t.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(t.value(t.matmul(id2, m)).data == std::vector<double>{1, 2, 3, 4});

  Var proj = t.input(Tensor::matrix(2, 2, {1, 0, 0, 0}));
  Var b = t.input(Tensor::matrix(2, 2, {5, 6, 7, 8}));
  CHECK(t.value(t.matmul(proj, b)).data == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.input(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("[2x3]"), std::runtime_error);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  auto a = oracles::random_tensor({3, 2}, rng);
  auto b = oracles::random_tensor({2, 4}, rng);
  auto res = oracles::finite_difference_check(
      {a, b}, [](Tape& t, const std::vector<Var>& p) { return t.sum(t.matmul(p[0], p[1])); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("relu forward") {
  Tape t;
  Var x = t.input(Tensor::row({-1, 0, 2}));
  CHECK(t.value(t.relu(x)).data == std::vector<double>{0, 0, 2});

  Var pos = t.input(Tensor::row({0.5, 1.5, 3.0}));
  CHECK(t.value(t.relu(pos)).data == std::vector<double>{0.5, 1.5, 3.0});
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(11);
  auto x = oracles::random_tensor({2, 5}, rng, -2.0, 2.0, /*keep_away_from_zero=*/1e-2);
  auto res = oracles::finite_difference_check(
      {x}, [](Tape& t, const std::vector<Var>& p) { return t.sum(t.mul(t.relu(p[0]), p[0])); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("softmax rows") {
  Tape t;
  Var x = t.input(Tensor::row({0, 0}));
  CHECK(t.value(t.softmax_rows(x)).data[0] == doctest::Approx(0.5));

  Var big = t.input(Tensor::row({1000, 0}));
  const Tensor& s = t.value(t.softmax_rows(big));
  CHECK(s.all_finite());
  CHECK(s.data[0] == doctest::Approx(1.0));
  CHECK(s.data[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax rows sum to one and live in (0,1)") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Tape t;
    Var x = t.input(oracles::random_tensor({4, 6}, rng, -30.0, 30.0));
    const Tensor& s = t.value(t.softmax_rows(x));
    for (int i = 0; i < 4; ++i) {
      double row = 0;
      for (int j = 0; j < 6; ++j) {
        row += s.at(i, j);
        CHECK(s.at(i, j) > 0.0);
        CHECK(s.at(i, j) < 1.0);
      }
      CHECK(std::fabs(row - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax jacobian matches finite differences") {
  Rng rng(19);
  auto x = oracles::random_tensor({1, 5}, rng);
  // random linear functional of the softmax output probes the whole jacobian
  auto w = oracles::random_tensor({1, 5}, rng);
  Tensor wc = w;
  auto res = oracles::finite_difference_check({x}, [wc](Tape& t, const std::vector<Var>& p) {
    return t.sum(t.mul(t.softmax_rows(p[0]), t.input(wc)));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("cross entropy values") {
  Tape t;
  Var sure = t.input(Tensor::row({1, 0, 0}));
  CHECK(t.value(t.cross_entropy(sure, 0)).data[0] == doctest::Approx(0.0).epsilon(1e-9));

  Var uniform = t.input(Tensor::full({1, 10}, 0.1));
  CHECK(t.value(t.cross_entropy(uniform, 3)).data[0] == doctest::Approx(std::log(10.0)));

  CHECK_THROWS_AS(t.cross_entropy(uniform, 10), std::runtime_error);
  CHECK_THROWS_AS(t.cross_entropy(uniform, -1), std::runtime_error);
}

TEST_CASE("cross entropy of softmax gives softmax minus onehot") {
  Rng rng(23);
  auto logits = oracles::random_tensor({1, 6}, rng);
  const int target = 2;

  Tape t;
  Var lv = t.param(logits);
  Var loss = t.cross_entropy(t.softmax_rows(lv), target);
  t.backward(loss);

  Tape t2;
  const Tensor& sm = t2.value(t2.softmax_rows(t2.input(logits)));
  for (int j = 0; j < 6; ++j) {
    const double expect = sm.data[static_cast<std::size_t>(j)] - (j == target ? 1.0 : 0.0);
    CHECK(t.grad(lv).data[static_cast<std::size_t>(j)] == doctest::Approx(expect).epsilon(1e-6));
  }

  auto res = oracles::finite_difference_check({logits}, [](Tape& tt, const std::vector<Var>& p) {
    return tt.cross_entropy(tt.softmax_rows(p[0]), target);
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward on sum gives all ones") {
  Tape t;
  Var w = t.param(Tensor::matrix(2, 3, {1, -2, 3, 4, -5, 6}));
  t.backward(t.sum(w));
  for (double g : t.grad(w).data) CHECK(g == 1.0);
}

TEST_CASE("gradient accumulates across uses") {
  Tape t;
  Var w = t.param(Tensor::row({1, 2, 3}));
  Var loss = t.sum(t.add(t.affine(w, 2.0, 0.0), t.affine(w, 3.0, 0.0)));
  t.backward(loss);
  for (double g : t.grad(w).data) CHECK(g == 5.0);
}

TEST_CASE("backward requires a scalar") {
  Tape t;
  Var w = t.param(Tensor::row({1, 2}));
  CHECK_THROWS_AS(t.backward(w), std::runtime_error);
}

TEST_CASE("unreachable trainable tensors keep zero gradients") {
  Tape t;
  Var used = t.param(Tensor::row({1, 2}));
  Var unused = t.param(Tensor::row({3, 4}));
  t.backward(t.sum(used));
  for (double g : t.grad(unused).data) CHECK(g == 0.0);
}

TEST_CASE("elementwise and shape op gradients match finite differences") {
  Rng rng(31);

  SUBCASE("add") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({3, 4}, rng)},
        [](Tape& t, const std::vector<Var>& p) { return t.sum(t.mul(t.add(p[0], p[1]), p[0])); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("add_row broadcast") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({3, 4}, rng), oracles::random_tensor({1, 4}, rng)},
        [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.add_row(p[0], p[1])));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("scalar multiply via affine") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 3}, rng)},
        [](Tape& t, const std::vector<Var>& p) { return t.sum(t.affine(p[0], -1.7, 0.4)); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("hadamard mul and sigmoid") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 3}, rng), oracles::random_tensor({2, 3}, rng)},
        [](Tape& t, const std::vector<Var>& p) { return t.sum(t.sigmoid(t.mul(p[0], p[1]))); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("tanh") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 5}, rng)},
        [](Tape& t, const std::vector<Var>& p) { return t.sum(t.tanh(p[0])); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("log on positive inputs") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 3}, rng, 0.5, 2.0)},
        [](Tape& t, const std::vector<Var>& p) { return t.sum(t.log(p[0])); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("concat along columns") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 3}, rng), oracles::random_tensor({2, 2}, rng)},
        [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.concat_cols(p[0], p[1])));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("concat along rows") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({1, 3}, rng), oracles::random_tensor({2, 3}, rng)},
        [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.concat_rows({p[0], p[1], p[0]})));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("gather rows with repeats") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({4, 3}, rng)}, [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.gather_rows(p[0], {2, 0, 2})));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("reduce rows: sum and mean") {
    for (Reduce kind : {Reduce::sum, Reduce::mean}) {
      auto res = oracles::finite_difference_check(
          {oracles::random_tensor({5, 3}, rng)}, [kind](Tape& t, const std::vector<Var>& p) {
            return t.sum(t.tanh(t.reduce_rows(p[0], kind)));
          });
      CHECK(res.max_rel_err < 1e-4);
    }
  }
  SUBCASE("reduce rows: max with separated entries") {
    // keep column values > 1e-2 apart so the argmax never flips under the probe
    Tensor x({4, 3});
    Rng r2(5);
    for (int j = 0; j < 3; ++j) {
      std::vector<double> vals;
      for (int i = 0; i < 4; ++i) vals.push_back(-2.0 + 1.01 * i + 0.3 * r2.uniform());
      r2.shuffle(vals);
      for (int i = 0; i < 4; ++i) x.at(i, j) = vals[static_cast<std::size_t>(i)];
    }
    auto res = oracles::finite_difference_check(
        {x}, [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.reduce_rows(p[0], Reduce::max)));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("reshape") {
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 6}, rng)}, [](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.matmul(t.reshape(p[0], {3, 4}), t.reshape(p[0], {4, 3}))));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("add_const") {
    Tensor c = oracles::random_tensor({2, 3}, rng);
    auto res = oracles::finite_difference_check(
        {oracles::random_tensor({2, 3}, rng)}, [c](Tape& t, const std::vector<Var>& p) {
          return t.sum(t.tanh(t.add_const(p[0], c)));
        });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [](std::vector<double>& out) {
    Rng rng(77);
    Tape t;
    Var a = t.param(oracles::random_tensor({3, 3}, rng));
    Var b = t.param(oracles::random_tensor({3, 3}, rng));
    Var loss = t.sum(t.tanh(t.matmul(t.relu(a), t.sigmoid(b))));
    t.backward(loss);
    out = t.grad(a).data;
    for (double g : t.grad(b).data) out.push_back(g);
  };
  std::vector<double> g1, g2;
  run(g1);
  run(g2);
  CHECK(g1 == g2);
}

TEST_CASE("forward ops preserve finiteness") {
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    Tape t;
    Var a = t.input(oracles::random_tensor({3, 4}, rng, -50.0, 50.0));
    Var b = t.input(oracles::random_tensor({4, 2}, rng, -50.0, 50.0));
    CHECK(t.value(t.softmax_rows(t.matmul(a, b))).all_finite());
    CHECK(t.value(t.sigmoid(a)).all_finite());
    CHECK(t.value(t.tanh(a)).all_finite());
    CHECK(t.value(t.relu(a)).all_finite());
  }
}
