#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>

#include "t3d/errors.hpp"
#include "t3d/numcore.hpp"
#include "test_support.hpp"

using namespace t3d;
using namespace t3d::numcore;
using t3d::testing::check_gradients;
using t3d::testing::uniform_values;
using HighPrec = boost::multiprecision::cpp_dec_float_50;

TEST_CASE("matmul identity and scalar cases") {
  Tape tape(false);
  auto m = Tensor::from({3, 3}, uniform_values(9, -2, 2, 1));
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = matmul(tape, eye, m);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.values()[i] == m.values()[i]);

  auto six = matmul(tape, Tensor::from({1, 1}, {2}), Tensor::from({1, 1}, {3}));
  CHECK(six.item() == 6.0);
}

TEST_CASE("matmul matches triple loop oracle") {
  Tape tape(false);
  auto a = Tensor::from({4, 5}, uniform_values(20, -2, 2, 11));
  auto b = Tensor::from({5, 3}, uniform_values(15, -2, 2, 12));
  auto c = matmul(tape, a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t l = 0; l < 5; ++l) ref += a.at(i, l) * b.at(l, j);
      CHECK(std::abs(c.at(i, j) - ref) < 1e-12);
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimension") {
  Tape tape;
  CHECK_THROWS_AS(matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("log_softmax rows") {
  Tape tape(false);
  SUBCASE("equal values") {
    auto out = log_softmax_rows(tape, Tensor::from({1, 4}, {0.3, 0.3, 0.3, 0.3}));
    for (double v : out.values()) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  }
  SUBCASE("large spread does not overflow") {
    auto out = log_softmax_rows(tape, Tensor::from({1, 2}, {1000, 0}));
    CHECK(out.values()[0] == doctest::Approx(0.0));
    CHECK(out.values()[1] == doctest::Approx(-1000.0));
  }
  SUBCASE("high precision oracle and normalisation") {
    auto vals = uniform_values(3 * 7, -5, 5, 3);
    auto out = log_softmax_rows(tape, Tensor::from({3, 7}, vals));
    for (std::size_t r = 0; r < 3; ++r) {
      HighPrec z = 0;
      for (std::size_t j = 0; j < 7; ++j) z += boost::multiprecision::exp(HighPrec(vals[r * 7 + j]));
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        HighPrec ref = HighPrec(vals[r * 7 + j]) - boost::multiprecision::log(z);
        CHECK(std::abs(out.at(r, j) - ref.convert_to<double>()) < 1e-12);
        total += std::exp(out.at(r, j));
      }
      CHECK(std::abs(total - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("sigmoid terms") {
  auto z = sigmoid_and_logsigmoid(0.0);
  CHECK(z.sigmoid == 0.5);
  CHECK(z.log_sigmoid == doctest::Approx(-std::log(2.0)).epsilon(1e-15));

  auto big = sigmoid_and_logsigmoid(50.0);
  CHECK(std::isfinite(big.log_one_minus_sigmoid));
  CHECK(big.log_one_minus_sigmoid == doctest::Approx(-50.0).epsilon(1e-14));

  const double x = 1.5;
  auto t = sigmoid_and_logsigmoid(x);
  HighPrec hx(x);
  HighPrec sig = 1 / (1 + boost::multiprecision::exp(-hx));
  CHECK(std::abs(t.sigmoid - sig.convert_to<double>()) < 1e-12);
  CHECK(std::abs(t.log_sigmoid - boost::multiprecision::log(sig).convert_to<double>()) < 1e-12);
  CHECK(std::abs(t.log_one_minus_sigmoid - boost::multiprecision::log(1 - sig).convert_to<double>()) < 1e-12);

  for (double v = -30.0; v <= 30.0; v += 0.37) {
    CHECK(std::abs(sigmoid_and_logsigmoid(v).sigmoid + sigmoid_and_logsigmoid(-v).sigmoid - 1.0) < 1e-12);
  }
}

TEST_CASE("backward on simple losses") {
  SUBCASE("sum of squares") {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    auto loss = sum(tape, mul(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("constant loss leaves zero gradients") {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    auto loss = Tensor::scalar(3.0);
    tape.backward(loss);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
  }
  SUBCASE("non-scalar loss is a contract error") {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    auto y = scale(tape, x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("a consumed tape cannot be replayed") {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    auto loss = sum(tape, x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
    CHECK_THROWS_AS(sum(tape, x), StateError);
  }
}

TEST_CASE("tape replays adjoints in reverse execution order") {
  Tape tape;
  std::vector<int> seen;
  for (int i = 0; i < 5; ++i) tape.record([&seen, i] { seen.push_back(i); });
  auto x = Tensor::scalar(1.0, true);
  tape.backward(x);
  CHECK(seen == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("matmul chain gradients match finite differences") {
  auto a = Tensor::from({3, 4}, uniform_values(12, -2, 2, 21), true);
  auto b = Tensor::from({4, 5}, uniform_values(20, -2, 2, 22), true);
  auto c = Tensor::from({5, 2}, uniform_values(10, -2, 2, 23), true);
  auto res = check_gradients(
      [&](Tape& t) {
        auto y = matmul(t, matmul(t, a, b), c);
        return sum(t, mul(t, y, y));
      },
      {a, b, c});
  CHECK(res.passed == res.checked);
}

TEST_CASE("every differentiable op matches finite differences") {
  const std::size_t rows = 8, width = 6;
  auto x = Tensor::from({rows, width}, uniform_values(rows * width, -2, 2, 31), true);
  auto y = Tensor::from({rows, width}, uniform_values(rows * width, -2, 2, 32), true);
  auto k = Tensor::from({rows, width}, uniform_values(rows * width, -2, 2, 33), true);
  auto gain = Tensor::from({width}, uniform_values(width, -2, 2, 34), true);
  auto bias = Tensor::from({width}, uniform_values(width, -2, 2, 35), true);
  auto table = Tensor::from({5, width}, uniform_values(5 * width, -2, 2, 36), true);
  auto weights = Tensor::from({rows, width}, uniform_values(rows * width, -2, 2, 37));
  std::vector<std::int32_t> ids{0, 3, 3, 1, 4, 2, 0, 1};

  auto weighted = [&](Tape& t, const Tensor& z) { return sum(t, mul(t, z, weights)); };

  SUBCASE("add/sub/mul/scale") {
    auto r = check_gradients(
        [&](Tape& t) { return weighted(t, scale(t, mul(t, add(t, x, y), sub(t, x, y)), 0.7)); }, {x, y});
    CHECK(r.passed == r.checked);
  }
  SUBCASE("row bias and layer norm") {
    auto r = check_gradients(
        [&](Tape& t) { return weighted(t, layer_norm_rows(t, add_row_bias(t, x, bias), gain, bias)); },
        {x, gain, bias});
    CHECK(r.passed == r.checked);
  }
  SUBCASE("gelu") {
    auto r = check_gradients([&](Tape& t) { return weighted(t, gelu(t, x)); }, {x});
    CHECK(r.passed == r.checked);
  }
  SUBCASE("gather rows") {
    auto r = check_gradients([&](Tape& t) { return weighted(t, gather_rows(t, table, ids)); }, {table});
    CHECK(r.passed == r.checked);
  }
  SUBCASE("block attention") {
    for (std::size_t block : {1u, 2u, 4u}) {
      auto r = check_gradients(
          [&](Tape& t) { return weighted(t, block_attention(t, x, k, y, 2, 4, block)); }, {x, k, y});
      CHECK(r.passed == r.checked);
    }
  }
  SUBCASE("log softmax and pick") {
    std::vector<std::size_t> rr{0, 1, 5, 7}, cc{2, 0, 5, 3};
    auto r = check_gradients(
        [&](Tape& t) {
          auto lp = log_softmax_rows(t, x);
          return add(t, weighted(t, lp), sum(t, pick(t, lp, rr, cc)));
        },
        {x});
    CHECK(r.passed == r.checked);
  }
  SUBCASE("scalar sigmoid family and clamp") {
    auto s = Tensor::from({3}, {-1.3, 0.4, 1.9}, true);
    auto r = check_gradients(
        [&](Tape& t) {
          auto c = clamp(t, s, -1.0, 1.5);
          return add(t, sum(t, log_sigmoid(t, c)),
                     add(t, sum(t, log_one_minus_sigmoid(t, s)), mean(t, softplus(t, s))));
        },
        {s});
    CHECK(r.passed == r.checked);
  }
}

TEST_CASE("block attention visibility") {
  // value rows are one-hot on their own position, so output row i is the
  // attention distribution of query i
  const std::size_t L = 8;
  std::vector<double> ident(L * L, 0.0);
  for (std::size_t i = 0; i < L; ++i) ident[i * L + i] = 1.0;
  auto q = Tensor::from({L, L}, uniform_values(L * L, -1, 1, 41));
  auto kk = Tensor::from({L, L}, uniform_values(L * L, -1, 1, 42));
  auto v = Tensor::from({L, L}, ident);
  Tape tape(false);
  auto o = block_attention(tape, q, kk, v, 1, L, 4);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      const bool visible = j / 4 <= i / 4;
      if (visible) {
        CHECK(o.at(i, j) > 0.0);
      } else {
        CHECK(o.at(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("forward ops are deterministic and inference tapes record nothing") {
  auto a = Tensor::from({4, 4}, uniform_values(16, -2, 2, 51), true);
  Tape t1(false), t2(false);
  auto r1 = log_softmax_rows(t1, matmul(t1, a, a));
  auto r2 = log_softmax_rows(t2, matmul(t2, a, a));
  for (std::size_t i = 0; i < 16; ++i) CHECK(r1.values()[i] == r2.values()[i]);
  CHECK(t1.size() == 0);
  CHECK_FALSE(r1.requires_grad());
}

TEST_CASE("overflow raises instead of propagating inf") {
  Tape tape(false);
  auto big = Tensor::from({1, 1}, {1e200});
  CHECK_THROWS_AS(matmul(tape, big, big), OverflowError);
}

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  auto t = Tensor::zeros({2, 3}, true);
  CHECK(t.grad().size() == t.size());
  auto c = t.clone(false);
  CHECK_FALSE(c.requires_grad());
  CHECK_THROWS_AS(c.grad(), StateError);
  CHECK_FALSE(c.same_storage(t));
}
