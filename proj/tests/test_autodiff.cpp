#include <cmath>

#include "attmix/autodiff.hpp"
#include "attmix/error.hpp"
#include "attmix/rng.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace attmix;
using attmix::testing::check_gradients;
using attmix::testing::random_tensor;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor<double>::matrix(r, c, std::move(v));
}

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({0, 3}), DimensionError);
  Tensor<float> t({2, 3});
  CHECK_THROWS_AS(t.reshape({4, 2}), DimensionError);
  t.reshape({3, 2});
  CHECK(t.rows() == 3);
}

TEST_CASE("matmul values") {
  Tape<double> tape;
  auto id = tape.constant(mat(2, 2, {1, 0, 0, 1}));
  auto a = tape.constant(mat(2, 2, {1, 2, 3, 4}));
  CHECK(matmul(id, a).value().values() == std::vector<double>{1, 2, 3, 4});
  auto b = tape.constant(mat(2, 1, {5, 6}));
  CHECK(matmul(a, b).value().values() == std::vector<double>{17, 39});
  auto z = tape.constant(Tensor<double>({2, 3}));
  Rng rng(1);
  auto any = tape.constant(random_tensor({3, 4}, rng));
  const auto out = matmul(z, any).value();
  CHECK(out.shape() == Shape{2, 4});
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax values and invariants") {
  Tape<double> tape;
  CHECK(softmax(tape.constant(mat(1, 2, {0, 0}))).value().values() == std::vector<double>{0.5, 0.5});
  CHECK(softmax(tape.constant(mat(1, 1, {42}))).value()[0] == 1.0);
  const auto s = softmax(tape.constant(mat(1, 3, {std::log(1.0), std::log(2.0), std::log(3.0)}))).value();
  CHECK(s[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

  Rng rng(3);
  Tensor<double> x = random_tensor({4, 7}, rng, -30, 30);
  Tensor<double> shifted = x;
  for (std::size_t i = 0; i < 7; ++i) shifted.at(2, i) += 1000.0;
  const auto a = softmax(tape.constant(x)).value();
  const auto b = softmax(tape.constant(shifted)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) total += a.at(r, c);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (std::size_t c = 0; c < 7; ++c) CHECK(a.at(2, c) == doctest::Approx(b.at(2, c)).epsilon(1e-12));
}

TEST_CASE("layer_norm values") {
  Tape<double> tape;
  auto ones = tape.constant(Tensor<double>({2}, 1.0));
  auto zeros = tape.constant(Tensor<double>({2}, 0.0));
  const auto c = layer_norm(tape.constant(mat(1, 2, {3, 3})), ones, zeros).value();
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.0);
  const auto pm = layer_norm(tape.constant(mat(1, 2, {1, -1})), ones, zeros, 1e-12).value();
  CHECK(pm[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pm[1] == doctest::Approx(-1.0).epsilon(1e-9));
  auto g0 = tape.constant(Tensor<double>({3}, 0.0));
  auto beta = tape.constant(Tensor<double>({3}, std::vector<double>{0.5, -2, 7}));
  const auto b = layer_norm(tape.constant(mat(2, 3, {1, 5, -3, 2, 2, 9})), g0, beta).value();
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(b.at(r, 0) == 0.5);
    CHECK(b.at(r, 1) == -2.0);
    CHECK(b.at(r, 2) == 7.0);
  }
}

TEST_CASE("elementwise activations") {
  Tape<double> tape;
  CHECK(sigmoid(tape.constant(mat(1, 1, {0}))).value()[0] == 0.5);
  CHECK(sigmoid(tape.constant(mat(1, 1, {1}))).value()[0] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(gelu(tape.constant(mat(1, 1, {0}))).value()[0] == 0.0);
  Tape<float> ft;
  const float tiny = sigmoid(ft.constant(Tensor<float>::matrix(1, 1, {-1000.0f}))).value()[0];
  CHECK(std::isfinite(tiny));
  CHECK(tiny >= 0.0f);
  CHECK(tiny < 1e-30f);
  const float big = sigmoid(ft.constant(Tensor<float>::matrix(1, 1, {1000.0f}))).value()[0];
  CHECK(big == 1.0f);
}

TEST_CASE("bce_loss values") {
  Tape<double> tape;
  CHECK(bce_loss(tape.constant(mat(2, 1, {0.5, 0.5})), {0.0, 1.0}).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(tape.constant(mat(1, 1, {0.9})), {1.0}).value()[0] ==
        doctest::Approx(0.105361).epsilon(1e-6));
  CHECK(bce_loss(tape.constant(mat(2, 1, {1.0, 0.0})), {1.0, 0.0}).value()[0] <= 1e-6);
  CHECK_THROWS_AS(bce_loss(tape.constant(mat(1, 1, {0.3})), {2.0}), ValidationError);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto p = tape.constant(random_tensor({4, 1}, rng, 0.0, 1.0));
    CHECK(bce_loss(p, {0.0, 1.0, 1.0, 0.0}).value()[0] >= 0.0);
  }
}

TEST_CASE("mse_loss values") {
  Tape<double> tape;
  auto t = tape.constant(mat(1, 2, {1, 3}));
  CHECK(mse_loss(t, t).value()[0] == 0.0);
  CHECK(mse_loss(tape.constant(mat(1, 2, {0, 0})), t).value()[0] == 5.0);
  CHECK(mse_loss(tape.constant(mat(1, 2, {1.5, 3.5})), t).value()[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(mse_loss(tape.constant(mat(2, 1, {0, 0})), t), DimensionError);
}

TEST_CASE("backward basics") {
  Tensor<double> w = mat(1, 3, {1, -2, 4});
  w.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(tape.parameter(w)));
    CHECK(w.grad() == std::vector<double>{1, 1, 1});
  }
  w.clear_grad();
  {
    Tape<double> tape;
    auto v = tape.parameter(w);
    tape.backward(sum(mul(v, v)));
    CHECK(w.grad() == std::vector<double>{2, -4, 8});
  }
  w.clear_grad();
  Tape<double> tape;
  auto v = tape.parameter(w);
  CHECK_THROWS_AS(tape.backward(v), ContractError);
  auto loss = sum(v);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
}

TEST_CASE("unreached parameters get zero gradient") {
  Tensor<double> used = mat(1, 2, {1, 2});
  Tensor<double> unused = mat(1, 2, {3, 4});
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape<double> tape;
  auto u = tape.parameter(used);
  tape.parameter(unused);
  tape.backward(sum(u));
  CHECK(unused.grad() == std::vector<double>{0, 0});
}

TEST_CASE("inference tapes record no gradients") {
  Tensor<double> w = mat(1, 2, {1, 2});
  w.set_requires_grad(true);
  Tape<double> tape(false);
  auto v = tape.parameter(w);
  CHECK_FALSE(v.needs_grad());
  tape.backward(sum(v));
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("non-finite output from finite input is reported when checking") {
  Tape<double> tape;
  tape.set_check_finite(true);
  auto x = tape.constant(mat(1, 1, {1e300}));
  CHECK_THROWS_AS(mul(x, x), ContractError);
}

TEST_CASE("gradients of every primitive match finite differences") {
  Rng rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto c = random_tensor({3, 4}, rng);
  auto row = random_tensor({1, 4}, rng);
  auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  auto beta = random_tensor({4}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto bias = random_tensor({5}, rng);
  auto prob = random_tensor({3, 1}, rng, 0.1, 0.9);
  const double tol = 1e-4;

  SUBCASE("matmul") {
    auto r = check_gradients({&a, &b}, [](Tape<double>&, const auto& v) {
      return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1])));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("linear with bias") {
    auto r = check_gradients({&a, &w, &bias}, [](Tape<double>&, const auto& v) {
      return sum(gelu(linear(v[0], v[1], std::optional<Var<double>>(v[2]))));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("add sub mul scale") {
    auto r = check_gradients({&a, &c}, [](Tape<double>&, const auto& v) {
      return sum(mul(add(v[0], scale(v[1], 0.7)), sub(v[1], v[0])));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("add_tiled") {
    auto r = check_gradients({&a, &row}, [](Tape<double>&, const auto& v) {
      auto y = add_tiled(v[0], v[1]);
      return sum(mul(y, y));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("sigmoid gelu") {
    auto r = check_gradients({&a}, [](Tape<double>&, const auto& v) {
      return sum(mul(sigmoid(v[0]), gelu(scale(v[0], 2.0))));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("softmax") {
    auto r = check_gradients({&a, &c}, [](Tape<double>&, const auto& v) {
      return sum(mul(softmax(v[0]), v[1]));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("layer_norm") {
    auto r = check_gradients({&a, &gamma, &beta, &c}, [](Tape<double>&, const auto& v) {
      return sum(mul(layer_norm(v[0], v[1], v[2]), v[3]));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("reshape gather scatter repeat concat") {
    auto r = check_gradients({&a, &c, &row}, [](Tape<double>&, const auto& v) {
      auto g = gather_rows(v[0], {2, 0, 2});
      auto s = scatter_rows(v[1], repeat_rows(v[2], 2), {1, 2});
      auto cat = concat_cols(s, v[0]);
      auto flat = reshape(cat, {4, 6});
      return add(sum(mul(flat, flat)), sum(mul(g, g)));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("mean_groups mean") {
    auto r = check_gradients({&c}, [](Tape<double>&, const auto& v) {
      auto m = mean_groups(reshape(v[0], {6, 2}), 3);
      return mean(mul(m, m));
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("bce_loss") {
    auto r = check_gradients({&prob}, [](Tape<double>&, const auto& v) {
      return bce_loss(v[0], {1.0, 0.0, 1.0});
    });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("mse_loss") {
    auto r = check_gradients({&a, &c}, [](Tape<double>&, const auto& v) { return mse_loss(v[0], v[1]); });
    CHECK(r.max_rel_error < tol);
  }
  SUBCASE("attention with several keys") {
    auto q = random_tensor({2 * 2, 4}, rng);
    auto k = random_tensor({2 * 3, 4}, rng);
    auto val = random_tensor({2 * 3, 6}, rng);
    auto r = check_gradients({&q, &k, &val}, [](Tape<double>&, const auto& v) {
      auto o = attention(v[0], v[1], v[2], 2, 2);
      return sum(mul(o, o));
    });
    CHECK(r.max_rel_error < tol);
  }
}

TEST_CASE("attention with one key returns the value and blocks query/key gradients") {
  Rng rng(4);
  Tensor<double> q = random_tensor({2, 4}, rng);
  Tensor<double> k = random_tensor({2, 4}, rng);
  Tensor<double> v = random_tensor({2, 4}, rng);
  q.set_requires_grad(true);
  k.set_requires_grad(true);
  v.set_requires_grad(true);
  Tape<double> tape;
  AttentionWeights<double> weights;
  auto out = attention(tape.parameter(q), tape.parameter(k), tape.parameter(v), 2, 2, &weights);
  CHECK(out.value().values() == v.values());
  for (double p : weights.weights) CHECK(p == 1.0);
  tape.backward(sum(mul(out, out)));
  for (double g : q.grad()) CHECK(g == 0.0);
  for (double g : k.grad()) CHECK(g == 0.0);
}
