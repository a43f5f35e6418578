#include <doctest.h>

#include <cmath>

#include "duch/autodiff.hpp"
#include "duch/errors.hpp"
#include "test_util.hpp"

using namespace duch;
using duch::testing::random_matrix;

namespace {

// Smooth scalar head used to turn a matrix output into a loss: sum (t - y)^2.
Var head(Var y, const Matrix& target) { return ad::squared_error_sum(y, target, 1.0); }

}  // namespace

TEST_CASE("linear forward examples") {
  Tape t;
  Param w(Matrix{{1, 0}, {0, 1}});
  Param b(Matrix{{0, 0}});
  Var out = ad::linear(t.constant(Matrix{{1, 2}}), t.param(w), t.param(b));
  CHECK(out.value() == Matrix{{1, 2}});

  Param w2(random_matrix(2, 2, 3));
  Param b2(Matrix{{3, -1}});
  CHECK(ad::linear(t.constant(Matrix{{0, 0}}), t.param(w2), t.param(b2)).value() == Matrix{{3, -1}});
}

TEST_CASE("linear shape mismatch names operands") {
  Tape t;
  Param w(Matrix(3, 2));
  Param b(Matrix(1, 2));
  try {
    ad::linear(t.constant(Matrix(4, 2)), t.param(w), t.param(b));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("input") != std::string::npos);
    CHECK(msg.find("weight") != std::string::npos);
  }
}

TEST_CASE("linear gradients match finite differences") {
  Param x(random_matrix(4, 3, 11));
  Param w(random_matrix(3, 2, 12));
  Param b(random_matrix(1, 2, 13));
  const Matrix target = random_matrix(4, 2, 14);
  auto build = [&](Tape& t) { return head(ad::linear(t.param(x), t.param(w), t.param(b)), target); };
  Param* params[] = {&x, &w, &b};
  CHECK(finite_difference_check(build, params, 1e-5) < 1e-6);
}

TEST_CASE("activation examples and ranges") {
  Tape t;
  CHECK(ad::relu(t.constant(Matrix{{-1, 0, 2}})).value() == Matrix{{0, 0, 2}});
  CHECK(ad::tanh(t.constant(Matrix{{0}})).value() == Matrix{{0}});
  CHECK(ad::sigmoid(t.constant(Matrix{{0}})).value() == Matrix{{0.5}});

  const Matrix big{{-800, -40, 40, 800}};
  const Matrix th = ad::tanh(t.constant(big)).value();
  const Matrix sg = ad::sigmoid(t.constant(big)).value();
  for (double v : th.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  for (double v : sg.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  const Matrix r = ad::relu(t.constant(random_matrix(5, 5, 1))).value();
  for (double v : r.values()) CHECK(v >= 0.0);

  CHECK_THROWS(ad::tanh(t.constant(Matrix{{std::nan("")}})));
}

TEST_CASE("activation gradients match finite differences") {
  const Matrix target = random_matrix(3, 4, 21);
  for (auto kind : {ad::Activation::relu, ad::Activation::tanh, ad::Activation::sigmoid}) {
    Param x(random_matrix(3, 4, 20));
    auto build = [&](Tape& t) { return head(ad::activation(t.param(x), kind), target); };
    Param* params[] = {&x};
    CHECK(finite_difference_check(build, params, 1e-5) < 1e-6);
  }
}

TEST_CASE("batch norm examples") {
  SUBCASE("constant column maps to zero") {
    Tape t;
    BatchNormState bn(1);
    Var out = ad::batch_norm(t.constant(Matrix{{3}, {3}, {3}}), bn, t.param(bn.gamma), t.param(bn.beta));
    for (double v : out.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("already standardized column") {
    Tape t;
    BatchNormState bn(1);
    Var out = ad::batch_norm(t.constant(Matrix{{-1}, {1}}), bn, t.param(bn.gamma), t.param(bn.beta));
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(out.value()(0, 0) == doctest::Approx(-s).epsilon(1e-15));
    CHECK(out.value()(1, 0) == doctest::Approx(s).epsilon(1e-15));
  }
  SUBCASE("running statistics update") {
    Tape t;
    BatchNormState bn(1);
    ad::batch_norm(t.constant(Matrix{{-1}, {1}}), bn, t.param(bn.gamma), t.param(bn.beta));
    CHECK(bn.running_mean[0] == doctest::Approx(0.0));
    // 0.9 * 1 + 0.1 * (unbiased var 2)
    CHECK(bn.running_var[0] == doctest::Approx(1.1));
  }
  SUBCASE("train mode rejects a single row") {
    Tape t;
    BatchNormState bn(2);
    CHECK_THROWS_AS(ad::batch_norm(t.constant(Matrix{{1, 2}}), bn, t.param(bn.gamma), t.param(bn.beta)),
                    DegenerateError);
  }
}

TEST_CASE("batch norm gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Param x(random_matrix(8, 4, 30 + seed));
    BatchNormState bn(4);
    bn.gamma.value = random_matrix(1, 4, 40 + seed);
    bn.beta.value = random_matrix(1, 4, 50 + seed);
    const Matrix target = random_matrix(8, 4, 60 + seed);
    auto build = [&](Tape& t) {
      return head(ad::batch_norm(t.param(x), bn, t.param(bn.gamma), t.param(bn.beta)), target);
    };
    Param* params[] = {&x, &bn.gamma, &bn.beta};
    CHECK(finite_difference_check(build, params, 1e-5) < 1e-5);

    bn.mode = Mode::eval;
    CHECK(finite_difference_check(build, params, 1e-5) < 1e-5);
  }
}

TEST_CASE("eval-mode batch norm is row independent") {
  BatchNormState bn(3);
  bn.running_mean = {0.5, -1.0, 2.0};
  bn.running_var = {2.0, 0.5, 1.5};
  bn.mode = Mode::eval;
  const Matrix a = random_matrix(4, 3, 70);
  Matrix b = random_matrix(6, 3, 71);
  for (std::size_t c = 0; c < 3; ++c) b(5, c) = a(2, c);
  Tape t;
  const Matrix oa = ad::batch_norm(t.constant(a), bn, t.param(bn.gamma), t.param(bn.beta)).value();
  const Matrix ob = ad::batch_norm(t.constant(b), bn, t.param(bn.gamma), t.param(bn.beta)).value();
  for (std::size_t c = 0; c < 3; ++c) CHECK(oa(2, c) == ob(5, c));
}

TEST_CASE("row normalization") {
  Tape t;
  const Matrix out = ad::row_l2_normalize(t.constant(Matrix{{3, 4}})).value();
  CHECK(out(0, 0) == doctest::Approx(0.6));
  CHECK(out(0, 1) == doctest::Approx(0.8));
  const Matrix unit{{0.6, 0.8}, {1.0, 0.0}};
  const Matrix again = ad::row_l2_normalize(t.constant(unit)).value();
  for (std::size_t i = 0; i < unit.size(); ++i) CHECK(again.data()[i] == doctest::Approx(unit.data()[i]));
  CHECK_THROWS_AS(ad::row_l2_normalize(t.constant(Matrix{{1, 1}, {0, 0}})), DegenerateError);

  Param x(random_matrix(5, 8, 80));
  const Matrix target = random_matrix(5, 8, 81);
  auto build = [&](Tape& tt) { return head(ad::row_l2_normalize(tt.param(x)), target); };
  Param* params[] = {&x};
  CHECK(finite_difference_check(build, params, 1e-5) < 1e-6);
}

TEST_CASE("finite difference harness") {
  Param p(Matrix{{1, 2}});
  auto half_sq = [&](Tape& t) { return ad::squared_error_sum(t.param(p), Matrix(1, 2), 2.0); };
  Param* params[] = {&p};
  CHECK(finite_difference_check(half_sq, params, 1e-5) < 1e-9);
  CHECK(p.grad == Matrix{{1, 2}});

  // A gradient corrupted by +10% is flagged.
  const Matrix numeric = numerical_gradient(half_sq, p, 1e-5);
  Matrix corrupted = p.grad;
  for (double& v : corrupted.values()) v *= 1.1;
  const double err = max_relative_error(corrupted, numeric);
  CHECK(err == doctest::Approx(0.1 / 1.1).epsilon(1e-6));
  CHECK(err > 1e-4);
}

TEST_CASE("shared operands accumulate gradients") {
  // a * a^T uses `a` twice.
  Param a(random_matrix(3, 4, 90));
  const Matrix target = random_matrix(3, 3, 91);
  auto build = [&](Tape& t) {
    Var v = t.param(a);
    return head(ad::matmul_nt(v, v), target);
  };
  Param* params[] = {&a};
  CHECK(finite_difference_check(build, params, 1e-5) < 1e-6);
}

TEST_CASE("forward passes are deterministic") {
  Param w(random_matrix(6, 5, 100));
  Param b(random_matrix(1, 5, 101));
  const Matrix x = random_matrix(7, 6, 102);
  auto run = [&] {
    Tape t;
    return ad::tanh(ad::linear(t.constant(x), t.param(w), t.param(b))).value();
  };
  CHECK(run() == run());
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  Param p(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(t.param(p)), DimensionError);
}

TEST_CASE("relative error can treat tiny pairs as agreeing zeros") {
  const Matrix analytic{{0.0, 1.0}};
  const Matrix numeric{{4e-11, 1.0}};
  CHECK(max_relative_error(analytic, numeric) == 1.0);
  CHECK(max_relative_error(analytic, numeric, 1e-9) == 0.0);
  CHECK(max_relative_error(Matrix{{1e-10, 2.0}}, Matrix{{0.0, 2.2}}, 1e-9) == doctest::Approx(0.2 / 2.2));
}
