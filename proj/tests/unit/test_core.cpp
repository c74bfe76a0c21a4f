#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kdc2/autodiff.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/grad_check.hpp"
#include "kdc2/objectives.hpp"
#include "kdc2/ops.hpp"

using namespace kdc2;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Random values kept at least `gap` away from zero.
Tensor away_from_zero(Shape shape, std::uint64_t seed, double gap = 0.05) {
  Tensor t = random_tensor(std::move(shape), seed);
  for (auto& v : t.values()) v = v < 0 ? v - gap : v + gap;
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(numel({2, 3, 4}), 24u);
  EXPECT_EQ(Tensor::scalar(2.5).rank(), 0u);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at({1, 0}), 4.0);
  EXPECT_EQ(t.at({0, 2}), 3.0);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).at({2, 1}), 6.0);
}

TEST(Ops, ConvShapeFollowsValidPadding) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 9, 9, 5}));
  Var w = tape.constant(Tensor({2, 2, 5, 16}));
  Var b = tape.constant(Tensor({16}));
  Var y = conv2d(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 16}));
  EXPECT_EQ(max_pool2x2(y).shape(), (Shape{1, 4, 4, 16}));
}

TEST(Ops, ConvMatchesDirectSum) {
  Tensor x = random_tensor({2, 4, 5, 3}, 1), w = random_tensor({2, 3, 3, 2}, 2), b = random_tensor({2}, 3);
  Tape tape;
  Tensor y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 2}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t o = 0; o < 2; ++o) {
          double s = b[o];
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 3; ++dj)
              for (std::size_t c = 0; c < 3; ++c) s += x.at({n, i + di, j + dj, c}) * w.at({di, dj, c, o});
          EXPECT_NEAR(y.at({n, i, j, o}), s, 1e-12);
        }
}

TEST(Ops, ConvRejectsKernelLargerThanInput) {
  Tape tape;
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 1, 1, 2})), tape.constant(Tensor({2, 2, 2, 1})),
                      tape.constant(Tensor({1}))),
               DimensionError);
}

TEST(Ops, MaxPoolTieGoesToFirstElement) {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2, 2, 1}, {3.0, 3.0, 3.0, 3.0}));
  Var y = max_pool2x2(x);
  tape.backward(sum(y));
  EXPECT_EQ(tape.grad(x).data(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Ops, CosineOfVectorWithItselfIsOne) {
  Tape tape;
  Var v = tape.constant(Tensor::matrix(2, 3, {1.0, -2.0, 0.5, 1e-3, 7.0, 3.0}));
  Tensor c = cosine_similarity_rows(v, v).value();
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_NEAR(c[1], 1.0, 1e-15);
}

TEST(Ops, MatmulShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Ops, NoImplicitBroadcast) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3}))), DimensionError);
  EXPECT_NO_THROW(add(tape.constant(Tensor({2, 3})), tape.constant(Tensor::scalar(1.0))));
}

TEST(Ops, NonFiniteResultIsNumericError) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor::vector({0.0}))), NumericError);
  EXPECT_THROW(exp(tape.constant(Tensor::vector({1000.0}))), NumericError);
}

TEST(Ops, LogsumexpIsStable) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({1000.0, 1000.0}));
  EXPECT_NEAR(logsumexp(x).value().item(), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Ops, ForwardIsPure) {
  Tensor a = random_tensor({3, 4}, 4), b = random_tensor({4, 2}, 5);
  Tape t1, t2;
  Tensor y1 = l2_normalize_rows(matmul(t1.constant(a), t1.constant(b))).value();
  Tensor y2 = l2_normalize_rows(matmul(t2.constant(a), t2.constant(b))).value();
  EXPECT_EQ(y1, y2);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(random_tensor({2, 3, 4}, 6));
  tape.backward(sum(x));
  const Tensor g = tape.grad(x);
  for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ReluSubgradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1.0, 2.0}));
  tape.backward(sum(relu(x)));
  EXPECT_EQ(tape.grad(x).data(), (std::vector<double>{0.0, 1.0}));
}

TEST(Backward, UnreachableLeafHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var unused = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(unused), Tensor({2, 2}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, SharedInputsAccumulate) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({3.0}));
  tape.backward(sum(add(mul(x, x), x)));  // x^2 + x
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 7.0);
}

TEST(Backward, GradientOfSumOfLossesIsSumOfGradients) {
  const Tensor a = random_tensor({3, 4}, 7);
  auto f = [](Var x) { return sum(mul(x, x)); };
  auto g = [](Var x) { return logsumexp(x); };
  Tape t1, t2, t3;
  Var x1 = t1.leaf(a), x2 = t2.leaf(a), x3 = t3.leaf(a);
  t1.backward(add(f(x1), g(x1)));
  t2.backward(f(x2));
  t3.backward(g(x3));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(t1.grad(x1)[i], t2.grad(x2)[i] + t3.grad(x3)[i], 1e-14);
  }
}

TEST(GradCheck, Square) {
  auto f = [](Tape&, Var x) { return sum(mul(x, x)); };
  const GradCheckReport r = grad_check(f, Tensor::vector({3.0}), 1e-5, 1e-8);
  EXPECT_NEAR(r.analytic[0], 6.0, 1e-12);
  EXPECT_NEAR(r.numeric[0], 6.0, 1e-8);
  EXPECT_TRUE(r.passed);
}

TEST(GradCheck, StepOutsideRangeIsContractError) {
  auto f = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(grad_check(f, Tensor::vector({1.0}), 0.0, 1e-4), ContractError);
  EXPECT_THROW(grad_check(f, Tensor::vector({1.0}), 0.1, 1e-4), ContractError);
}

TEST(GradCheck, NondeterministicFunctionIsOracleError) {
  int calls = 0;
  auto f = [&](Tape&, Var x) { return scale(sum(x), 1.0 + ++calls); };
  EXPECT_THROW(grad_check(f, Tensor::vector({1.0}), 1e-5, 1e-4), OracleError);
}

TEST(GradCheck, WrongAnalyticGradientFails) {
  // A backward that reports twice the true derivative.
  auto f = [](Tape& tape, Var x) {
    Tensor v = Tensor::scalar(x.value()[0] * x.value()[0]);
    return tape.record("bad_square", v, {x}, [x](Tape& t, const Tensor& g) {
      t.grad_buffer(x.id())[0] += g[0] * 4.0 * x.value()[0];
    });
  };
  EXPECT_FALSE(grad_check(f, Tensor::vector({1.5}), 1e-5, 1e-4).passed);
}

TEST(GradCheck, BarlowTwinsOnTwoByTwo) {
  const Tensor x = random_tensor({2, 2, 2}, 8);  // m=2 reps of [B=2, h=2]
  // Each rep is a row selection of x, so the check covers both sets.
  auto g = [](Tape& tape, Var x) {
    Var flat = reshape(x, {4, 2});  // rows: (p, b)
    std::vector<Var> reps;
    for (std::size_t p = 0; p < 2; ++p) {
      Tensor sel({2, 4});
      sel.at({0, 2 * p}) = 1.0;
      sel.at({1, 2 * p + 1}) = 1.0;
      reps.push_back(matmul(tape.constant(sel), flat));
    }
    return barlow_twins_loss(cross_correlation(reps));
  };
  const GradCheckReport r = grad_check(g, x, 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, PrimitivesAwayFromKinks) {
  const Tensor a = away_from_zero({2, 3}, 9);
  const std::vector<std::pair<const char*, ScalarFunction>> cases = {
      {"relu", [](Tape&, Var x) { return sum(mul(relu(x), x)); }},
      {"exp", [](Tape&, Var x) { return sum(exp(x)); }},
      {"log", [](Tape&, Var x) { return sum(log(add_scalar(mul(x, x), 1.0))); }},
      {"div", [](Tape&, Var x) { return sum(div(x, add_scalar(mul(x, x), 1.0))); }},
      {"transpose", [](Tape&, Var x) { return sum(matmul(transpose(x), x)); }},
      {"normalize", [](Tape&, Var x) { return sum(mul(l2_normalize_rows(x), x)); }},
      {"cosine", [](Tape&, Var x) { return sum(cosine_similarity_rows(x, exp(x))); }},
      {"row_norms", [](Tape&, Var x) { return sum(row_norms(x)); }},
      {"concat", [](Tape&, Var x) { return logsumexp(concat({x, scale(x, -2.0)})); }},
      {"mean", [](Tape&, Var x) { return mean(mul(x, exp(x))); }},
      {"sum_last_axis", [](Tape&, Var x) { return sum(exp(sum_last_axis(x))); }},
  };
  for (const auto& [name, f] : cases) {
    const GradCheckReport r = grad_check(f, a);
    EXPECT_TRUE(r.passed) << name << " max rel error " << r.max_rel_error;
  }
}

TEST(GradCheck, ConvPoolAndGraphPropagation) {
  const Tensor x = random_tensor({1, 4, 4, 2}, 10);
  const Tensor w = random_tensor({2, 2, 2, 3}, 11);
  auto f = [&](Tape& tape, Var v) {
    Var y = conv2d(v, tape.constant(w), tape.constant(Tensor::vector({0.1, -0.2, 0.3})));
    return sum(mul(max_pool2x2(y), max_pool2x2(y)));
  };
  const GradCheckReport r = grad_check(f, x);
  if (r.branch_changes == 0) EXPECT_TRUE(r.passed) << r.max_rel_error;

  const Tensor lap = random_tensor({3, 3}, 12);
  auto g = [&](Tape& tape, Var v) { return sum(exp(graph_propagate(tape.constant(lap), v))); };
  EXPECT_TRUE(grad_check(g, random_tensor({2, 3, 2}, 13)).passed);
  auto h = [&](Tape& tape, Var a) {
    return sum(exp(graph_propagate(a, tape.constant(random_tensor({2, 3, 2}, 14)))));
  };
  EXPECT_TRUE(grad_check(h, lap).passed);
}

TEST(GradCheck, BranchChangesAreCounted) {
  auto f = [](Tape&, Var x) { return sum(relu(x)); };
  const GradCheckReport r = grad_check(f, Tensor::vector({1e-7, 1.0}), 1e-5, 1e-4);
  EXPECT_EQ(r.branch_changes, 1u);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  const std::vector<int> labels = {2, 0, 1};
  auto f = [&](Tape&, Var x) { return softmax_cross_entropy(x, labels); };
  EXPECT_TRUE(grad_check(f, random_tensor({3, 4}, 15)).passed);
}
