#include <gtest/gtest.h>

#include <numbers>

#include "cfnsg/nn.hpp"
#include "cfnsg/tape.hpp"
#include "test_util.hpp"

using namespace cfnsg;
using testutil::central_diff;
using testutil::random_vec;
using testutil::rel_close;

namespace {

Parameter make_matrix(const std::string& name, int rows, int cols,
                      std::initializer_list<double> vals) {
  Parameter p(name, rows, cols);
  std::copy(vals.begin(), vals.end(), p.value.begin());
  return p;
}

TEST(DenseLayer, IdentityWeights) {
  Parameter w = make_matrix("w", 2, 2, {1, 0, 0, 1});
  Parameter b("b", 2);
  Tape tape;
  const Var out = tape.linear(w, b, tape.input({3, 4}));
  EXPECT_EQ(tape.value(out), (Vec{3, 4}));
}

TEST(DenseLayer, ZeroWeightsReturnBias) {
  Parameter w = make_matrix("w", 2, 3, {0, 0, 0, 0, 0, 0});
  Parameter b("b", 2);
  b.value = {1, 1};
  Tape tape;
  const Var out = tape.linear(w, b, tape.input({-5, 2, 7}));
  EXPECT_EQ(tape.value(out), (Vec{1, 1}));
}

TEST(DenseLayer, HandComputedProduct) {
  // [[1,2],[3,4]] * (1,1) = (3,7)
  Parameter w = make_matrix("w", 2, 2, {1, 2, 3, 4});
  Parameter b("b", 2);
  Tape tape;
  const Var out = tape.linear(w, b, tape.input({1, 1}));
  EXPECT_EQ(tape.value(out), (Vec{3, 7}));
}

TEST(DenseLayer, ShapeMismatchThrows) {
  Parameter w = make_matrix("w", 2, 2, {1, 0, 0, 1});
  Parameter b("b", 2);
  Tape tape;
  EXPECT_THROW(tape.linear(w, b, tape.input({1, 2, 3})), std::invalid_argument);
}

TEST(PositionalEncode, ZeroInput) {
  const Vec out = positional_encode({0, 0, 0}, 1);
  EXPECT_EQ(out, (Vec{0, 0, 0, 0, 0, 0, 1, 1, 1}));
}

TEST(PositionalEncode, NoFrequencies) {
  EXPECT_EQ(positional_encode({0.5}, 0), (Vec{0.5}));
}

TEST(PositionalEncode, ExactTrigValues) {
  // x=1, L=2 -> (1, sin pi, sin 2pi, cos pi, cos 2pi) = (1, 0, 0, -1, 1)
  const Vec out = positional_encode({1.0}, 2);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
  EXPECT_NEAR(out[2], 0.0, 1e-12);
  EXPECT_NEAR(out[3], -1.0, 1e-12);
  EXPECT_NEAR(out[4], 1.0, 1e-12);
}

TEST(PositionalEncode, OutputLength) {
  for (int d = 1; d <= 3; ++d)
    for (int L = 0; L <= 10; ++L) {
      const Vec out = positional_encode(Vec(d, 0.3), L);
      EXPECT_EQ(out.size(), static_cast<std::size_t>(d + 2 * d * L));
    }
}

TEST(Backward, SquareRule) {
  Tape tape;
  const Var x = tape.input({3.0});
  const Var y = tape.sq_norm(x);  // x^2
  tape.backward(y, {1.0});
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Backward, ConstantGraph) {
  Tape tape;
  const Var x = tape.input({2.0});
  const Var c = tape.constant({5.0});
  tape.backward(c, {1.0});
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.0);
}

TEST(Backward, BeforeForwardThrows) {
  Tape tape;
  EXPECT_THROW(tape.backward(Var{}, {1.0}), std::invalid_argument);
}

TEST(Backward, UnitGradientOfPassthrough) {
  // omega = d_x: squared gradient norm w.r.t. d is exactly 1.
  Tape tape;
  const Var d = tape.input({0.3, -0.2, 0.9});
  const Var omega = tape.slice(d, 0, 1);
  tape.backward(omega, {1.0});
  double nrm = 0.0;
  for (double g : tape.grad(d)) nrm += g * g;
  EXPECT_DOUBLE_EQ(nrm, 1.0);
}

TEST(Backward, ParamGradAccumulatesUntilReset) {
  Parameter p("p", 2);
  p.value = {1.0, 2.0};
  Tape tape;
  const Var leaf = tape.param(p);
  const Var loss = tape.sq_norm(leaf);
  tape.backward(loss, {1.0});
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  tape.zero_grads();
  tape.backward(loss, {1.0});
  EXPECT_DOUBLE_EQ(p.grad[0], 4.0);  // additive across backward passes
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad[0], 0.0);
}

TEST(Backward, LinearityOfBackward) {
  Rng rng(11);
  Parameter w("w", 2, 3);
  init_glorot(w, rng);
  Parameter b("b", 2);
  const Vec x = random_vec(rng, 3);

  auto grads_for = [&](bool joint) {
    w.zero_grad();
    b.zero_grad();
    Tape tape;
    const Var in = tape.input(x);
    const Var h = tape.sigmoid(tape.linear(w, b, in));
    const Var l1 = tape.sq_norm(h);
    const Var l2 = tape.sq_norm(tape.sub(h, tape.constant({0.5, 0.25})));
    if (joint) {
      tape.backward(tape.sum({l1, l2}), {1.0});
    } else {
      tape.backward(l1, {1.0});
      tape.backward(l2, {1.0});
    }
    return w.grad;
  };
  const Vec joint = grads_for(true);
  const Vec split = grads_for(false);
  for (std::size_t i = 0; i < joint.size(); ++i)
    EXPECT_NEAR(joint[i], split[i], 1e-12);
}

TEST(Blend, GradientIsOutputDifference) {
  Tape tape;
  const Var s = tape.input({0.3});
  const Var a = tape.input({1.0, 0.0, 0.5});
  const Var b = tape.input({0.2, 0.9, 0.1});
  const Var mixed = tape.blend(s, a, b);
  const Vec weights{0.7, -1.3, 2.2};
  // loss = w . mixed; d loss / d s = w . (a - b)
  tape.backward(mixed, weights);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i)
    expected += weights[i] * (tape.value(a)[i] - tape.value(b)[i]);
  EXPECT_NEAR(tape.grad(s)[0], expected, 1e-12);
}

// ---- per-primitive gradient checks --------------------------------------

// Checks d(loss)/d(input slot) for a scalar loss built by `build` against
// central differences, on `instances` random instances.
void gradcheck_op(const std::function<Var(Tape&, const Vec&)>& build,
                  std::size_t input_len, int instances, uint64_t seed,
                  double lo = -1.0, double hi = 1.0, double tol = 1e-4,
                  double h = 1e-4) {
  Rng rng(seed);
  for (int inst = 0; inst < instances; ++inst) {
    Vec x = random_vec(rng, input_len, lo, hi);
    Tape tape;
    const Var in = tape.input(x);
    const Var out = build(tape, x);
    // reduce to scalar with a fixed random cotangent
    const Vec seed_vec = random_vec(rng, tape.value(out).size(), -1.0, 1.0);
    tape.backward(out, seed_vec);
    const Vec analytic = tape.grad(in);

    auto eval = [&]() {
      Tape t2;
      const Var in2 = t2.input(x);
      const Var out2 = build(t2, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < seed_vec.size(); ++i)
        acc += seed_vec[i] * t2.value(out2)[i];
      return acc;
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = central_diff(eval, &x[i], h);
      EXPECT_TRUE(rel_close(analytic[i], fd, tol))
          << "instance " << inst << " slot " << i << ": ad=" << analytic[i]
          << " fd=" << fd;
    }
  }
}

// The op builders reconstruct the graph from the (possibly perturbed) input
// vector x; the tape input var they receive must be the leaf built from x.
TEST(GradCheck, Relu) {
  gradcheck_op(
      [](Tape& t, const Vec&) { return t.relu(Var{0}); }, 6, 100, 1,
      // keep away from the kink
      0.05, 1.0);
  gradcheck_op([](Tape& t, const Vec&) { return t.relu(Var{0}); }, 6, 100, 2,
               -1.0, -0.05);
}

TEST(GradCheck, Sigmoid) {
  gradcheck_op([](Tape& t, const Vec&) { return t.sigmoid(Var{0}); }, 6, 100, 3,
               -4.0, 4.0);
}

TEST(GradCheck, Softplus) {
  gradcheck_op([](Tape& t, const Vec&) { return t.softplus(Var{0}); }, 6, 100,
               4, -4.0, 4.0);
}

TEST(GradCheck, AffineMap) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        return t.affine_map(Var{0}, Vec{0.3, -0.2, 0.7, 0.0},
                            Vec{2.0, 0.5, 1.5, 3.0});
      },
      4, 100, 5);
}

TEST(GradCheck, PosEnc) {
  // smaller step: the high-frequency bands have large third derivatives
  gradcheck_op([](Tape& t, const Vec&) { return t.posenc(Var{0}, 3); }, 3, 100,
               6, -1.0, 1.0, 1e-4, 1e-5);
}

TEST(GradCheck, ConcatAndSlice) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        const Var a = t.slice(Var{0}, 0, 3);
        const Var b = t.slice(Var{0}, 3, 2);
        return t.concat({b, a, b});
      },
      5, 100, 7);
}

TEST(GradCheck, Outer) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        const Var a = t.slice(Var{0}, 0, 3);
        const Var b = t.slice(Var{0}, 3, 4);
        return t.outer(a, b);
      },
      7, 100, 8);
}

TEST(GradCheck, AddSubScale) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        const Var a = t.slice(Var{0}, 0, 3);
        const Var b = t.slice(Var{0}, 3, 3);
        return t.scale(t.sub(t.add(a, b), t.scale(b, 0.7)), -1.3);
      },
      6, 100, 9);
}

TEST(GradCheck, Blend) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        const Var s = t.sigmoid(t.slice(Var{0}, 0, 1));
        const Var a = t.slice(Var{0}, 1, 4);
        const Var b = t.slice(Var{0}, 5, 4);
        return t.blend(s, a, b);
      },
      9, 100, 10);
}

TEST(GradCheck, SqNorm) {
  gradcheck_op([](Tape& t, const Vec&) { return t.sq_norm(Var{0}); }, 5, 100,
               11);
}

TEST(GradCheck, ScoreReg) {
  // differentiable branch (s above the floor)
  gradcheck_op(
      [](Tape& t, const Vec&) {
        return t.score_reg(t.slice(Var{0}, 0, 1), 1e-3);
      },
      1, 100, 12, 0.1, 1.0);
  // clamped branch: zero gradient
  Tape tape;
  const Var s = tape.input({1e-5});
  const Var out = tape.score_reg(s, 1e-3);
  EXPECT_DOUBLE_EQ(tape.value(out)[0], 1e6);
  tape.backward(out, {1.0});
  EXPECT_DOUBLE_EQ(tape.grad(s)[0], 0.0);
}

TEST(GradCheck, Composite) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        std::vector<Var> rgb, sigma;
        std::vector<double> delta;
        for (int i = 0; i < 3; ++i) {
          rgb.push_back(t.sigmoid(t.slice(Var{0}, 4 * i, 3)));
          sigma.push_back(t.softplus(t.slice(Var{0}, 4 * i + 3, 1)));
          delta.push_back(0.3 + 0.2 * i);
        }
        return t.composite(rgb, sigma, delta);
      },
      12, 100, 13);
}

TEST(GradCheck, Sum) {
  gradcheck_op(
      [](Tape& t, const Vec&) {
        const Var a = t.slice(Var{0}, 0, 2);
        const Var b = t.slice(Var{0}, 2, 2);
        const Var c = t.slice(Var{0}, 4, 2);
        return t.sum({a, b, c});
      },
      6, 100, 14);
}

// Random two-layer networks checked end to end against finite differences,
// including the parameter gradients (h = 1e-4, double precision).
TEST(GradCheck, RandomTwoLayerNetworks) {
  Rng rng(2024);
  for (int inst = 0; inst < 25; ++inst) {
    std::uniform_int_distribution<int> dim_dist(2, 6);
    const int in_dim = dim_dist(rng), hidden = dim_dist(rng),
              out_dim = dim_dist(rng);
    Parameter w1("w1", hidden, in_dim), w2("w2", out_dim, hidden);
    Parameter b1("b1", hidden), b2("b2", out_dim);
    init_glorot(w1, rng);
    init_glorot(w2, rng);
    Vec x = random_vec(rng, in_dim);
    const Vec seed_vec = random_vec(rng, out_dim);

    auto eval = [&]() {
      Tape t;
      const Var h = t.sigmoid(t.linear(w1, b1, t.input(x)));
      const Var o = t.linear(w2, b2, h);
      double acc = 0.0;
      for (int i = 0; i < out_dim; ++i) acc += seed_vec[i] * t.value(o)[i];
      return acc;
    };

    for (Parameter* p : {&w1, &b1, &w2, &b2}) p->zero_grad();
    Tape tape;
    const Var in = tape.input(x);
    const Var h = tape.sigmoid(tape.linear(w1, b1, in));
    const Var o = tape.linear(w2, b2, h);
    tape.backward(o, seed_vec);

    for (Parameter* p : {&w1, &b1, &w2, &b2})
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double fd = central_diff(eval, &p->value[i]);
        ASSERT_TRUE(rel_close(p->grad[i], fd, 1e-4))
            << p->name << "[" << i << "]: ad=" << p->grad[i] << " fd=" << fd;
      }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = central_diff(eval, &x[i]);
      ASSERT_TRUE(rel_close(tape.grad(in)[i], fd, 1e-4));
    }
  }
}

}  // namespace
