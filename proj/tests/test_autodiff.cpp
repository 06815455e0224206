#include "declip/autodiff.hpp"

#include "support.hpp"

#include <cmath>

using namespace declip;
using declip::testing::max_gradient_error;
using declip::testing::random_tensor;
using declip::testing::vec;

namespace {

// Brute-force sliding window over the zero-padded input, kernel flipped.
Eigen::VectorXd reference_conv(const Eigen::VectorXd& x, const Eigen::VectorXd& k, Index pad) {
  const Index K = k.size();
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(x.size() + 2 * pad);
  padded.segment(pad, x.size()) = x;
  Eigen::VectorXd out(padded.size() - K + 1);
  for (Index t = 0; t < out.size(); ++t) {
    double acc = 0.0;
    for (Index i = 0; i < K; ++i) acc += k[K - 1 - i] * padded[t + i];
    out[t] = acc;
  }
  return out;
}

}  // namespace

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor({2, 3}, Eigen::VectorXd::Zero(5)), ShapeError);
  EXPECT_THROW(Tensor({0, 3}, Eigen::VectorXd::Zero(0)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, Eigen::VectorXd::Zero(6)));
}

TEST(Ops, ReluAndScalarMul) {
  Graph g;
  Var x = g.constant(Tensor({3}, vec({-1, 0, 2})));
  EXPECT_EQ(relu(x).value().values, vec({0, 0, 2}));
  Var y = g.constant(Tensor({2}, vec({1, 2})));
  EXPECT_EQ(scalar_mul(3, y).value().values, vec({3, 6}));
}

TEST(Ops, Conv1dHandExample) {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 4}, vec({1, 2, 3, 4})));
  Var w = g.constant(Tensor({1, 1, 3}, vec({1, 0, -1})));
  const Tensor& out = conv1d(x, w, {1, 1}).value();
  EXPECT_EQ(out.shape, (Shape{1, 1, 4}));
  EXPECT_EQ(out.values, vec({2, 2, 2, -3}));
  EXPECT_EQ(out.values, reference_conv(vec({1, 2, 3, 4}), vec({1, 0, -1}), 1));
}

TEST(Ops, Conv1dMatchesSlidingWindowOnRandomInputs) {
  std::mt19937_64 rng(11);
  for (Index K : {1, 3, 5}) {
    for (Index pad = 0; pad <= K / 2; ++pad) {
      Graph g;
      Tensor xt = random_tensor({1, 1, 9}, rng);
      Tensor wt = random_tensor({1, 1, K}, rng);
      const Eigen::VectorXd expected = reference_conv(xt.values, wt.values, pad);
      Var out = conv1d(g.constant(xt), g.constant(wt), {1, pad});
      EXPECT_TRUE(out.value().values.isApprox(expected, 1e-13)) << "K=" << K << " pad=" << pad;
    }
  }
}

TEST(Ops, ShapeErrorsNameTheOp) {
  Graph g;
  Var a = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(add(a, g.constant(Tensor::zeros({3, 2}))), ShapeError);
  EXPECT_THROW(max_pool1d(g.constant(Tensor::zeros({1, 1, 3}))), ShapeError);
  EXPECT_THROW(conv1d(g.constant(Tensor::zeros({1, 2, 5})), g.constant(Tensor::zeros({1, 1, 3}))), ShapeError);
}

TEST(Backward, SumOfSquares) {
  ParamStore ps;
  ps.insert("x", Tensor({2}, vec({1, -2})));
  Graph g;
  g.backward(sum(square(g.parameter(ps.at("x")))));
  EXPECT_EQ(*ps.at("x").grad, vec({2, -4}));
}

TEST(Backward, ReluFlatRegion) {
  ParamStore ps;
  ps.insert("x", Tensor({1}, vec({-1})));
  Graph g;
  g.backward(sum(relu(g.parameter(ps.at("x")))));
  EXPECT_EQ((*ps.at("x").grad)[0], 0.0);
}

TEST(Backward, NonScalarOutputRejected) {
  Graph g;
  Var x = g.constant(Tensor::zeros({2}));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  ParamStore ps;
  ps.insert("x", Tensor({1}, vec({3})));
  Graph g;
  Var x = g.parameter(ps.at("x"));
  g.backward(sum(x * x + x));  // 2x + 1
  EXPECT_EQ((*ps.at("x").grad)[0], 7.0);
}

TEST(Backward, TwoLayerBiasFreeMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  ParamStore ps;
  ps.insert("w1", random_tensor({6, 4}, rng, 0.7));
  ps.insert("w2", random_tensor({3, 6}, rng, 0.7));
  const Tensor input = random_tensor({5, 4}, rng);
  const Tensor target = random_tensor({5, 3}, rng);
  auto build = [&](Graph& g, ParamStore& p) {
    Var h = relu(matmul(g.constant(input), g.parameter(p.at("w1")), Transpose::Second));
    Var out = matmul(h, g.parameter(p.at("w2")), Transpose::Second);
    return sum(square(out - g.constant(target)));
  };
  EXPECT_LT(max_gradient_error(ps, build, 1e-5), 1e-4);
}

// One finite-difference check per op kind; inputs are kept away from ReLU,
// max-pool and clip kinks.
TEST(Backward, EveryOpKindMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  ParamStore ps;
  ps.insert("a", random_tensor({2, 2, 8}, rng));
  ps.insert("b", random_tensor({2, 2, 8}, rng));
  ps.insert("w", random_tensor({3, 2, 3}, rng));
  ps.insert("m", random_tensor({4, 3}, rng));
  // Separate consecutive pairs so max-pool has no near-ties.
  for (Index i = 0; i < 16; ++i) ps.at("a").values[2 * i + 1] = ps.at("a").values[2 * i] + (i % 2 ? 0.5 : -0.5);
  // Clip/relu kinks: nudge anything within 0.05 of 0 or +-0.8.
  for (auto* name : {"a", "b"}) {
    for (double& v : ps.at(name).values) {
      if (std::abs(v) < 0.05) v = 0.3;
      if (std::abs(std::abs(v) - 0.8) < 0.05) v *= 1.2;
    }
  }

  auto build = [&](Graph& g, ParamStore& p) {
    Var a = g.parameter(p.at("a"));
    Var b = g.parameter(p.at("b"));
    Var w = g.parameter(p.at("w"));
    Var m = g.parameter(p.at("m"));
    Var c = conv1d(a, w, {1, 1});                           // (2,3,8)
    Var pooled = max_pool1d(c);                             // (2,3,4)
    Var up = upsample_nearest(pooled);                      // (2,3,8)
    Var cat = concat_channels({up, a * b});                 // (2,5,8)
    Var sl = slice_channels(cat, 1, 3);                     // (2,3,8)
    Var padded = pad_length(relu(sl), 10);                  // (2,3,10)
    Var cropped = crop_length(padded, 7);                   // (2,3,7)
    Var flat = reshape(crop_length(cropped, 4), {6, 4});    // (6,4)
    Var mm = matmul(flat, m);                               // (6,3)
    Var clipped = clip(a - b, 0.8);
    return sum(square(mm)) + scalar_mul(0.5, mean(square(clipped))) + mean(sum(c) * sum(b));
  };
  EXPECT_LT(max_gradient_error(ps, build, 1e-5), 1e-4);
}

TEST(Backward, StridedConvMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  ParamStore ps;
  ps.insert("x", random_tensor({2, 2, 11}, rng));
  ps.insert("w", random_tensor({3, 2, 3}, rng));
  auto build = [](Graph& g, ParamStore& p) {
    return sum(square(conv1d(g.parameter(p.at("x")), g.parameter(p.at("w")), {2, 1})));
  };
  EXPECT_LT(max_gradient_error(ps, build, 1e-5), 1e-4);
}

TEST(Backward, Linearity) {
  std::mt19937_64 rng(21);
  ParamStore ps;
  ps.insert("w", random_tensor({4, 3}, rng));
  const Tensor x = random_tensor({5, 4}, rng);
  auto l1 = [&](Graph& g, Var w) { return sum(square(relu(matmul(g.constant(x), w)))); };
  auto l2 = [&](Graph& g, Var w) { return mean(matmul(g.constant(x), w)); };
  auto grad_of = [&](auto fn) {
    zero_grads(ps);
    Graph g;
    g.backward(fn(g, g.parameter(ps.at("w"))));
    return Eigen::VectorXd(*ps.at("w").grad);
  };
  const double a = 2.5, b = -0.75;
  const Eigen::VectorXd g1 = grad_of(l1);
  const Eigen::VectorXd g2 = grad_of(l2);
  const Eigen::VectorXd combined =
      grad_of([&](Graph& g, Var w) { return scalar_mul(a, l1(g, w)) + scalar_mul(b, l2(g, w)); });
  EXPECT_LE((combined - (a * g1 + b * g2)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Backward, DeterministicBitForBit) {
  auto run = [] {
    std::mt19937_64 rng(77);
    ParamStore ps;
    ps.insert("w", random_tensor({3, 2, 5}, rng));
    const Tensor x = random_tensor({4, 2, 16}, rng);
    Graph g;
    Var out = sum(square(relu(conv1d(g.constant(x), g.parameter(ps.at("w")), {1, 2}))));
    g.backward(out);
    return std::make_pair(out.value().values[0], Eigen::VectorXd(*ps.at("w").grad));
  };
  const auto r1 = run();
  const auto r2 = run();
  EXPECT_EQ(std::memcmp(&r1.first, &r2.first, sizeof(double)), 0);
  ASSERT_EQ(r1.second.size(), r2.second.size());
  EXPECT_EQ(std::memcmp(r1.second.data(), r2.second.data(), sizeof(double) * r1.second.size()), 0);
}

TEST(Graph, ParentsPrecedeChildren) {
  std::mt19937_64 rng(1);
  ParamStore ps;
  ps.insert("w", random_tensor({3, 3}, rng));
  Graph g;
  Var x = g.constant(random_tensor({2, 3}, rng));
  sum(square(relu(matmul(x, g.parameter(ps.at("w"))))));
  for (std::size_t id = 0; id < g.size(); ++id) {
    for (std::size_t p : g.node(id).parents) EXPECT_LT(p, id);
  }
}

TEST(ZeroGrads, ClearsAndIsIdempotent) {
  ParamStore empty;
  EXPECT_NO_THROW(zero_grads(empty));

  ParamStore ps;
  ps.insert("x", Tensor({2}, vec({1, 2})));
  Graph g;
  g.backward(sum(square(g.parameter(ps.at("x")))));
  ASSERT_NE(ps.at("x").grad->norm(), 0.0);
  zero_grads(ps);
  EXPECT_EQ(ps.at("x").grad->norm(), 0.0);
  zero_grads(ps);
  EXPECT_EQ(ps.at("x").grad->norm(), 0.0);
}

TEST(ParamStore, NamesAreUnique) {
  ParamStore ps;
  ps.insert("a", Tensor::zeros({1}));
  EXPECT_THROW(ps.insert("a", Tensor::zeros({1})), std::invalid_argument);
  EXPECT_TRUE(ps.at("a").requires_grad);
  EXPECT_THROW(ps.at("b"), std::out_of_range);
}
