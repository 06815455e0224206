#include "declip/models.hpp"
#include "declip/train.hpp"

#include "support.hpp"

using namespace declip;
using declip::testing::random_tensor;
using declip::testing::TempDir;
using declip::testing::vec;

namespace {

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(1e-300, b.norm());
  return (a - b).norm() / scale;
}

Unet1dArch small_unet(Index in_channels = 1) {
  Unet1dArch a;
  a.in_channels = in_channels;
  a.depth = 3;
  a.base_channels = 4;
  a.kernel_size = 3;
  return a;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  for (const Arch& arch : {Arch{MlpArch{}}, Arch{small_unet()}}) {
    EXPECT_TRUE(init_params(arch, 7) == init_params(arch, 7));
    EXPECT_FALSE(init_params(arch, 7) == init_params(arch, 8));
  }
}

TEST(InitParams, NoBiasEntries) {
  for (const Arch& arch : {Arch{MlpArch{}}, Arch{small_unet(2)}, Arch{Unet1dArch{}}}) {
    for (const auto& [name, t] : init_params(arch, 0)) {
      EXPECT_EQ(name.find("bias"), std::string::npos) << name;
      EXPECT_TRUE(t.requires_grad);
    }
  }
}

TEST(InitParams, DefaultMlpParameterCount) {
  EXPECT_EQ(init_params(MlpArch{}, 0).parameter_count(), 100 * 256 + 256 * 256 + 256 * 256 + 256 * 100);
  EXPECT_EQ(init_params(MlpArch{}, 0).parameter_count(), 182272);
}

TEST(InitParams, HeUniformRange) {
  const ParamStore ps = init_params(MlpArch{}, 3);
  const Tensor& w0 = ps.at("fc0.weight");
  const double a = std::sqrt(6.0 / 100.0);
  EXPECT_LE(w0.values.cwiseAbs().maxCoeff(), a);
  EXPECT_NEAR(w0.values.mean(), 0.0, 0.01);
  // uniform variance a^2 / 3
  EXPECT_NEAR(w0.values.squaredNorm() / static_cast<double>(w0.size()), a * a / 3.0, 0.05 * a * a / 3.0);
}

TEST(Forward, ZeroMapsToZero) {
  for (const Arch& arch : {Arch{MlpArch{}}, Arch{small_unet()}}) {
    const ParamStore ps = init_params(arch, 1);
    const Index n = std::holds_alternative<MlpArch>(arch) ? 100 : 64;
    const Tensor out = predict(ps, arch, Tensor::zeros({2, 1, n}));
    EXPECT_EQ(out.values.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Forward, PositivelyHomogeneous) {
  std::mt19937_64 rng(2);
  const std::vector<std::pair<Arch, Index>> cases{
      {MlpArch{}, 100}, {MlpArch{40, 2, {32, 16}, true}, 40}, {small_unet(), 64}, {small_unet(2), 100}};
  for (const auto& [arch, n] : cases) {
    const ParamStore ps = init_params(arch, 4);
    const Tensor in = random_tensor({3, in_channels(arch), n}, rng);
    const Tensor base = predict(ps, arch, in);
    for (double alpha : {0.1, 1.0, 10.0}) {
      Tensor scaled = in;
      scaled.values *= alpha;
      EXPECT_LE(rel_err(predict(ps, arch, scaled).values, alpha * base.values), 1e-9) << describe(arch);
    }
  }
}

TEST(Forward, SingleLinearLayerIsMatrixMultiply) {
  std::mt19937_64 rng(3);
  MlpArch arch{6, 1, {}, false};
  const ParamStore ps = init_params(arch, 9);
  const Tensor y = random_tensor({1, 1, 6}, rng);
  const Eigen::MatrixXd W = ps.at("fc0.weight").as_matrix(6, 6);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 6; ++j) expected[i] += W(i, j) * y.values[j];
  }
  EXPECT_LE(rel_err(predict(ps, arch, y).values, expected), 1e-14);
}

TEST(Forward, SkipAddsTheSignalChannel) {
  std::mt19937_64 rng(4);
  MlpArch with{8, 2, {5}, true};
  MlpArch without = with;
  without.skip = false;
  const ParamStore ps = init_params(with, 2);
  const Tensor in = random_tensor({2, 2, 8}, rng);
  const Tensor a = predict(ps, with, in);
  const Tensor b = predict(ps, without, in);
  for (Index item = 0; item < 2; ++item) {
    const Eigen::VectorXd diff = a.values.segment(item * 8, 8) - b.values.segment(item * 8, 8);
    EXPECT_LE((diff - in.values.segment(item * 16, 8)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, UnetPreservesLength) {
  std::mt19937_64 rng(5);
  const Unet1dArch arch = small_unet();
  const ParamStore ps = init_params(arch, 0);
  for (Index n : {64, 100, 1024, 22050}) {
    const Tensor out = predict(ps, arch, random_tensor({1, 1, n}, rng));
    EXPECT_EQ(out.shape, (Shape{1, 1, n}));
  }
  const Tensor mlp_out = predict(init_params(MlpArch{}, 0), MlpArch{}, random_tensor({2, 1, 100}, rng));
  EXPECT_EQ(mlp_out.shape, (Shape{2, 1, 100}));
}

TEST(Forward, InputShapeMismatchIsAnError) {
  EXPECT_THROW(predict(init_params(MlpArch{}, 0), MlpArch{}, Tensor::zeros({1, 1, 99})), ShapeError);
  EXPECT_THROW(predict(init_params(small_unet(), 0), small_unet(), Tensor::zeros({1, 2, 64})), ShapeError);
}

TEST(Forward, UnetGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Unet1dArch arch = small_unet(2);
  arch.depth = 2;
  arch.base_channels = 2;
  ParamStore ps = init_params(arch, 1);
  const Tensor in = random_tensor({2, 2, 13}, rng);
  auto build = [&](Graph& g, ParamStore& p) {
    return sum(square(forward(g, p, arch, g.constant(in))));
  };
  EXPECT_LT(declip::testing::max_gradient_error(ps, build, 1e-5), 1e-4);
}

TEST(AssembleInput, Channels) {
  ClipConfig cfg;
  const Signal y = vec({0.3, 1.0});
  const Tensor one = assemble_input(y, saturation_mask(y, cfg), false);
  EXPECT_EQ(one.shape, (Shape{1, 1, 2}));
  const Tensor two = assemble_input(y, saturation_mask(y, cfg), true);
  EXPECT_EQ(two.shape, (Shape{1, 2, 2}));
  EXPECT_EQ(two.values, vec({0.3, 1.0, 1.0, 0.0}));

  const Signal all = vec({1.0, -1.0, 1.0});
  const Tensor sat = assemble_input(all, saturation_mask(all, cfg), true);
  EXPECT_EQ(sat.values.tail(3).cwiseAbs().maxCoeff(), 0.0);

  EXPECT_THROW(assemble_input(y, Mask::Constant(3, false), true), ShapeError);
}

TEST(Arch, DescribeParseRoundTrip) {
  for (const Arch& arch : {Arch{MlpArch{}}, Arch{MlpArch{7, 2, {}, false}}, Arch{small_unet(2)}, Arch{Unet1dArch{}}}) {
    EXPECT_TRUE(parse_arch(describe(arch)) == arch) << describe(arch);
  }
  EXPECT_THROW(parse_arch("cnn depth=3"), std::invalid_argument);
  EXPECT_THROW(validate(Unet1dArch{1, 3, 4, 4, true}), std::invalid_argument);
}

TEST(Arch, ParamsRoundTripThroughCheckpoint) {
  TempDir dir;
  for (const Arch& arch : {Arch{MlpArch{}}, Arch{small_unet(2)}}) {
    Checkpoint ck;
    ck.arch = arch;
    ck.params = init_params(arch, 12);
    save_checkpoint(ck, dir / "p.ckpt");
    EXPECT_TRUE(load_checkpoint(dir / "p.ckpt").params == ck.params);
  }
}
