#include "declip/binio.hpp"
#include "declip/eval.hpp"
#include "declip/train.hpp"

#include "support.hpp"

#include <cstring>
#include <fstream>

using namespace declip;
using declip::testing::random_tensor;
using declip::testing::TempDir;
using declip::testing::vec;

namespace {

bool bit_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

Dataset unclipped_identity_task(Index items, Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  Dataset ds;
  ds.clip.mu = 100.0;
  for (Index i = 0; i < items; ++i) {
    Signal x(n);
    for (double& v : x) v = g(rng);
    ds.items.push_back(Item{x, x, "id#" + std::to_string(i), Split::Train});
  }
  return ds;
}

Dataset small_synthetic(Index d, double v, std::uint64_t seed, Index count = 200, Index n = 30) {
  SyntheticSpec spec;
  spec.ambient_dim = n;
  spec.subspace_dim = d;
  spec.num_signals = count;
  spec.clip_proportion = v;
  spec.seed = seed;
  return make_synthetic(spec);
}

TrainConfig quick_config(LossKind kind, int epochs) {
  TrainConfig c;
  c.loss.kind = kind;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(1);
  ParamStore ps;
  ps.insert("w", random_tensor({3, 3}, rng));
  const Eigen::VectorXd before = ps.at("w").values;
  zero_grads(ps);
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(ps, st, AdamConfig{});
  EXPECT_TRUE(bit_equal(ps.at("w").values, before));
  EXPECT_EQ(st.step, 5);
}

// Scalar Adam recursion written out independently of the vectorised update.
TEST(Adam, MatchesScalarRecursionAndUnitStep) {
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  ParamStore ps;
  ps.insert("w", Tensor({2}, vec({0.0, 1.0})));
  const Eigen::VectorXd grad = vec({0.3, -2.0});
  AdamState st;
  double p[2] = {0.0, 1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  double last_step[2] = {0, 0};
  for (int t = 1; t <= 200; ++t) {
    ps.at("w").grad = grad;
    adam_step(ps, st, cfg);
    for (int i = 0; i < 2; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      last_step[i] = cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
      p[i] -= last_step[i];
    }
  }
  EXPECT_NEAR(ps.at("w").values[0], p[0], 1e-12);
  EXPECT_NEAR(ps.at("w").values[1], p[1], 1e-12);
  for (double s : last_step) EXPECT_NEAR(std::abs(s), cfg.learning_rate, 1e-6);
}

TEST(Train, DeterministicRuns) {
  const Dataset ds = small_synthetic(3, 0.2, 1, 80);
  const MlpArch arch{30, 1, {16, 16}, true};
  const TrainResult a = train(quick_config(LossKind::McEi, 3), ds, arch);
  const TrainResult b = train(quick_config(LossKind::McEi, 3), ds, arch);
  EXPECT_TRUE(a.checkpoint.params == b.checkpoint.params);
  EXPECT_TRUE(*a.checkpoint.optimizer == *b.checkpoint.optimizer);
  TrainConfig other = quick_config(LossKind::McEi, 3);
  other.seed = 6;
  EXPECT_FALSE(train(other, ds, arch).checkpoint.params == a.checkpoint.params);
}

TEST(Train, SupervisedIdentityTaskConverges) {
  const Dataset ds = unclipped_identity_task(256, 4, 2);
  const MlpArch arch{4, 1, {16}, false};
  TrainConfig cfg = quick_config(LossKind::Supervised, 200);
  cfg.clip = ds.clip;
  cfg.adam.learning_rate = 3e-3;
  const TrainResult r = train(cfg, ds, arch);
  ASSERT_EQ(r.log.epochs.size(), 200u);
  EXPECT_LT(r.log.epochs.back().loss, 1e-3);
  EXPECT_LT(r.log.epochs.back().loss, r.log.epochs.front().loss);
}

TEST(Train, LogIsFiniteOrderedAndSplitsTerms) {
  const Dataset ds = small_synthetic(3, 0.2, 3, 80);
  const MlpArch arch{30, 1, {16}, true};
  TrainConfig cfg = quick_config(LossKind::McEi, 4);
  cfg.validate_every = 2;
  const std::vector<Item> val = ds.subset(Split::Test);
  TrainOptions opts;
  opts.validation = &val;
  int calls = 0;
  opts.on_epoch = [&](const EpochRecord&) { ++calls; };
  const TrainResult r = train(cfg, ds, arch, opts);
  EXPECT_EQ(calls, 4);
  for (std::size_t i = 0; i < r.log.epochs.size(); ++i) {
    const EpochRecord& e = r.log.epochs[i];
    EXPECT_EQ(e.epoch, static_cast<int>(i) + 1);
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_GE(e.primary, 0.0);
    EXPECT_GE(e.ei, 0.0);
    EXPECT_NEAR(e.loss, e.primary + e.ei, 1e-9 * std::max(1.0, e.loss));
    EXPECT_EQ(e.val_sdr.has_value(), e.epoch % 2 == 0);
  }

  TempDir dir;
  r.log.write_csv(dir / "log.csv", cfg.fingerprint());
  std::ifstream f(dir / "log.csv");
  std::string first, header;
  std::getline(f, first);
  std::getline(f, header);
  EXPECT_EQ(first.rfind("# loss=mc+ei", 0), 0u) << first;
  EXPECT_EQ(header, "epoch,loss,primary,ei,val_sdr_db,seconds");
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  TempDir dir;
  const Dataset ds = small_synthetic(3, 0.2, 4, 80);
  const MlpArch arch{30, 1, {16}, true};
  const TrainResult full = train(quick_config(LossKind::McEi, 6), ds, arch);

  TrainOptions first;
  first.checkpoint_path = dir / "half.ckpt";
  train(quick_config(LossKind::McEi, 3), ds, arch, first);
  TrainOptions second;
  second.resume = load_checkpoint(dir / "half.ckpt", arch);
  EXPECT_EQ(second.resume->epoch, 3);
  const TrainResult resumed = train(quick_config(LossKind::McEi, 6), ds, arch, second);

  EXPECT_TRUE(resumed.checkpoint.params == full.checkpoint.params);
  EXPECT_TRUE(*resumed.checkpoint.optimizer == *full.checkpoint.optimizer);
  EXPECT_EQ(resumed.checkpoint.rng_state, full.checkpoint.rng_state);
  ASSERT_EQ(resumed.log.epochs.size(), 3u);
  EXPECT_EQ(resumed.log.epochs.front().epoch, 4);
  EXPECT_EQ(resumed.log.epochs.back().loss, full.log.epochs.back().loss);
}

TEST(Train, PeriodicCheckpoints) {
  TempDir dir;
  const Dataset ds = small_synthetic(2, 0.2, 5, 40);
  const MlpArch arch{30, 1, {8}, true};
  TrainConfig cfg = quick_config(LossKind::Mc, 4);
  cfg.checkpoint_every = 2;
  TrainOptions opts;
  opts.checkpoint_path = dir / "c.ckpt";
  std::vector<int> seen;
  opts.on_epoch = [&](const EpochRecord& e) {
    if (e.epoch == 3) seen.push_back(load_checkpoint(opts.checkpoint_path).epoch);
  };
  train(cfg, ds, arch, opts);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0], 2);
  EXPECT_EQ(load_checkpoint(dir / "c.ckpt").epoch, 4);
}

TEST(Checkpoint, FreshModelEqualsInitialisation) {
  TempDir dir;
  const Dataset ds = small_synthetic(2, 0.2, 6, 40);
  const MlpArch arch{30, 1, {8}, true};
  TrainOptions opts;
  opts.checkpoint_path = dir / "fresh.ckpt";
  train(quick_config(LossKind::McEi, 0), ds, arch, opts);
  const Checkpoint ck = load_checkpoint(dir / "fresh.ckpt");
  EXPECT_TRUE(ck.params == init_params(arch, 5));
  EXPECT_EQ(ck.epoch, 0);
}

TEST(Checkpoint, ArchitectureMismatchAndCorruption) {
  TempDir dir;
  Checkpoint ck;
  ck.arch = MlpArch{30, 1, {8}, true};
  ck.params = init_params(ck.arch, 1);
  save_checkpoint(ck, dir / "a.ckpt");
  EXPECT_NO_THROW(load_checkpoint(dir / "a.ckpt", ck.arch));
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", MlpArch{30, 1, {9}, true}), std::invalid_argument);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", Unet1dArch{}), std::invalid_argument);

  TrainOptions opts;
  opts.resume = ck;
  EXPECT_THROW(train(quick_config(LossKind::Mc, 1), small_synthetic(2, 0.2, 1, 20), MlpArch{30, 1, {9}, true}, opts),
               std::invalid_argument);

  {
    std::fstream f(dir / "a.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(60);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), FormatError);

  // Parameters that do not fit the stored architecture.
  BinaryWriter w("DCLPCKPT", 1);
  w.str(describe(MlpArch{30, 1, {8}, true}));
  w.str("");
  w.u64(0);
  w.u64(1);
  w.str("fc0.weight");
  w.u64(2);
  w.u64(8);
  w.u64(30);
  w.reals(Eigen::VectorXd::Zero(240));
  w.u8(0);
  w.str("");
  w.save(dir / "bad.ckpt");
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST(Train, NonFiniteLossAbortsAndKeepsLastGoodState) {
  TempDir dir;
  Dataset ds;
  ds.clip.mu = 1e300;
  ds.items.push_back(Item{vec({-1e200, 1e200}), vec({1e200, -1e200}), "huge", Split::Train});
  const MlpArch arch{2, 1, {4}, true};
  TrainConfig cfg = quick_config(LossKind::Supervised, 3);
  cfg.clip = ds.clip;
  TrainOptions opts;
  opts.checkpoint_path = dir / "nan.ckpt";
  try {
    train(cfg, ds, arch, opts);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
  const Checkpoint kept = load_checkpoint(dir / "nan.ckpt");
  EXPECT_EQ(kept.epoch, 0);
  EXPECT_TRUE(kept.params == init_params(arch, cfg.seed));
}

TEST(Train, InputValidation) {
  const Dataset ds = small_synthetic(2, 0.2, 7, 20);
  Dataset no_truth = ds;
  no_truth.strip_ground_truth(Split::Train);
  const MlpArch arch{30, 1, {8}, true};
  EXPECT_THROW(train(quick_config(LossKind::Supervised, 1), no_truth, arch), std::invalid_argument);
  EXPECT_NO_THROW(train(quick_config(LossKind::McEi, 1), no_truth, arch));
  TrainConfig masked = quick_config(LossKind::McEi, 1);
  masked.use_mask_channel = true;
  EXPECT_THROW(train(masked, ds, arch), std::invalid_argument);
  TrainConfig bad = quick_config(LossKind::McEi, 1);
  bad.batch_size = 0;
  EXPECT_THROW(train(bad, ds, arch), std::invalid_argument);
  bad = quick_config(LossKind::McEi, 1);
  bad.adam.learning_rate = 0.0;
  EXPECT_THROW(train(bad, ds, arch), std::invalid_argument);
}

// Clipped samples get no gradient once the output overshoots mu, so the naive
// objective leaves saturated samples near where the skip connection puts them.
TEST(Train, NaiveConsistencyStaysNearIdentity) {
  const Dataset ds = small_synthetic(3, 0.3, 8, 300);
  const MlpArch arch{30, 1, {32, 32}, true};
  const TrainResult r = train(quick_config(LossKind::Nmc, 30), ds, arch);
  const SdrReport rep = evaluate(r.checkpoint.params, arch, ds.subset(Split::Test), ds.clip, BlendConfig{});
  EXPECT_NEAR(rep.mean, rep.identity_mean, 1.0);
}
