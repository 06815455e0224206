#include "declip/train.hpp"

#include "declip/binio.hpp"
#include "declip/eval.hpp"
#include "declip/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace declip {

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    if (!p.grad) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) m = Eigen::VectorXd::Zero(p.size());
    if (v.size() == 0) v = Eigen::VectorXd::Zero(p.size());
    const Eigen::VectorXd& g = *p.grad;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.values.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

void TrainConfig::validate() const {
  loss.validate();
  clip.validate();
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (checkpoint_every < 0 || validate_every < 0) throw std::invalid_argument("intervals must be non-negative");
}

std::string TrainConfig::fingerprint() const {
  std::ostringstream os;
  os << "loss=" << to_string(loss.kind) << " ei_weight=" << format_real(loss.ei_weight) << " g_min="
     << format_real(loss.sampler.g_min) << " g_max=" << format_real(loss.sampler.g_max)
     << " g_draws=" << loss.sampler.samples_per_item << " mu=" << format_real(clip.mu)
     << " eps_sat=" << format_real(clip.eps_sat) << " lr=" << format_real(adam.learning_rate)
     << " beta1=" << format_real(adam.beta1) << " beta2=" << format_real(adam.beta2)
     << " adam_eps=" << format_real(adam.eps) << " batch=" << batch_size << " epochs=" << epochs
     << " seed=" << seed << " mask=" << use_mask_channel;
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path, const std::string& fingerprint) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << "# " << fingerprint << '\n';
  f << "epoch,loss,primary,ei,val_sdr_db,seconds\n";
  for (const auto& r : epochs) {
    f << r.epoch << ',' << format_real(r.loss) << ',' << format_real(r.primary) << ',' << format_real(r.ei) << ','
      << (r.val_sdr ? format_real(*r.val_sdr) : "") << ',' << format_real(r.seconds) << '\n';
  }
}

// ---- checkpoints ------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "DCLPCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw FormatError("corrupt RNG state in checkpoint");
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  w.str(describe(ckpt.arch));
  w.str(ckpt.fingerprint);
  w.u64(static_cast<std::uint64_t>(ckpt.epoch));
  w.u64(ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u64(t.shape.size());
    for (Index d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    w.reals(t.values);
  }
  w.u8(ckpt.optimizer.has_value());
  if (ckpt.optimizer) {
    w.u64(static_cast<std::uint64_t>(ckpt.optimizer->step));
    for (const auto& [name, t] : ckpt.params) {
      auto pick = [&](const std::map<std::string, Eigen::VectorXd>& m) {
        auto it = m.find(name);
        return it == m.end() || it->second.size() == 0 ? Eigen::VectorXd::Zero(t.size()).eval() : it->second;
      };
      w.reals(pick(ckpt.optimizer->m));
      w.reals(pick(ckpt.optimizer->v));
    }
  }
  w.str(ckpt.rng_state);
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(path, kCheckpointMagic);
  if (r.version() != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(r.version()) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.arch = parse_arch(r.str());
  ck.fingerprint = r.str();
  ck.epoch = static_cast<int>(r.u64());
  const std::uint64_t count = r.u64();
  std::vector<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    Shape shape(r.u64());
    for (Index& d : shape) d = static_cast<Index>(r.u64());
    ck.params.insert(name, Tensor(shape, r.reals(), true));
    names.push_back(std::move(name));
  }
  if (r.u8()) {
    AdamState st;
    st.step = static_cast<std::int64_t>(r.u64());
    for (const auto& name : names) {
      st.m[name] = r.reals();
      st.v[name] = r.reals();
    }
    ck.optimizer = std::move(st);
  }
  ck.rng_state = r.str();
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes in checkpoint");

  const ParamStore reference = init_params(ck.arch, 0);
  bool layout_ok = reference.size() == ck.params.size();
  auto b = ck.params.begin();
  for (auto a = reference.begin(); layout_ok && a != reference.end(); ++a, ++b) {
    layout_ok = a->first == b->first && a->second.shape == b->second.shape;
  }
  if (!layout_ok) throw FormatError(path.string() + ": parameters do not match architecture '" + describe(ck.arch) + "'");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Arch& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.arch == expected)) {
    throw std::invalid_argument(path.string() + ": checkpoint architecture '" + describe(ck.arch) +
                                "' does not match expected '" + describe(expected) + "'");
  }
  return ck;
}

// ---- training loop ----------------------------------------------------------------

TrainResult train(const TrainConfig& config, const Dataset& dataset, const Arch& arch, const TrainOptions& options) {
  config.validate();
  validate(arch);
  if (in_channels(arch) != (config.use_mask_channel ? 2 : 1)) {
    throw std::invalid_argument("architecture input channels do not match use_mask_channel");
  }
  const std::vector<Item> items = dataset.subset(Split::Train);
  if (items.empty()) throw std::invalid_argument("dataset has no training items");
  const Index length = items.front().y.size();
  for (const Item& it : items) {
    if (it.y.size() != length) throw std::invalid_argument("training items must share one length");
    if (config.loss.kind == LossKind::Supervised && !it.x) {
      throw std::invalid_argument("supervised training needs ground truth for every item (" + it.meta + ")");
    }
  }

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.arch = arch;
  ck.fingerprint = config.fingerprint();
  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamState state;
  if (options.resume) {
    if (!(options.resume->arch == arch)) throw std::invalid_argument("resume checkpoint has a different architecture");
    ck.params = options.resume->params;
    ck.epoch = options.resume->epoch;
    if (options.resume->optimizer) state = *options.resume->optimizer;
    if (!options.resume->rng_state.empty()) rng_from_string(rng, options.resume->rng_state);
  } else {
    ck.params = init_params(arch, config.seed);
  }
  ParamStore& params = ck.params;
  zero_grads(params);

  auto snapshot = [&]() {
    ck.optimizer = state;
    ck.rng_state = rng_to_string(rng);
  };
  auto write = [&](const Checkpoint& c) {
    if (!options.checkpoint_path.empty()) save_checkpoint(c, options.checkpoint_path);
  };

  std::vector<std::size_t> order(items.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = ck.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    snapshot();
    const Checkpoint last_good = ck;

    // Fresh permutation each epoch: the order depends on the RNG alone, so a resumed run matches.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const auto count = static_cast<Index>(stop - start);
      Tensor y = Tensor::zeros({count, 1, length});
      std::optional<Tensor> x;
      if (config.loss.kind == LossKind::Supervised) x = Tensor::zeros({count, 1, length});
      for (std::size_t i = start; i < stop; ++i) {
        const Item& it = items[order[i]];
        const auto row = static_cast<Index>(i - start) * length;
        y.values.segment(row, length) = it.y;
        if (x) x->values.segment(row, length) = *it.x;
      }

      Graph graph;
      Var yv = graph.constant(std::move(y));
      const ReconstructionFn f = network_fn(graph, params, arch, config.clip, config.use_mask_channel);
      const LossValue lv = total_loss(f, yv, x ? &*x : nullptr, config.clip, config.loss, rng);
      const double value = lv.total.value().values[0];
      if (!std::isfinite(value)) {
        write(last_good);
        throw TrainingDiverged(epoch, "non-finite training loss at epoch " + std::to_string(epoch) +
                                          " (state of epoch " + std::to_string(last_good.epoch) + " kept)");
      }
      graph.backward(lv.total);
      adam_step(params, state, config.adam);
      zero_grads(params);
      rec.loss += value;
      rec.primary += lv.primary;
      rec.ei += lv.ei;
    }
    const double n = static_cast<double>(items.size());
    rec.loss /= n;
    rec.primary /= n;
    rec.ei /= n;
    ck.epoch = epoch;

    if (options.validation && config.validate_every > 0 && epoch % config.validate_every == 0) {
      const SdrReport rep = evaluate(params, arch, *options.validation, config.clip, BlendConfig{});
      rec.val_sdr = rep.mean;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      snapshot();
      write(ck);
    }
  }
  snapshot();
  write(ck);
  return result;
}

}  // namespace declip
