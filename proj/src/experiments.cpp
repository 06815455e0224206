#include "declip/experiments.hpp"

#include "declip/text.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace declip {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined inputs
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string cell_name(const SweepCell& c) {
  std::ostringstream os;
  os << "d" << c.d << "_v" << format_real(c.v) << "_g" << format_real(c.g_max);
  return os.str();
}

SweepCell run_cell(SweepCell cell, const Dataset& data, const TrainConfig& train_cfg, const MlpArch& arch_in,
                   const BlendConfig& blend, const std::filesystem::path& checkpoint_dir) {
  MlpArch arch = arch_in;
  arch.input_dim = data.items.front().y.size();
  arch.in_channels = train_cfg.use_mask_channel ? 2 : 1;
  TrainOptions opts;
  if (!checkpoint_dir.empty()) {
    std::filesystem::create_directories(checkpoint_dir);
    opts.checkpoint_path = checkpoint_dir / (cell_name(cell) + ".ckpt");
  }
  cell.fingerprint = train_cfg.fingerprint() + " | " + data.description + " | " + describe(arch);
  const std::vector<Item> test = data.subset(Split::Test);
  try {
    const TrainResult res = train(train_cfg, data, arch, opts);
    const SdrReport rep = evaluate(res.checkpoint.params, arch, test, train_cfg.clip, blend, 64);
    cell.mean_sdr = rep.mean;
    cell.std_sdr = rep.std;
    cell.identity_sdr = rep.identity_mean;
    cell.ok = std::isfinite(rep.mean);
    cell.status = cell.ok ? "ok" : "non-finite SDR";
  } catch (const TrainingDiverged& e) {
    cell.ok = false;
    cell.status = std::string("diverged: ") + e.what();
    cell.identity_sdr = summarize([&] {
      std::vector<double> v;
      for (const Item& it : test) v.push_back(sdr(*it.x, it.y));
      return v;
    }()).mean;
    cell.mean_sdr = std::numeric_limits<double>::quiet_NaN();
  }
  return cell;
}

}  // namespace

const SweepCell* SweepResult::find(Index d, double v, double g_max) const {
  for (const auto& c : cells) {
    if (c.d == d && c.v == v && c.g_max == g_max) return &c;
  }
  return nullptr;
}

void SweepResult::write_csv(const std::filesystem::path& path, const std::string& fingerprint) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << "# " << fingerprint << '\n';
  f << "d,v,g_max,mean_sdr_db,std_sdr_db,identity_sdr_db,status\n";
  for (const auto& c : cells) {
    std::string status = c.status;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    f << c.d << ',' << format_real(c.v) << ',' << format_real(c.g_max) << ',' << format_real(c.mean_sdr) << ','
      << format_real(c.std_sdr) << ',' << format_real(c.identity_sdr) << ',' << status << '\n';
  }
}

SweepResult sweep_subspace(const SubspaceSweepConfig& cfg, const CellProgress& progress) {
  SweepResult result;
  result.axis = "d,v";
  for (Index d : cfg.dims) {
    for (double v : cfg.proportions) {
      SweepCell cell;
      cell.d = d;
      cell.v = v;
      cell.g_max = cfg.train.loss.sampler.g_max;
      if (result.find(d, v, cell.g_max)) continue;

      SyntheticSpec spec = cfg.data;
      spec.subspace_dim = d;
      spec.clip_proportion = v;
      spec.seed = mix_seed(cfg.data.seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(std::llround(v * 1e6)));
      TrainConfig tc = cfg.train;
      tc.seed = mix_seed(cfg.train.seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(std::llround(v * 1e6)));
      try {
        const Dataset data = make_synthetic(spec);
        cell = run_cell(cell, data, tc, cfg.arch, cfg.blend, cfg.checkpoint_dir);
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.status = std::string("failed: ") + e.what();
        cell.mean_sdr = std::numeric_limits<double>::quiet_NaN();
      }
      result.cells.push_back(cell);
      if (progress) progress(cell);
    }
  }
  return result;
}

SweepResult sweep_gmax(const GmaxSweepConfig& cfg, const CellProgress& progress) {
  SweepResult result;
  result.axis = "g_max";
  const Dataset data = make_synthetic(cfg.data);
  for (double g_max : cfg.g_max_values) {
    SweepCell cell;
    cell.d = cfg.data.subspace_dim;
    cell.v = cfg.data.clip_proportion;
    cell.g_max = g_max;
    if (result.find(cell.d, cell.v, g_max)) continue;
    TrainConfig tc = cfg.train;
    tc.loss.sampler.g_max = g_max;
    try {
      cell = run_cell(cell, data, tc, cfg.arch, cfg.blend, cfg.checkpoint_dir);
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.status = std::string("failed: ") + e.what();
      cell.mean_sdr = std::numeric_limits<double>::quiet_NaN();
    }
    result.cells.push_back(cell);
    if (progress) progress(cell);
  }
  return result;
}

void ShiftReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << "# " << fingerprint << '\n';
  f << "method,mean_sdr_db,std_sdr_db,items\n";
  f << "identity," << format_real(supervised.identity_mean) << ',' << format_real(supervised.identity_std) << ','
    << supervised.identity_sdr.size() << '\n';
  f << "supervised," << format_real(supervised.mean) << ',' << format_real(supervised.std) << ','
    << supervised.per_item_sdr.size() << '\n';
  f << "self-supervised," << format_real(self_supervised.mean) << ',' << format_real(self_supervised.std) << ','
    << self_supervised.per_item_sdr.size() << '\n';
}

ShiftReport shift_experiment(const Dataset& source, const Dataset& target, const ShiftConfig& cfg) {
  const std::vector<Item> test = target.subset(Split::Test);
  if (test.empty()) throw std::invalid_argument("shift: target corpus has no test items");

  TrainConfig sup = cfg.supervised;
  sup.loss.kind = LossKind::Supervised;
  Dataset sup_data;
  sup_data.clip = source.clip;
  sup_data.description = source.description;
  sup_data.items = source.subset(Split::Train);

  Dataset self_data;
  self_data.clip = source.clip;
  self_data.description = source.description + " + " + target.description;
  for (const Dataset* ds : {&source, &target}) {
    for (Item it : ds->items) {
      if (ds == &source && it.split == Split::Test) continue;
      it.x.reset();
      it.split = Split::Train;
      self_data.items.push_back(std::move(it));
    }
  }

  ShiftReport rep;
  const TrainResult sup_run = train(sup, sup_data, cfg.arch);
  rep.supervised = evaluate(sup_run.checkpoint.params, cfg.arch, test, sup.clip, cfg.blend);
  const TrainResult self_run = train(cfg.self_supervised, self_data, cfg.arch);
  rep.self_supervised = evaluate(self_run.checkpoint.params, cfg.arch, test, cfg.self_supervised.clip, cfg.blend);
  rep.fingerprint = "supervised[" + sup.fingerprint() + "] self[" + cfg.self_supervised.fingerprint() + "] " +
                    describe(cfg.arch) + " | source: " + source.description + " | target: " + target.description;
  return rep;
}

DeclipSummary declip_file(const std::filesystem::path& input, const std::filesystem::path& output,
                          const Checkpoint& model, const DeclipOptions& options) {
  options.clip.validate();
  options.blend.validate(options.clip);
  const AudioClip clip = load_audio(input);
  Index window = options.window;
  if (const auto* mlp = std::get_if<MlpArch>(&model.arch)) {
    if (window != 0 && window != mlp->input_dim) {
      throw std::invalid_argument("declip: window " + std::to_string(window) + " incompatible with " + describe(model.arch));
    }
    window = mlp->input_dim;
  } else if (window == 0) {
    window = clip.sample_rate;
  }
  if (window < 1) throw std::invalid_argument("declip: window must be positive");

  DeclipSummary summary;
  summary.input_samples = clip.samples.size();
  summary.windows = clip.samples.size() / window;
  summary.output_samples = summary.windows * window;
  Signal out(summary.output_samples);
  for (Index w = 0; w < summary.windows; ++w) {
    const Signal y = clip.samples.segment(w * window, window);
    summary.saturated_samples += saturation_mask(y, options.clip).count();
    out.segment(w * window, window) = reconstruct(model.params, model.arch, {y}, options.clip, options.blend).front();
  }
  write_wav(output, out, clip.sample_rate, options.format);
  return summary;
}

}  // namespace declip
