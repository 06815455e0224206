// declip: command-line front end.
//
//   declip gen-data synthetic|audio|corpus ...
//   declip train  --dataset D --out C [--config F] [...]
//   declip eval   --checkpoint C --dataset D --out R.csv
//   declip sweep  subspace|gmax --out S.csv
//   declip shift  --source A --target B --out R.csv
//   declip declip --in clipped.wav --checkpoint C --out restored.wav

#include "declip/corpus.hpp"
#include "declip/data.hpp"
#include "declip/eval.hpp"
#include "declip/experiments.hpp"
#include "declip/text.hpp"
#include "declip/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace declip;

namespace {

struct ArchFlags {
  std::string kind = "mlp";
  std::vector<Index> hidden{256, 256, 256};
  int depth = 4;
  Index base_channels = 32;
  Index kernel_size = 5;
  bool no_skip = false;

  void add(CLI::App* app) {
    app->add_option("--arch", kind, "Network family")->check(CLI::IsMember({"mlp", "unet"}))->capture_default_str();
    app->add_option("--hidden", hidden, "MLP hidden widths")->delimiter(',')->capture_default_str();
    app->add_option("--depth", depth, "UNet levels")->capture_default_str();
    app->add_option("--base-channels", base_channels, "UNet channels at the first level")->capture_default_str();
    app->add_option("--kernel-size", kernel_size, "UNet kernel size (odd)")->capture_default_str();
    app->add_flag("--no-skip", no_skip, "Disable the residual input skip");
  }

  Arch build(Index length, bool mask) const {
    if (kind == "mlp") {
      MlpArch a;
      a.input_dim = length;
      a.in_channels = mask ? 2 : 1;
      a.hidden_dims = hidden;
      a.skip = !no_skip;
      return a;
    }
    Unet1dArch a;
    a.in_channels = mask ? 2 : 1;
    a.depth = depth;
    a.base_channels = base_channels;
    a.kernel_size = kernel_size;
    a.skip = !no_skip;
    return a;
  }
};

struct TrainFlags {
  std::string loss = "mc+ei";
  double ei_weight = 1.0;
  double g_min = 0.5;
  double g_max = 1.5;
  int g_draws = 1;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch = 32;
  int epochs = 100;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  bool mask = false;
  std::optional<double> mu;
  double eps_sat = 1e-9;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "loss", loss, "supervised, nmc, mc or mc+ei")->capture_default_str();
    app->add_option("--" + prefix + "ei-weight", ei_weight, "Weight of the equivariance term")->capture_default_str();
    app->add_option("--" + prefix + "g-min", g_min, "Lower bound of the gain distribution")->capture_default_str();
    app->add_option("--" + prefix + "g-max", g_max, "Upper bound of the gain distribution")->capture_default_str();
    app->add_option("--" + prefix + "g-draws", g_draws, "Gain draws per item and step")->capture_default_str();
    app->add_option("--" + prefix + "lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--" + prefix + "beta1", beta1)->capture_default_str();
    app->add_option("--" + prefix + "beta2", beta2)->capture_default_str();
    app->add_option("--" + prefix + "adam-eps", adam_eps)->capture_default_str();
    app->add_option("--" + prefix + "batch", batch, "Mini-batch size")->capture_default_str();
    app->add_option("--" + prefix + "epochs", epochs)->capture_default_str();
    app->add_option("--" + prefix + "seed", seed)->capture_default_str();
    app->add_option("--" + prefix + "checkpoint-every", checkpoint_every, "Epochs between checkpoints (0 = end only)")
        ->capture_default_str();
    app->add_flag("--" + prefix + "mask", mask, "Feed the unsaturated mask as a second channel");
    app->add_option("--" + prefix + "mu", mu, "Clip level (default: the dataset's)");
    app->add_option("--" + prefix + "eps-sat", eps_sat, "Relative saturation tolerance")->capture_default_str();
  }

  TrainConfig build(const ClipConfig& dataset_clip) const {
    TrainConfig c;
    c.loss.kind = loss_kind_from_string(loss);
    c.loss.ei_weight = ei_weight;
    c.loss.sampler = GroupSampler{g_min, g_max, g_draws};
    c.clip.mu = mu.value_or(dataset_clip.mu);
    c.clip.eps_sat = eps_sat;
    c.adam = AdamConfig{lr, beta1, beta2, adam_eps};
    c.batch_size = batch;
    c.epochs = epochs;
    c.seed = seed;
    c.checkpoint_every = checkpoint_every;
    c.use_mask_channel = mask;
    return c;
  }
};

struct BlendFlags {
  double tau = 0.95;
  std::string mode = "level-normalized";
  void add(CLI::App* app) {
    app->add_option("--tau", tau, "Blending knee as a fraction of mu")->capture_default_str();
    app->add_option("--blend-mode", mode, "level-normalized or paper-exact")
        ->check(CLI::IsMember({"level-normalized", "paper-exact"}))
        ->capture_default_str();
  }
  BlendConfig build() const { return BlendConfig{tau, blend_mode_from_string(mode)}; }
};

Index common_length(const Dataset& ds) {
  if (ds.items.empty()) throw std::invalid_argument("dataset is empty");
  return ds.items.front().y.size();
}

void print_epoch(const EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << " loss " << format_real(r.loss) << " (primary " << format_real(r.primary)
            << ", ei " << format_real(r.ei) << ")";
  if (r.val_sdr) std::cerr << " val_sdr " << format_real(*r.val_sdr) << " dB";
  std::cerr << " " << format_real(r.seconds) << "s\n";
}

void print_cell(const SweepCell& c) {
  std::cerr << "cell d=" << c.d << " v=" << format_real(c.v) << " g_max=" << format_real(c.g_max) << ": "
            << (c.ok ? format_real(c.mean_sdr) + " dB (identity " + format_real(c.identity_sdr) + " dB)" : c.status)
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised declipping: data generation, training, evaluation and experiments"};
  app.require_subcommand(1);

  // ---- gen-data -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Build a dataset file (or a substitute audio corpus)");
  gen->require_subcommand(1);

  SyntheticSpec syn;
  fs::path syn_out, syn_csv;
  bool syn_measurements_only = false;
  auto* gen_syn = gen->add_subcommand("synthetic", "Random-subspace signals clipped to a target proportion");
  gen_syn->add_option("--n", syn.ambient_dim, "Ambient dimension")->capture_default_str();
  gen_syn->add_option("--d", syn.subspace_dim, "Subspace dimension")->capture_default_str();
  gen_syn->add_option("--count", syn.num_signals, "Number of signals")->capture_default_str();
  gen_syn->add_option("--v", syn.clip_proportion, "Clipped proportion per signal")->capture_default_str();
  gen_syn->add_option("--mu", syn.mu, "Clip level")->capture_default_str();
  gen_syn->add_option("--test-fraction", syn.test_fraction)->capture_default_str();
  gen_syn->add_option("--seed", syn.seed)->capture_default_str();
  gen_syn->add_option("--out", syn_out, "Dataset file")->required();
  gen_syn->add_option("--csv", syn_csv, "Optional CSV export");
  gen_syn->add_flag("--measurements-only", syn_measurements_only, "Drop ground truth from the train split");

  AudioSpec aspec;
  std::vector<fs::path> train_files, test_files, audio_files;
  double test_share = 0.1;
  fs::path audio_out, audio_csv;
  bool no_normalize = false, audio_measurements_only = false;
  auto* gen_audio = gen->add_subcommand("audio", "Window, clip and filter WAV recordings");
  gen_audio->add_option("--train", train_files, "Training WAV files");
  gen_audio->add_option("--test", test_files, "Test WAV files");
  gen_audio->add_option("--files", audio_files, "WAV files split by file into train/test (see --test-share)");
  gen_audio->add_option("--test-share", test_share, "Share of --files used for testing")->capture_default_str();
  gen_audio->add_option("--rate", aspec.sample_rate, "Target sample rate (integer decimation)")->capture_default_str();
  gen_audio->add_option("--window", aspec.window_seconds, "Window length in seconds")->capture_default_str();
  gen_audio->add_option("--mu", aspec.mu, "Clip level")->capture_default_str();
  gen_audio->add_flag("--no-normalize", no_normalize, "Skip per-file peak normalisation");
  gen_audio->add_flag("--measurements-only", audio_measurements_only, "Drop ground truth from the train split");
  gen_audio->add_option("--out", audio_out, "Dataset file")->required();
  gen_audio->add_option("--csv", audio_csv, "Optional CSV export");

  std::string corpus_kind = "music";
  fs::path corpus_dir;
  int corpus_files = 20;
  double corpus_seconds = 10.0;
  int corpus_rate = 8000;
  std::uint64_t corpus_seed = 0;
  auto* gen_corpus = gen->add_subcommand("corpus", "Write a procedural music or speech corpus as WAV files");
  gen_corpus->add_option("--kind", corpus_kind)->check(CLI::IsMember({"music", "speech"}))->capture_default_str();
  gen_corpus->add_option("--dir", corpus_dir, "Output directory")->required();
  gen_corpus->add_option("--files", corpus_files)->capture_default_str();
  gen_corpus->add_option("--seconds", corpus_seconds)->capture_default_str();
  gen_corpus->add_option("--rate", corpus_rate)->capture_default_str();
  gen_corpus->add_option("--seed", corpus_seed)->capture_default_str();

  // ---- train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a reconstruction network");
  train_cmd->set_config("--config", "", "INI/TOML file with any of the flags below");
  fs::path train_dataset, train_out, train_log, resume_path, val_dataset;
  int validate_every = 0;
  ArchFlags arch_flags;
  TrainFlags train_flags;
  train_cmd->add_option("--dataset", train_dataset)->required();
  train_cmd->add_option("--out", train_out, "Checkpoint file")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch CSV log");
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");
  train_cmd->add_option("--validate-every", validate_every, "Epochs between test-split SDR logs")->capture_default_str();
  arch_flags.add(train_cmd);
  train_flags.add(train_cmd);

  // ---- eval -----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the test split");
  fs::path eval_ckpt, eval_dataset, eval_out;
  std::optional<double> eval_mu;
  double eval_eps_sat = 1e-9;
  std::string eval_split = "test";
  BlendFlags eval_blend;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--dataset", eval_dataset)->required();
  eval_cmd->add_option("--out", eval_out, "Report CSV")->required();
  eval_cmd->add_option("--mu", eval_mu, "Clip level (default: the dataset's)");
  eval_cmd->add_option("--eps-sat", eval_eps_sat)->capture_default_str();
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval_blend.add(eval_cmd);

  // ---- sweep ----------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Synthetic sweeps over (d, v) or g_max");
  sweep_cmd->require_subcommand(1);
  fs::path sweep_out, sweep_ckpt_dir;
  SyntheticSpec sweep_data;
  sweep_data.num_signals = 1000;
  TrainFlags sweep_train;
  ArchFlags sweep_arch;
  BlendFlags sweep_blend;
  std::vector<Index> dims{5, 10, 20};
  std::vector<double> props{0.1, 0.3, 0.5};
  std::vector<double> gmax_values{1.0, 1.25, 1.5, 2.0, 3.0, 5.0};
  Index gmax_d = 10;
  double gmax_v = 0.3;
  for (auto* sub : {sweep_cmd->add_subcommand("subspace", "Grid over subspace dimension and clipped proportion"),
                    sweep_cmd->add_subcommand("gmax", "Sweep over the upper gain bound")}) {
    sub->add_option("--out", sweep_out, "Sweep CSV")->required();
    sub->add_option("--checkpoint-dir", sweep_ckpt_dir, "Per-cell checkpoints");
    sub->add_option("--n", sweep_data.ambient_dim)->capture_default_str();
    sub->add_option("--count", sweep_data.num_signals)->capture_default_str();
    sub->add_option("--test-fraction", sweep_data.test_fraction)->capture_default_str();
    sub->add_option("--data-seed", sweep_data.seed)->capture_default_str();
    sweep_train.add(sub);
    sweep_arch.add(sub);
    sweep_blend.add(sub);
  }
  auto* sweep_sub = sweep_cmd->get_subcommand("subspace");
  sweep_sub->add_option("--dims", dims)->delimiter(',')->capture_default_str();
  sweep_sub->add_option("--proportions", props)->delimiter(',')->capture_default_str();
  auto* sweep_g = sweep_cmd->get_subcommand("gmax");
  sweep_g->add_option("--values", gmax_values)->delimiter(',')->capture_default_str();
  sweep_g->add_option("--d", gmax_d)->capture_default_str();
  sweep_g->add_option("--v", gmax_v)->capture_default_str();

  // ---- shift ----------------------------------------------------------------
  auto* shift_cmd = app.add_subcommand("shift", "Supervised vs self-supervised under a train/test corpus shift");
  fs::path shift_source, shift_target, shift_out;
  ArchFlags shift_arch;
  TrainFlags shift_sup, shift_self;
  shift_sup.loss = "supervised";
  BlendFlags shift_blend;
  shift_cmd->add_option("--source", shift_source, "Corpus with ground truth (train split used)")->required();
  shift_cmd->add_option("--target", shift_target, "Shifted corpus (test split scored)")->required();
  shift_cmd->add_option("--out", shift_out, "Comparison CSV")->required();
  shift_arch.add(shift_cmd);
  shift_sup.add(shift_cmd, "sup-");
  shift_self.add(shift_cmd, "self-");
  shift_blend.add(shift_cmd);

  // ---- declip ---------------------------------------------------------------
  auto* declip_cmd = app.add_subcommand("declip", "Restore a clipped WAV file");
  fs::path dec_in, dec_out, dec_ckpt;
  DeclipOptions dec_opts;
  dec_opts.clip.mu = 0.1;
  BlendFlags dec_blend;
  bool dec_float = false;
  declip_cmd->add_option("--in", dec_in)->required();
  declip_cmd->add_option("--out", dec_out)->required();
  declip_cmd->add_option("--checkpoint", dec_ckpt)->required();
  declip_cmd->add_option("--mu", dec_opts.clip.mu, "Clip level of the recording")->capture_default_str();
  declip_cmd->add_option("--eps-sat", dec_opts.clip.eps_sat)->capture_default_str();
  declip_cmd->add_option("--window", dec_opts.window, "Samples per window (0 = model default)")->capture_default_str();
  declip_cmd->add_flag("--float", dec_float, "Write 32-bit float instead of 16-bit PCM");
  dec_blend.add(declip_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (gen_syn->parsed()) {
        Dataset ds = make_synthetic(syn);
        if (syn_measurements_only) ds.strip_ground_truth(Split::Train);
        save_dataset(ds, syn_out);
        if (!syn_csv.empty()) export_csv(ds, syn_csv);
        std::cerr << "wrote " << ds.items.size() << " items to " << syn_out << '\n';
      } else if (gen_audio->parsed()) {
        aspec.normalize = !no_normalize;
        if (!audio_files.empty()) {
          std::sort(audio_files.begin(), audio_files.end());
          const auto n_test = static_cast<std::size_t>(std::llround(test_share * static_cast<double>(audio_files.size())));
          test_files.insert(test_files.end(), audio_files.end() - static_cast<std::ptrdiff_t>(n_test), audio_files.end());
          train_files.insert(train_files.end(), audio_files.begin(), audio_files.end() - static_cast<std::ptrdiff_t>(n_test));
        }
        Dataset ds = make_audio_dataset(train_files, test_files, aspec);
        if (audio_measurements_only) ds.strip_ground_truth(Split::Train);
        save_dataset(ds, audio_out);
        if (!audio_csv.empty()) export_csv(ds, audio_csv);
        std::cerr << "wrote " << ds.count(Split::Train) << " train / " << ds.count(Split::Test) << " test windows to "
                  << audio_out << '\n';
      } else {
        const auto paths = write_corpus(corpus_kind_from_string(corpus_kind), corpus_dir, corpus_kind, corpus_files,
                                        corpus_seconds, corpus_rate, corpus_seed);
        std::cerr << "wrote " << paths.size() << " files to " << corpus_dir << '\n';
      }
    } else if (train_cmd->parsed()) {
      const Dataset ds = load_dataset(train_dataset);
      TrainConfig cfg = train_flags.build(ds.clip);
      cfg.validate_every = validate_every;
      const Arch arch = arch_flags.build(common_length(ds), cfg.use_mask_channel);
      TrainOptions opts;
      opts.checkpoint_path = train_out;
      opts.on_epoch = print_epoch;
      std::vector<Item> validation;
      if (validate_every > 0) {
        validation = ds.subset(Split::Test);
        opts.validation = &validation;
      }
      if (!resume_path.empty()) opts.resume = load_checkpoint(resume_path, arch);
      const TrainResult res = train(cfg, ds, arch, opts);
      if (!train_log.empty()) res.log.write_csv(train_log, cfg.fingerprint() + " | " + describe(arch));
      std::cerr << "saved " << train_out << '\n';
    } else if (eval_cmd->parsed()) {
      const Dataset ds = load_dataset(eval_dataset);
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      ClipConfig clip = ds.clip;
      if (eval_mu) clip.mu = *eval_mu;
      clip.eps_sat = eval_eps_sat;
      const SdrReport rep = evaluate(ck.params, ck.arch, ds.subset(eval_split == "test" ? Split::Test : Split::Train),
                                     clip, eval_blend.build());
      SdrReport stamped = rep;
      stamped.fingerprint = rep.fingerprint + " | train: " + ck.fingerprint + " | data: " + ds.description;
      write_report_csv(stamped, eval_out);
      std::cout << "SDR " << format_real(rep.mean) << " +- " << format_real(rep.std) << " dB (identity "
                << format_real(rep.identity_mean) << " +- " << format_real(rep.identity_std) << " dB)\n";
    } else if (sweep_cmd->parsed()) {
      TrainConfig tc = sweep_train.build(ClipConfig{sweep_data.mu});
      const Arch arch = sweep_arch.build(sweep_data.ambient_dim, tc.use_mask_channel);
      if (!std::holds_alternative<MlpArch>(arch)) throw std::invalid_argument("sweeps use the MLP architecture");
      SweepResult result;
      std::string fp;
      if (sweep_sub->parsed()) {
        SubspaceSweepConfig cfg{dims, props, sweep_data, tc, std::get<MlpArch>(arch), sweep_blend.build(), sweep_ckpt_dir};
        result = sweep_subspace(cfg, print_cell);
        fp = "subspace sweep | " + tc.fingerprint() + " | " + sweep_data.describe() + " | " + describe(arch);
      } else {
        SyntheticSpec spec = sweep_data;
        spec.subspace_dim = gmax_d;
        spec.clip_proportion = gmax_v;
        GmaxSweepConfig cfg{gmax_values, spec, tc, std::get<MlpArch>(arch), sweep_blend.build(), sweep_ckpt_dir};
        result = sweep_gmax(cfg, print_cell);
        fp = "g_max sweep | " + tc.fingerprint() + " | " + spec.describe() + " | " + describe(arch);
      }
      result.write_csv(sweep_out, fp);
    } else if (shift_cmd->parsed()) {
      const Dataset source = load_dataset(shift_source);
      const Dataset target = load_dataset(shift_target);
      ShiftConfig cfg;
      cfg.supervised = shift_sup.build(source.clip);
      cfg.self_supervised = shift_self.build(source.clip);
      if (cfg.supervised.use_mask_channel != cfg.self_supervised.use_mask_channel) {
        throw std::invalid_argument("--sup-mask and --self-mask must agree (one architecture is shared)");
      }
      cfg.arch = shift_arch.build(common_length(source), cfg.self_supervised.use_mask_channel);
      cfg.blend = shift_blend.build();
      const ShiftReport rep = shift_experiment(source, target, cfg);
      rep.write_csv(shift_out);
      std::cout << "identity " << format_real(rep.supervised.identity_mean) << " dB, supervised "
                << format_real(rep.supervised.mean) << " dB, self-supervised " << format_real(rep.self_supervised.mean)
                << " dB\n";
    } else if (declip_cmd->parsed()) {
      dec_opts.blend = dec_blend.build();
      dec_opts.format = dec_float ? WavFormat::Float32 : WavFormat::Pcm16;
      const DeclipSummary s = declip_file(dec_in, dec_out, load_checkpoint(dec_ckpt), dec_opts);
      std::cerr << "declipped " << s.windows << " windows (" << s.saturated_samples << " saturated samples), "
                << s.output_samples << " of " << s.input_samples << " samples written\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
