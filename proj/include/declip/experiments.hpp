// Experiment drivers: synthetic sweeps, distribution-shift study, file declipping.

#pragma once

#include "declip/data.hpp"
#include "declip/eval.hpp"
#include "declip/train.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace declip {

struct SweepCell {
  Index d = 0;
  double v = 0.0;
  double g_max = 0.0;
  double mean_sdr = 0.0;
  double std_sdr = 0.0;
  double identity_sdr = 0.0;
  bool ok = true;
  std::string status;  // "ok" or the failure reason
  std::string fingerprint;
};

struct SweepResult {
  std::string axis;  // "d,v" or "g_max"
  std::vector<SweepCell> cells;

  const SweepCell* find(Index d, double v, double g_max) const;
  // Columns: d,v,g_max,mean_sdr_db,std_sdr_db,identity_sdr_db,status
  void write_csv(const std::filesystem::path& path, const std::string& fingerprint) const;
};

using CellProgress = std::function<void(const SweepCell&)>;

struct SubspaceSweepConfig {
  std::vector<Index> dims{5, 10, 20};
  std::vector<double> proportions{0.1, 0.3, 0.5};
  SyntheticSpec data;   // subspace_dim / clip_proportion overridden per cell
  TrainConfig train;    // loss normally mc+ei with U[0.5, 1.5]
  MlpArch arch;         // input_dim taken from data.ambient_dim
  BlendConfig blend;
  std::filesystem::path checkpoint_dir;  // per-cell checkpoints when set
};

// One self-supervised model per (d, v) cell on freshly generated data.
// Per-cell seeds are derived from (seed, d, v), so each cell is reproducible alone.
SweepResult sweep_subspace(const SubspaceSweepConfig& cfg, const CellProgress& progress = {});

struct GmaxSweepConfig {
  std::vector<double> g_max_values{1.0, 1.25, 1.5, 2.0, 3.0, 5.0};
  SyntheticSpec data;  // defaults to d = 10, v = 0.3 in the callers
  TrainConfig train;   // sampler.g_max overridden per cell; g_min kept
  MlpArch arch;
  BlendConfig blend;
  std::filesystem::path checkpoint_dir;
};

// One run per g_max on a shared dataset and initialisation. Diverged runs are
// recorded as failed cells.
SweepResult sweep_gmax(const GmaxSweepConfig& cfg, const CellProgress& progress = {});

struct ShiftConfig {
  TrainConfig supervised;       // loss kind forced to supervised
  TrainConfig self_supervised;  // loss kind normally mc+ei
  Arch arch;
  BlendConfig blend;
};

struct ShiftReport {
  SdrReport supervised;
  SdrReport self_supervised;
  std::string fingerprint;
  void write_csv(const std::filesystem::path& path) const;
};

// Supervised model: trained on the ground-truth train split of `source`.
// Self-supervised model: trained on every measurement of `source` and `target`
// (target test measurements included, no ground truth used). Both are scored
// on the test split of `target`.
ShiftReport shift_experiment(const Dataset& source, const Dataset& target, const ShiftConfig& cfg);

struct DeclipOptions {
  ClipConfig clip;
  BlendConfig blend;
  Index window = 0;  // samples per window; 0 = architecture default (MLP input_dim, else 1 s)
  WavFormat format = WavFormat::Pcm16;
};

struct DeclipSummary {
  Index input_samples = 0;
  Index output_samples = 0;
  Index windows = 0;
  Index saturated_samples = 0;
};

// Reconstructs a clipped recording window by window; samples below tau*mu pass through.
DeclipSummary declip_file(const std::filesystem::path& input, const std::filesystem::path& output,
                          const Checkpoint& model, const DeclipOptions& options);

}  // namespace declip
