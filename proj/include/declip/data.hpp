// Datasets of clipped measurements: synthetic random-subspace signals, audio
// windows from WAV files, and the on-disk dataset container.

#pragma once

#include "declip/clip.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace declip {

using Rng = std::mt19937_64;

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct Item {
  std::optional<Signal> x;  // ground truth, absent in measurement-only data
  Signal y;                 // clipped measurement
  std::string meta;         // provenance
  Split split = Split::Train;

  friend bool operator==(const Item&, const Item&) = default;
};

struct Dataset {
  ClipConfig clip;
  std::string description;
  std::vector<Item> items;

  std::vector<Item> subset(Split split) const;
  std::size_t count(Split split) const;
  // Drops ground truth from every item of `split`.
  void strip_ground_truth(Split split);

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.clip.mu == b.clip.mu && a.clip.eps_sat == b.clip.eps_sat && a.description == b.description &&
           a.items == b.items;
  }
};

// ---- synthetic subspace data -------------------------------------------------

struct SyntheticSpec {
  Eigen::Index ambient_dim = 100;
  Eigen::Index subspace_dim = 10;
  Eigen::Index num_signals = 1000;
  double clip_proportion = 0.3;
  double mu = 1.0;
  // Trailing fraction of the signals reserved for testing.
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
};

// n x d basis with iid N(0,1) entries. A numerically rank-deficient draw is
// redrawn once before giving up.
Eigen::MatrixXd gen_subspace(Eigen::Index d, Eigen::Index n, Rng& rng);
// basis * c with c ~ N(0, I_d)
Signal sample_signal(const Eigen::MatrixXd& basis, Rng& rng);

struct Rescaled {
  double q = 0.0;
  Signal x;                   // q * input
  Eigen::Index target_count = 0;  // round(v * n)
  double achieved_proportion = 0.0;
};

// Scales x so that exactly round(v * n) samples reach |q x_j| >= mu when the
// magnitudes of x are distinct; with ties the achieved proportion is reported.
Rescaled rescale_for_proportion(const Signal& x, double v, double mu);

Dataset make_synthetic(const SyntheticSpec& spec);

// ---- audio -------------------------------------------------------------------

struct AudioClip {
  int sample_rate = 0;
  Signal samples;  // mono, in [-1, 1]
};

enum class WavFormat { Pcm16, Float32 };

// PCM16 or float32 WAV, mono or stereo (channels averaged).
AudioClip load_audio(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Signal& samples, int sample_rate,
               WavFormat format = WavFormat::Pcm16);

struct AudioSpec {
  int sample_rate = 22050;
  double window_seconds = 1.0;
  double mu = 0.1;
  bool normalize = true;  // peak-normalise each file to max |a| = 1 before clipping

  Eigen::Index window_length() const;
  void validate() const;
};

// Brings a clip to spec.sample_rate by integer block-average decimation and
// applies the optional peak normalisation.
Signal prepare_audio(const AudioClip& clip, const AudioSpec& spec);

struct Window {
  Signal x;
  Signal y;
};

// Non-overlapping windows, trailing partial window dropped, y = clip(x, mu).
std::vector<Window> window_and_clip(const Signal& signal, const AudioSpec& spec);

// Keeps items whose measurement has at least one saturated sample.
std::vector<Item> filter_saturated(std::vector<Item> items, const ClipConfig& cfg);

// Windows every file (files are split, never their windows), clips, filters.
Dataset make_audio_dataset(const std::vector<std::filesystem::path>& train_files,
                           const std::vector<std::filesystem::path>& test_files, const AudioSpec& spec);

// ---- persistence -------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
// One row per item: split,index,kind(x|y),v0,v1,...
void export_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace declip
