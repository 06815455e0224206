// Mini-batch Adam training, checkpoints and the training log.

#pragma once

#include "declip/autodiff.hpp"
#include "declip/data.hpp"
#include "declip/losses.hpp"
#include "declip/models.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace declip {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Eigen::VectorXd> m;
  std::map<std::string, Eigen::VectorXd> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update from the gradients stored in `params`.
// Parameters without a gradient buffer are left untouched.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  LossConfig loss;
  ClipConfig clip;
  AdamConfig adam;
  Index batch_size = 32;
  int epochs = 100;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  bool use_mask_channel = false;
  int validate_every = 0;    // epochs; 0 disables validation SDR

  void validate() const;
  // key=value summary of everything that influences the result.
  std::string fingerprint() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;     // mean per item
  double primary = 0.0;  // supervised / nmc / mc term, mean per item
  double ei = 0.0;       // equivariance term, mean per item
  std::optional<double> val_sdr;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  void write_csv(const std::filesystem::path& path, const std::string& fingerprint) const;
};

struct Checkpoint {
  Arch arch;
  ParamStore params;
  std::optional<AdamState> optimizer;
  int epoch = 0;
  std::string rng_state;    // serialised trainer RNG, empty for fresh models
  std::string fingerprint;  // training configuration that produced it
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Loads and checks the stored architecture against `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Arch& expected);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& detail)
      : std::runtime_error(detail), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainOptions {
  // Ground-truth items scored each `validate_every` epochs (not used for training).
  const std::vector<Item>* validation = nullptr;
  // Destination for periodic / final checkpoints; empty disables writing.
  std::filesystem::path checkpoint_path;
  // Continue from a saved state instead of initialising from the seed.
  std::optional<Checkpoint> resume;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

// Trains on the Split::Train items of `dataset`. On a non-finite loss the last
// finite state is checkpointed (when a path is set) and TrainingDiverged thrown.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const Arch& arch, const TrainOptions& options = {});

}  // namespace declip
