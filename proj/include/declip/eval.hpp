// Signal Distortion Ratio and test-set evaluation.

#pragma once

#include "declip/clip.hpp"
#include "declip/data.hpp"
#include "declip/models.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace declip {

// 20 log10(||x|| / ||x - xhat||) in dB; +inf when xhat == x exactly.
template <typename DerivedX, typename DerivedY>
double sdr(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& xhat) {
  if (x.size() != xhat.size()) throw std::invalid_argument("sdr: length mismatch");
  const double signal = x.norm();
  if (!(signal > 0.0)) throw std::invalid_argument("sdr: reference signal is zero");
  const double error = (x - xhat).norm();
  if (error == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(signal / error);
}

struct SdrStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1), 0 for a single item
};

SdrStats summarize(const std::vector<double>& values);

struct SdrReport {
  std::vector<std::string> item_ids;
  std::vector<double> per_item_sdr;
  std::vector<double> identity_sdr;  // x_hat = y
  double mean = 0.0;
  double std = 0.0;
  double identity_mean = 0.0;
  double identity_std = 0.0;
  std::string fingerprint;
};

// Blended network reconstruction of one batch of equal-length measurements.
std::vector<Signal> reconstruct(const ParamStore& params, const Arch& arch, const std::vector<Signal>& ys,
                                const ClipConfig& cfg, const BlendConfig& bc);

// Scores every item (all must carry ground truth). The mask channel is used
// when the architecture takes two input channels.
SdrReport evaluate(const ParamStore& params, const Arch& arch, const std::vector<Item>& items, const ClipConfig& cfg,
                   const BlendConfig& bc, Index batch_size = 16);

// Rows: item,sdr_db,identity_sdr_db, then "mean" and "std" rows. +inf is written as "inf".
void write_report_csv(const SdrReport& report, const std::filesystem::path& path);

}  // namespace declip
