// Training objectives. Every loss sums over the batch; measurements are
// (B, 1, n) graph constants.

#pragma once

#include "declip/autodiff.hpp"
#include "declip/clip.hpp"
#include "declip/models.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace declip {

using Rng = std::mt19937_64;

// Maps a (B, 1, n) measurement to a (B, 1, n) reconstruction inside a graph.
using ReconstructionFn = std::function<Var(Var measurement)>;

// Wraps a network as a ReconstructionFn. With use_mask, the unsaturated mask of
// whatever measurement is fed in is appended as a constant second channel.
ReconstructionFn network_fn(Graph& graph, ParamStore& params, const Arch& arch, const ClipConfig& cfg,
                            bool use_mask);

// Uniform distribution over [g_min, g_max] on the multiplicative group.
struct GroupSampler {
  double g_min = 0.5;
  double g_max = 1.5;
  int samples_per_item = 1;

  void validate() const;
  double draw(Rng& rng) const;
};

enum class LossKind { Supervised, Nmc, Mc, McEi };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::McEi;
  double ei_weight = 1.0;
  GroupSampler sampler;

  void validate() const;
};

// sum ||f(y) - x||^2
Var supervised_mse(const ReconstructionFn& f, Var y, const Tensor& x);
// sum ||y - clip(f(y))||^2, with the clip's exact a.e. derivative.
Var nmc_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg);

// sum ||h(u, y)||^2 for a given reconstruction u.
Var mc_term(Var u, Var y, const ClipConfig& cfg);
Var mc_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg);

// sum_i mean_r ||g_ir x1_i - f(clip(g_ir x1_i))||^2 with x1 = f(y).
// `gains` holds samples_per_item draws per item, draw-major: gains[r * B + i].
Var ei_term(const ReconstructionFn& f, Var x1, const ClipConfig& cfg, const std::vector<double>& gains);
std::vector<double> draw_gains(const GroupSampler& sampler, Index batch, Rng& rng);
Var ei_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg, const GroupSampler& sampler, Rng& rng);

struct LossValue {
  Var total;
  double primary = 0.0;  // supervised / nmc / mc term
  double ei = 0.0;       // unweighted equivariance term (mc+ei only)
};

// Evaluates the configured objective. `x` is required for supervised losses
// and ignored otherwise. g draws consume `rng`.
LossValue total_loss(const ReconstructionFn& f, Var y, const Tensor* x, const ClipConfig& cfg,
                     const LossConfig& loss, Rng& rng);

}  // namespace declip
