// Bias-free ReLU reconstruction networks.
//
// All models map a (batch, channels, length) input to a (batch, 1, length)
// reconstruction. Channel 0 is always the measured signal; an optional
// channel 1 carries the unsaturated-sample mask (1 = unsaturated). Without
// biases, every model is positively homogeneous: f(a * in) = a * f(in), a > 0.

#pragma once

#include "declip/autodiff.hpp"
#include "declip/clip.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace declip {

struct MlpArch {
  Index input_dim = 100;   // signal length
  Index in_channels = 1;   // 2 with the mask channel
  std::vector<Index> hidden_dims{256, 256, 256};
  bool skip = true;        // output = signal channel + network(input)

  friend bool operator==(const MlpArch&, const MlpArch&) = default;
};

// Encoder: `depth` levels of two same-padded convs then a 2x max-pool, channel
// count doubling per level. Decoder: nearest 2x upsample, conv, concat with the
// matching encoder level, two convs. Inputs are zero-extended to a multiple of
// 2^depth and the output cropped back, so any length is accepted.
struct Unet1dArch {
  Index in_channels = 1;
  int depth = 4;
  Index base_channels = 32;
  Index kernel_size = 5;   // odd
  bool skip = true;

  friend bool operator==(const Unet1dArch&, const Unet1dArch&) = default;
};

using Arch = std::variant<MlpArch, Unet1dArch>;

Index in_channels(const Arch& arch);
void validate(const Arch& arch);

// One-line text form, e.g. "mlp input_dim=100 in_channels=1 hidden=256,256,256 skip=1".
std::string describe(const Arch& arch);
Arch parse_arch(const std::string& text);

// Zero-mean uniform He initialisation: U(-a, a), a = sqrt(6 / fan_in).
ParamStore init_params(const Arch& arch, std::uint64_t seed);

// Differentiable forward pass; parameters are bound into `graph` and receive
// gradients on backward.
Var forward(Graph& graph, ParamStore& params, const Arch& arch, Var input);
// Inference-only forward pass.
Tensor predict(const ParamStore& params, const Arch& arch, const Tensor& input);

// (1, C, n) network input for one measurement.
Tensor assemble_input(const Signal& y, const Mask& saturated, bool use_mask);
// (B, C, n) network input for a batch of measurements sharing one length.
Tensor assemble_batch(std::span<const Signal> ys, const ClipConfig& cfg, bool use_mask);

}  // namespace declip
