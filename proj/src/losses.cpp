#include "declip/losses.hpp"

#include <stdexcept>

namespace declip {

ReconstructionFn network_fn(Graph& graph, ParamStore& params, const Arch& arch, const ClipConfig& cfg,
                            bool use_mask) {
  return [&graph, &params, arch, cfg, use_mask](Var measurement) {
    Var input = measurement;
    if (use_mask) {
      const Tensor& m = measurement.value();
      Tensor unsaturated(m.shape, (m.values.array().abs() < cfg.saturation_level()).cast<double>().matrix());
      input = concat_channels({measurement, graph.constant(std::move(unsaturated))});
    }
    return forward(graph, params, arch, input);
  };
}

void GroupSampler::validate() const {
  if (!(g_min > 0.0 && g_min <= g_max)) throw std::invalid_argument("group sampler needs 0 < g_min <= g_max");
  if (samples_per_item < 1) throw std::invalid_argument("samples_per_item must be >= 1");
}

double GroupSampler::draw(Rng& rng) const {
  if (g_min == g_max) return g_min;
  return std::uniform_real_distribution<double>(g_min, g_max)(rng);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Supervised: return "supervised";
    case LossKind::Nmc: return "nmc";
    case LossKind::Mc: return "mc";
    case LossKind::McEi: return "mc+ei";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "supervised") return LossKind::Supervised;
  if (s == "nmc") return LossKind::Nmc;
  if (s == "mc") return LossKind::Mc;
  if (s == "mc+ei" || s == "mcei" || s == "ei") return LossKind::McEi;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected supervised, nmc, mc, mc+ei)");
}

void LossConfig::validate() const {
  if (!(ei_weight >= 0.0)) throw std::invalid_argument("ei_weight must be non-negative");
  if (kind == LossKind::McEi) sampler.validate();
}

Var supervised_mse(const ReconstructionFn& f, Var y, const Tensor& x) {
  Var target = y.graph().constant(x);
  return sum(square(f(y) - target));
}

Var nmc_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg) {
  return sum(square(y - clip(f(y), cfg.mu)));
}

Var mc_term(Var u, Var y, const ClipConfig& cfg) {
  if (u.shape() != y.shape()) {
    throw ShapeError("mc_term: reconstruction " + shape_str(u.shape()) + " vs measurement " + shape_str(y.shape()));
  }
  // Branch selection is a constant of the forward values; the active branch
  // carries v - u, the saturated-and-consistent branch carries 0.
  const Eigen::ArrayXd v = y.value().values.array();
  const Eigen::ArrayXd uu = u.value().values.array();
  const Eigen::ArrayXd active =
      ((v.abs() >= cfg.saturation_level()) && (v.sign() * uu >= cfg.mu)).select(Eigen::ArrayXd::Zero(v.size()), 1.0);
  Var gate = y.graph().constant(Tensor(y.shape(), active.matrix()));
  return sum(square((y - u) * gate));
}

Var mc_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg) { return mc_term(f(y), y, cfg); }

std::vector<double> draw_gains(const GroupSampler& sampler, Index batch, Rng& rng) {
  std::vector<double> gains(static_cast<std::size_t>(sampler.samples_per_item * batch));
  for (double& g : gains) g = sampler.draw(rng);
  return gains;
}

Var ei_term(const ReconstructionFn& f, Var x1, const ClipConfig& cfg, const std::vector<double>& gains) {
  const Shape s = x1.shape();
  const Index batch = s.at(0);
  const Index per_item = shape_size(s) / batch;
  if (gains.empty() || gains.size() % static_cast<std::size_t>(batch) != 0) {
    throw std::invalid_argument("ei_term: need a whole number of gains per batch item");
  }
  const Index draws = static_cast<Index>(gains.size()) / batch;
  Graph& graph = x1.graph();
  Var total;
  for (Index r = 0; r < draws; ++r) {
    Tensor scale = Tensor::zeros(s);
    for (Index b = 0; b < batch; ++b) {
      scale.values.segment(b * per_item, per_item).setConstant(gains[static_cast<std::size_t>(r * batch + b)]);
    }
    Var gx = x1 * graph.constant(std::move(scale));
    Var x2 = f(clip(gx, cfg.mu));
    Var term = sum(square(gx - x2));
    total = r == 0 ? term : total + term;
  }
  return draws == 1 ? total : scalar_mul(1.0 / static_cast<double>(draws), total);
}

Var ei_loss(const ReconstructionFn& f, Var y, const ClipConfig& cfg, const GroupSampler& sampler, Rng& rng) {
  return ei_term(f, f(y), cfg, draw_gains(sampler, y.shape().at(0), rng));
}

LossValue total_loss(const ReconstructionFn& f, Var y, const Tensor* x, const ClipConfig& cfg,
                     const LossConfig& loss, Rng& rng) {
  LossValue out;
  switch (loss.kind) {
    case LossKind::Supervised:
      if (!x) throw std::invalid_argument("supervised loss needs ground-truth signals");
      out.total = supervised_mse(f, y, *x);
      break;
    case LossKind::Nmc:
      out.total = nmc_loss(f, y, cfg);
      break;
    case LossKind::Mc:
      out.total = mc_loss(f, y, cfg);
      break;
    case LossKind::McEi: {
      Var x1 = f(y);
      Var mc = mc_term(x1, y, cfg);
      out.primary = mc.value().values[0];
      out.total = mc;
      if (loss.ei_weight > 0.0) {
        Var ei = ei_term(f, x1, cfg, draw_gains(loss.sampler, y.shape().at(0), rng));
        out.ei = ei.value().values[0];
        out.total = mc + scalar_mul(loss.ei_weight, ei);
      }
      break;
    }
  }
  if (loss.kind != LossKind::McEi) out.primary = out.total.value().values[0];
  return out;
}

}  // namespace declip
