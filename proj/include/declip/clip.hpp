// Hard-clipping forward operator, saturation masks, the measurement-consistency
// residual and test-time blending.
//
// Everything here is a free function over Eigen dense expressions. Functions
// returning `auto` return lazy expressions that reference their arguments.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace declip {

using Signal = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct ClipConfig {
  double mu = 1.0;
  // Relative tolerance: |y| >= mu * (1 - eps_sat) counts as saturated.
  double eps_sat = 1e-9;

  double saturation_level() const { return mu * (1.0 - eps_sat); }

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw std::invalid_argument("clip level mu must be positive");
    if (!(eps_sat >= 0.0) || eps_sat >= 1.0) throw std::invalid_argument("eps_sat must lie in [0, 1)");
  }
};

enum class BlendMode {
  // b = max(0, |y| - tau*mu) / (1 - tau*mu)
  PaperExact,
  // b = max(0, |y| - tau*mu) / (mu * (1 - tau)); identical to PaperExact at mu = 1
  LevelNormalized,
};

struct BlendConfig {
  double tau = 0.95;
  BlendMode mode = BlendMode::LevelNormalized;

  void validate(const ClipConfig& cfg) const {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("blend tau must lie in (0, 1)");
    if (mode == BlendMode::PaperExact && !(tau * cfg.mu < 1.0)) {
      throw std::invalid_argument("paper-exact blending needs tau * mu < 1");
    }
  }
};

std::string to_string(BlendMode mode);
BlendMode blend_mode_from_string(const std::string& s);

namespace detail {

template <typename Scalar>
Scalar clip_scalar(Scalar c, Scalar mu) {
  if (std::abs(c) >= mu) return c < Scalar(0) ? -mu : mu;
  return c;
}

template <typename Scalar>
Scalar sign_of(Scalar c) {
  return Scalar((Scalar(0) < c) - (c < Scalar(0)));
}

}  // namespace detail

// sign(x) * mu where |x| >= mu, x elsewhere.
template <typename Derived>
auto clip(const Eigen::DenseBase<Derived>& x, typename Derived::Scalar mu) {
  using Scalar = typename Derived::Scalar;
  return x.derived().unaryExpr([mu](Scalar c) { return detail::clip_scalar(c, mu); });
}

template <typename Derived>
Mask saturation_mask(const Eigen::DenseBase<Derived>& y, const ClipConfig& cfg) {
  return y.derived().array().abs() >= cfg.saturation_level();
}

// h(u, v): v - u, except 0 where v is saturated and sign(v) * u >= mu.
template <typename DerivedU, typename DerivedV>
auto mc_residual(const Eigen::DenseBase<DerivedU>& u, const Eigen::DenseBase<DerivedV>& v,
                 const ClipConfig& cfg) {
  using Scalar = typename DerivedV::Scalar;
  const Scalar level = cfg.saturation_level();
  const Scalar mu = cfg.mu;
  return v.derived().binaryExpr(u.derived(), [level, mu](Scalar vj, Scalar uj) {
    const bool consistent = std::abs(vj) >= level && detail::sign_of(vj) * uj >= mu;
    return consistent ? Scalar(0) : vj - uj;
  });
}

// Per-sample blending weight b in [0, 1].
template <typename Derived>
auto blend_weights(const Eigen::DenseBase<Derived>& y, const ClipConfig& cfg, const BlendConfig& bc) {
  using Scalar = typename Derived::Scalar;
  const Scalar knee = bc.tau * cfg.mu;
  const Scalar denom = bc.mode == BlendMode::PaperExact ? Scalar(1) - knee : cfg.mu * (Scalar(1) - bc.tau);
  return y.derived().unaryExpr([knee, denom](Scalar yj) {
    return std::clamp(std::max(Scalar(0), std::abs(yj) - knee) / denom, Scalar(0), Scalar(1));
  });
}

// (1 - b) * y + b * net, with b from blend_weights(). Samples with b == 0 pass y through exactly.
template <typename DerivedY, typename DerivedN>
auto blend(const Eigen::DenseBase<DerivedY>& y, const Eigen::DenseBase<DerivedN>& net,
           const ClipConfig& cfg, const BlendConfig& bc) {
  using Scalar = typename DerivedY::Scalar;
  const Scalar knee = bc.tau * cfg.mu;
  const Scalar denom = bc.mode == BlendMode::PaperExact ? Scalar(1) - knee : cfg.mu * (Scalar(1) - bc.tau);
  return y.derived().binaryExpr(net.derived(), [knee, denom](Scalar yj, Scalar nj) {
    const Scalar b = std::clamp(std::max(Scalar(0), std::abs(yj) - knee) / denom, Scalar(0), Scalar(1));
    if (b == Scalar(0)) return yj;
    if (b == Scalar(1)) return nj;
    return (Scalar(1) - b) * yj + b * nj;
  });
}

template <typename Derived>
double clip_proportion(const Eigen::DenseBase<Derived>& y, const ClipConfig& cfg) {
  if (y.size() == 0) return 0.0;
  return static_cast<double>(saturation_mask(y, cfg).count()) / static_cast<double>(y.size());
}

}  // namespace declip
