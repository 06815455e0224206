#pragma once

#include "declip/autodiff.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

namespace declip::testing {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Central finite differences of a scalar function of `params` against the
// tape gradient. `build` must produce the scalar output inside `graph`.
inline double max_gradient_error(ParamStore& params, const std::function<Var(Graph&, ParamStore&)>& build,
                                 double h = 1e-6) {
  zero_grads(params);
  {
    Graph g;
    Var out = build(g, params);
    g.backward(out);
  }
  auto eval = [&] {
    Graph g;
    return build(g, params).value().values[0];
  };
  double worst = 0.0;
  for (auto& [name, p] : params) {
    const Eigen::VectorXd analytic = *p.grad;
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p.values[i];
      p.values[i] = orig + h;
      const double up = eval();
      p.values[i] = orig - h;
      const double down = eval();
      p.values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("declip_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace declip::testing
