#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "rahand/nn/layers.hpp"
#include "rahand/random.hpp"

namespace testing {

inline rahand::nn::Tensor RandomTensor(int c, int h, int w, rahand::Rng& rng, double scale = 1.0) {
  rahand::nn::Tensor t(c, h, w);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = scale * rahand::Normal(rng);
  return t;
}

inline double RelErr(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Worst relative error between analytic and central-difference gradients
// of sum(upstream * layer(x)) with respect to the input and every parameter.
inline double LayerGradError(rahand::nn::Layer& layer, const rahand::nn::Tensor& x, rahand::Rng& rng,
                             double h = 1e-5) {
  using rahand::nn::Tensor;
  rahand::nn::Trace trace;
  const Tensor y = layer.Forward(x, &trace);
  const Tensor g = RandomTensor(y.channels(), y.height, y.width, rng);
  auto objective = [&](const Tensor& in) { return (layer.Forward(in, nullptr).data.array() * g.data.array()).sum(); };

  std::vector<rahand::nn::NamedParam> params;
  layer.CollectParams("", params);
  for (auto& np : params) np.param->ZeroGrad();
  const Tensor dx = layer.Backward(trace, g);

  double worst = 0;
  Tensor probe = x;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double orig = probe.data.data()[i];
    probe.data.data()[i] = orig + h;
    const double up = objective(probe);
    probe.data.data()[i] = orig - h;
    const double down = objective(probe);
    probe.data.data()[i] = orig;
    worst = std::max(worst, RelErr(dx.data.data()[i], (up - down) / (2 * h)));
  }
  for (auto& np : params) {
    for (Eigen::Index i = 0; i < np.param->value.size(); ++i) {
      double& v = np.param->value.data()[i];
      const double orig = v;
      v = orig + h;
      const double up = objective(x);
      v = orig - h;
      const double down = objective(x);
      v = orig;
      worst = std::max(worst, RelErr(np.param->grad.data()[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rahand_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
