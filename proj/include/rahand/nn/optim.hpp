#pragma once

#include <vector>

#include "rahand/nn/tensor.hpp"

namespace rahand::nn {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled weight decay (AdamW); 0 gives plain Adam.
  double weight_decay = 0.0;
};

// Adam / AdamW over a fixed parameter set. Parameters outside the set are
// never touched, which is how frozen groups are kept out of updates.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamOptions options);

  void Step();
  void ZeroGrad();
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  const std::vector<Param*>& params() const { return params_; }
  long steps() const { return step_; }

 private:
  std::vector<Param*> params_;
  AdamOptions options_;
  std::vector<Eigen::MatrixXd> m_, v_;
  long step_ = 0;
};

}  // namespace rahand::nn
