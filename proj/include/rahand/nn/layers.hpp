#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "rahand/nn/tensor.hpp"
#include "rahand/random.hpp"

namespace rahand::nn {

// What a forward pass leaves behind for its backward pass. Traces are owned
// by the caller so one layer object can serve several in-flight passes.
struct Trace {
  Tensor input;
  MatrixRM aux;
  std::vector<int> index;
  std::vector<Trace> children;
};

struct NamedParam {
  std::string name;
  Param* param;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  // `trace` may be null for inference-only passes.
  virtual Tensor Forward(const Tensor& x, Trace* trace) const = 0;
  // Adds parameter gradients into Param::grad and returns dL/dx.
  virtual Tensor Backward(const Trace& trace, const Tensor& grad_out) = 0;
  virtual void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
    (void)prefix;
    (void)out;
  }
  virtual std::unique_ptr<Layer> Clone() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng,
         double init_scale = 1.0);

  std::string_view kind() const override { return "conv2d"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Conv2d>(*this); }

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

 private:
  int in_channels_, out_channels_, kernel_, stride_, padding_;
  Param weight_;  // out x (in * k * k)
  Param bias_;    // out x 1
};

class Relu final : public Layer {
 public:
  std::string_view kind() const override { return "relu"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Relu>(*this); }
};

// tanh-free exact form x * Phi(x).
class Gelu final : public Layer {
 public:
  std::string_view kind() const override { return "gelu"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Gelu>(*this); }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  std::string_view kind() const override { return "maxpool2d"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  int kernel_, stride_, padding_;
};

// C x H x W -> C x 1 x 1.
class GlobalAvgPool final : public Layer {
 public:
  std::string_view kind() const override { return "gap"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features, Rng& rng, bool bias = true);

  std::string_view kind() const override { return "linear"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Linear>(*this); }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  bool has_bias_;
  Param weight_;  // out x in
  Param bias_;    // out x 1
};

// y = x / max(|x|, eps)
class L2Normalize final : public Layer {
 public:
  std::string_view kind() const override { return "l2norm"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<L2Normalize>(*this); }
};

// Bias-free linear map whose effective weight rows are the stored rows
// scaled to unit norm.
class NormedLinear final : public Layer {
 public:
  NormedLinear(int in_features, int out_features, Rng& rng);

  std::string_view kind() const override { return "normed_linear"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<NormedLinear>(*this); }

 private:
  Eigen::MatrixXd EffectiveWeight(Eigen::VectorXd* row_norms) const;
  Param weight_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  Sequential& Add(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }
  Sequential& Append(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  std::string_view kind() const override { return "sequential"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Sequential>(*this); }

  size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

  std::vector<NamedParam> Params(const std::string& prefix = "");
  void ZeroGrad();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// relu(conv2(relu(conv1(x))) + shortcut(x)); shortcut is a 1x1 strided
// projection when the shape changes.
class BasicBlock final : public Layer {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, Rng& rng, double residual_scale);
  BasicBlock(const BasicBlock& other);

  std::string_view kind() const override { return "basic_block"; }
  Tensor Forward(const Tensor& x, Trace* trace) const override;
  Tensor Backward(const Trace& trace, const Tensor& grad_out) override;
  void CollectParams(const std::string& prefix, std::vector<NamedParam>& out) override;
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<BasicBlock>(*this); }

 private:
  Conv2d conv1_;
  Conv2d conv2_;
  std::unique_ptr<Conv2d> downsample_;
};

}  // namespace rahand::nn
