#include "rahand/nn/layers.hpp"

#include <cmath>
#include <limits>

namespace rahand::nn {
namespace {

Eigen::MatrixXd HeNormal(int rows, int cols, int fan_in, Rng& rng, double scale) {
  const double std = scale * std::sqrt(2.0 / fan_in);
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = std * Normal(rng);
  }
  return m;
}

Eigen::MatrixXd UniformInit(int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = Uniform(rng, -bound, bound);
  }
  return m;
}

Param MakeParam(Eigen::MatrixXd value) {
  Param p;
  p.value = std::move(value);
  p.ZeroGrad();
  return p;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng,
               double init_scale)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {
  const int fan_in = in_channels * kernel * kernel;
  weight_ = MakeParam(HeNormal(out_channels, fan_in, fan_in, rng, init_scale));
  bias_ = MakeParam(Eigen::MatrixXd::Zero(out_channels, 1));
}

Tensor Conv2d::Forward(const Tensor& x, Trace* trace) const {
  const int h = x.height, w = x.width;
  const int oh = out_size(h), ow = out_size(w);
  const int k = kernel_;
  MatrixRM cols(in_channels_ * k * k, oh * ow);
  for (int c = 0; c < in_channels_; ++c) {
    const double* plane = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - padding_ + ky;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - padding_ + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
  Tensor out(out_channels_, oh, ow);
  out.data.noalias() = weight_.value * cols;
  out.data.colwise() += bias_.value.col(0);
  if (trace) {
    trace->input = Tensor(MatrixRM(0, 0), h, w);
    trace->aux = std::move(cols);
  }
  return out;
}

Tensor Conv2d::Backward(const Trace& trace, const Tensor& grad_out) {
  const int h = trace.input.height, w = trace.input.width;
  const int oh = grad_out.height, ow = grad_out.width;
  const int k = kernel_;
  weight_.grad.noalias() += grad_out.data * trace.aux.transpose();
  bias_.grad.col(0) += grad_out.data.rowwise().sum();
  const MatrixRM dcols = weight_.value.transpose() * grad_out.data;
  Tensor dx(in_channels_, h, w);
  for (int c = 0; c < in_channels_; ++c) {
    double* plane = dx.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = dcols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + iy * w;
          const double* src = row + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- activations

Tensor Relu::Forward(const Tensor& x, Trace* trace) const {
  Tensor y(x.data.cwiseMax(0.0), x.height, x.width);
  if (trace) trace->input = x;
  return y;
}

Tensor Relu::Backward(const Trace& trace, const Tensor& grad_out) {
  Tensor dx = grad_out;
  dx.data = (trace.input.data.array() > 0.0).select(grad_out.data.array(), 0.0).matrix();
  return dx;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

Tensor Gelu::Forward(const Tensor& x, Trace* trace) const {
  Tensor y = x;
  y.data = x.data.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  if (trace) trace->input = x;
  return y;
}

Tensor Gelu::Backward(const Trace& trace, const Tensor& grad_out) {
  Tensor dx = grad_out;
  dx.data = grad_out.data.cwiseProduct(trace.input.data.unaryExpr([](double v) {
    return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }));
  return dx;
}

// ---------------------------------------------------------------- pooling

Tensor MaxPool2d::Forward(const Tensor& x, Trace* trace) const {
  const int h = x.height, w = x.width;
  const int oh = (h + 2 * padding_ - kernel_) / stride_ + 1;
  const int ow = (w + 2 * padding_ - kernel_) / stride_ + 1;
  Tensor y(x.channels(), oh, ow);
  std::vector<int> index(static_cast<size_t>(x.channels()) * oh * ow);
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_i = -1;
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = x.data(c, iy * w + ix);
            if (v > best) {
              best = v;
              best_i = iy * w + ix;
            }
          }
        }
        y.data(c, oy * ow + ox) = best;
        index[(static_cast<size_t>(c) * oh + oy) * ow + ox] = best_i;
      }
    }
  }
  if (trace) {
    trace->input = Tensor(MatrixRM(x.channels(), 0), h, w);
    trace->index = std::move(index);
  }
  return y;
}

Tensor MaxPool2d::Backward(const Trace& trace, const Tensor& grad_out) {
  Tensor dx(static_cast<int>(trace.input.data.rows()), trace.input.height, trace.input.width);
  const int p = grad_out.pixels();
  for (int c = 0; c < dx.channels(); ++c) {
    for (int i = 0; i < p; ++i) dx.data(c, trace.index[static_cast<size_t>(c) * p + i]) += grad_out.data(c, i);
  }
  return dx;
}

Tensor GlobalAvgPool::Forward(const Tensor& x, Trace* trace) const {
  Tensor y(MatrixRM(x.data.rowwise().mean()), 1, 1);
  if (trace) trace->input = Tensor(MatrixRM(x.channels(), 0), x.height, x.width);
  return y;
}

Tensor GlobalAvgPool::Backward(const Trace& trace, const Tensor& grad_out) {
  const int h = trace.input.height, w = trace.input.width;
  Tensor dx(static_cast<int>(trace.input.data.rows()), h, w);
  const double inv = 1.0 / (h * w);
  for (int c = 0; c < dx.channels(); ++c) dx.data.row(c).setConstant(grad_out.data(c, 0) * inv);
  return dx;
}

// ---------------------------------------------------------------- dense

Linear::Linear(int in_features, int out_features, Rng& rng, bool bias) : has_bias_(bias) {
  weight_ = MakeParam(UniformInit(out_features, in_features, in_features, rng));
  bias_ = MakeParam(bias ? UniformInit(out_features, 1, in_features, rng)
                         : Eigen::MatrixXd::Zero(out_features, 1));
}

Tensor Linear::Forward(const Tensor& x, Trace* trace) const {
  Tensor y(static_cast<int>(weight_.value.rows()), x.height, x.width);
  y.data.noalias() = weight_.value * x.data;
  if (has_bias_) y.data.colwise() += bias_.value.col(0);
  if (trace) trace->input = x;
  return y;
}

Tensor Linear::Backward(const Trace& trace, const Tensor& grad_out) {
  weight_.grad.noalias() += grad_out.data * trace.input.data.transpose();
  if (has_bias_) bias_.grad.col(0) += grad_out.data.rowwise().sum();
  Tensor dx(static_cast<int>(weight_.value.cols()), grad_out.height, grad_out.width);
  dx.data.noalias() = weight_.value.transpose() * grad_out.data;
  return dx;
}

void Linear::CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

namespace {
constexpr double kNormEps = 1e-12;
}

Tensor L2Normalize::Forward(const Tensor& x, Trace* trace) const {
  const double norm = std::max(x.data.norm(), kNormEps);
  Tensor y(MatrixRM(x.data / norm), x.height, x.width);
  if (trace) trace->input = x;
  return y;
}

Tensor L2Normalize::Backward(const Trace& trace, const Tensor& grad_out) {
  const double raw = trace.input.data.norm();
  Tensor dx = grad_out;
  if (raw < kNormEps) {
    dx.data = grad_out.data / kNormEps;
    return dx;
  }
  const MatrixRM y = trace.input.data / raw;
  const double proj = (y.array() * grad_out.data.array()).sum();
  dx.data = (grad_out.data - proj * y) / raw;
  return dx;
}

NormedLinear::NormedLinear(int in_features, int out_features, Rng& rng) {
  weight_ = MakeParam(UniformInit(out_features, in_features, in_features, rng));
}

Eigen::MatrixXd NormedLinear::EffectiveWeight(Eigen::VectorXd* row_norms) const {
  Eigen::VectorXd norms = weight_.value.rowwise().norm().cwiseMax(kNormEps);
  Eigen::MatrixXd w = norms.cwiseInverse().asDiagonal() * weight_.value;
  if (row_norms) *row_norms = std::move(norms);
  return w;
}

Tensor NormedLinear::Forward(const Tensor& x, Trace* trace) const {
  const Eigen::MatrixXd w = EffectiveWeight(nullptr);
  Tensor y(static_cast<int>(w.rows()), x.height, x.width);
  y.data.noalias() = w * x.data;
  if (trace) trace->input = x;
  return y;
}

Tensor NormedLinear::Backward(const Trace& trace, const Tensor& grad_out) {
  Eigen::VectorXd norms;
  const Eigen::MatrixXd w = EffectiveWeight(&norms);
  const Eigen::MatrixXd dw = grad_out.data * trace.input.data.transpose();
  // d(v / |v|) = (I - w w^T) / |v|, applied row by row.
  const Eigen::VectorXd along = (dw.array() * w.array()).rowwise().sum();
  weight_.grad += norms.cwiseInverse().asDiagonal() * (dw - along.asDiagonal() * w);
  Tensor dx(static_cast<int>(w.cols()), grad_out.height, grad_out.width);
  dx.data.noalias() = w.transpose() * grad_out.data;
  return dx;
}

void NormedLinear::CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "weight", &weight_});
}

// ---------------------------------------------------------------- containers

Sequential::Sequential(const Sequential& other) {
  for (const auto& l : other.layers_) layers_.push_back(l->Clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->Clone());
  }
  return *this;
}

Tensor Sequential::Forward(const Tensor& x, Trace* trace) const {
  if (layers_.empty()) return x;
  if (trace) trace->children.resize(layers_.size());
  Tensor h = layers_[0]->Forward(x, trace ? &trace->children[0] : nullptr);
  for (size_t i = 1; i < layers_.size(); ++i) {
    h = layers_[i]->Forward(h, trace ? &trace->children[i] : nullptr);
  }
  return h;
}

Tensor Sequential::Backward(const Trace& trace, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->Backward(trace.children[i], g);
  return g;
}

void Sequential::CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->CollectParams(prefix + std::to_string(i) + ".", out);
  }
}

std::vector<NamedParam> Sequential::Params(const std::string& prefix) {
  std::vector<NamedParam> out;
  CollectParams(prefix, out);
  return out;
}

void Sequential::ZeroGrad() {
  for (auto& p : Params()) p.param->ZeroGrad();
}

BasicBlock::BasicBlock(int in_channels, int out_channels, int stride, Rng& rng, double residual_scale)
    : conv1_(in_channels, out_channels, 3, stride, 1, rng),
      conv2_(out_channels, out_channels, 3, 1, 1, rng, residual_scale) {
  if (stride != 1 || in_channels != out_channels) {
    downsample_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0, rng);
  }
}

BasicBlock::BasicBlock(const BasicBlock& other)
    : conv1_(other.conv1_),
      conv2_(other.conv2_),
      downsample_(other.downsample_ ? std::make_unique<Conv2d>(*other.downsample_) : nullptr) {}

Tensor BasicBlock::Forward(const Tensor& x, Trace* trace) const {
  if (trace) trace->children.resize(4);
  Tensor a = conv1_.Forward(x, trace ? &trace->children[0] : nullptr);
  if (trace) trace->children[1].input = a;
  a.data = a.data.cwiseMax(0.0);
  Tensor sum = conv2_.Forward(a, trace ? &trace->children[2] : nullptr);
  if (downsample_) {
    sum.data += downsample_->Forward(x, trace ? &trace->children[3] : nullptr).data;
  } else {
    sum.data += x.data;
  }
  if (trace) trace->input = sum;
  sum.data = sum.data.cwiseMax(0.0);
  return sum;
}

Tensor BasicBlock::Backward(const Trace& trace, const Tensor& grad_out) {
  Tensor g = grad_out;
  g.data = (trace.input.data.array() > 0.0).select(grad_out.data.array(), 0.0).matrix();
  Tensor ga = conv2_.Backward(trace.children[2], g);
  ga.data = (trace.children[1].input.data.array() > 0.0).select(ga.data.array(), 0.0).matrix();
  Tensor dx = conv1_.Backward(trace.children[0], ga);
  if (downsample_) {
    dx.data += downsample_->Backward(trace.children[3], g).data;
  } else {
    dx.data += g.data;
  }
  return dx;
}

void BasicBlock::CollectParams(const std::string& prefix, std::vector<NamedParam>& out) {
  conv1_.CollectParams(prefix + "conv1.", out);
  conv2_.CollectParams(prefix + "conv2.", out);
  if (downsample_) downsample_->CollectParams(prefix + "downsample.", out);
}

}  // namespace rahand::nn
