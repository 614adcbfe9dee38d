#pragma once

#include <Eigen/Core>

namespace rahand::nn {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A C x H x W activation stored as a row-major C x (H*W) matrix, so each
// channel plane is contiguous; spatial index is y * width + x. Vectors are
// tensors with height = width = 1.
struct Tensor {
  int height = 1;
  int width = 1;
  MatrixRM data;

  Tensor() = default;
  Tensor(int channels, int h, int w) : height(h), width(w), data(MatrixRM::Zero(channels, h * w)) {}
  Tensor(MatrixRM d, int h, int w) : height(h), width(w), data(std::move(d)) {}

  static Tensor FromVector(const Eigen::VectorXd& v) { return Tensor(MatrixRM(v), 1, 1); }

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }
  double& at(int c, int y, int x) { return data(c, y * width + x); }
  double at(int c, int y, int x) const { return data(c, y * width + x); }
  // Flattened view for vector-shaped tensors.
  Eigen::VectorXd vector() const { return Eigen::Map<const Eigen::VectorXd>(data.data(), data.size()); }
};

// Trainable tensor with its accumulated gradient.
struct Param {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  void ZeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

}  // namespace rahand::nn
