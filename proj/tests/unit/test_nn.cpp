#include <doctest.h>

#include "helpers.hpp"
#include "rahand/nn/layers.hpp"
#include "rahand/nn/optim.hpp"

using namespace rahand;
using namespace rahand::nn;

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(1);
  for (int stride : {1, 2}) {
    Conv2d conv(2, 3, 3, stride, 1, rng);
    CHECK(testing::LayerGradError(conv, testing::RandomTensor(2, 5, 6, rng), rng) < 1e-6);
  }
  Conv2d pointwise(3, 2, 1, 2, 0, rng);
  CHECK(testing::LayerGradError(pointwise, testing::RandomTensor(3, 5, 5, rng), rng) < 1e-6);
}

TEST_CASE("conv2d output shape") {
  Rng rng(2);
  Conv2d conv(3, 4, 3, 2, 1, rng);
  const Tensor y = conv.Forward(Tensor(3, 9, 8), nullptr);
  CHECK(y.channels() == 4);
  CHECK(y.height == 5);
  CHECK(y.width == 4);
}

TEST_CASE("elementwise and pooling layers") {
  Rng rng(3);
  Relu relu;
  Gelu gelu;
  MaxPool2d pool(3, 2, 1);
  GlobalAvgPool gap;
  L2Normalize norm;
  CHECK(testing::LayerGradError(relu, testing::RandomTensor(2, 4, 4, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(gelu, testing::RandomTensor(2, 4, 4, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(pool, testing::RandomTensor(2, 6, 6, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(gap, testing::RandomTensor(3, 4, 5, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(norm, testing::RandomTensor(6, 1, 1, rng), rng) < 1e-6);
}

TEST_CASE("gelu reference values") {
  Gelu gelu;
  Tensor x(1, 1, 3);
  x.data << -1.0, 0.0, 1.0;
  const Tensor y = gelu.Forward(x, nullptr);
  CHECK(y.data(0, 0) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
  CHECK(y.data(0, 1) == 0.0);
  CHECK(y.data(0, 2) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("linear layers") {
  Rng rng(4);
  Linear fc(5, 3, rng);
  NormedLinear nfc(4, 6, rng);
  CHECK(testing::LayerGradError(fc, testing::RandomTensor(5, 1, 1, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(nfc, testing::RandomTensor(4, 1, 1, rng), rng) < 1e-6);

  // Unit-norm rows: |output| <= |input|.
  const Tensor x = testing::RandomTensor(4, 1, 1, rng);
  const Tensor y = nfc.Forward(x, nullptr);
  for (int i = 0; i < 6; ++i) CHECK(std::abs(y.data(i, 0)) <= x.data.norm() + 1e-12);
}

TEST_CASE("residual block and sequential stack") {
  Rng rng(5);
  BasicBlock same(3, 3, 1, rng, 0.5);
  BasicBlock down(3, 4, 2, rng, 0.5);
  CHECK(testing::LayerGradError(same, testing::RandomTensor(3, 5, 5, rng), rng) < 1e-6);
  CHECK(testing::LayerGradError(down, testing::RandomTensor(3, 6, 6, rng), rng) < 1e-6);

  Sequential seq;
  seq.Add<Conv2d>(2, 3, 3, 2, 1, rng).Add<Relu>().Add<GlobalAvgPool>().Add<Linear>(3, 2, rng);
  CHECK(testing::LayerGradError(seq, testing::RandomTensor(2, 6, 6, rng), rng) < 1e-6);
  CHECK(seq.Params("m/").size() == 4);
  CHECK(seq.Params("m/")[0].name == "m/0.weight");
}

TEST_CASE("sequential copies are deep") {
  Rng rng(6);
  Sequential a;
  a.Add<Linear>(2, 2, rng);
  Sequential b = a;
  b.Params()[0].param->value.setZero();
  CHECK(a.Params()[0].param->value.norm() > 0);
}

TEST_CASE("adam first step moves each coordinate by lr") {
  Param p;
  p.value = Eigen::MatrixXd::Constant(2, 2, 1.0);
  p.grad = Eigen::MatrixXd::Constant(2, 2, 3.0);
  Adam opt({&p}, {.learning_rate = 0.1});
  opt.Step();
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(p.value.data()[i] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw decay is decoupled") {
  Param p;
  p.value = Eigen::MatrixXd::Constant(1, 1, 2.0);
  p.grad = Eigen::MatrixXd::Zero(1, 1);
  Adam opt({&p}, {.learning_rate = 0.1, .weight_decay = 0.5});
  opt.Step();
  CHECK(p.value(0, 0) == doctest::Approx(2.0 * (1 - 0.05)));
}

TEST_CASE("adam with zero learning rate is a no-op") {
  Param p;
  p.value = Eigen::MatrixXd::Constant(3, 1, 0.25);
  p.grad = Eigen::MatrixXd::Constant(3, 1, -1.0);
  Adam opt({&p}, {.learning_rate = 0.0, .weight_decay = 0.04});
  for (int i = 0; i < 10; ++i) opt.Step();
  CHECK(p.value == Eigen::MatrixXd::Constant(3, 1, 0.25));
}
