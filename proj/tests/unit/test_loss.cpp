#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "rahand/error.hpp"
#include "rahand/focal.hpp"
#include "rahand/metrics.hpp"
#include "rahand/random.hpp"

using namespace rahand;

TEST_CASE("focal: gamma 2, y 1, p 0.9") {
  // -(1 - 0.9)^2 * ln(0.9)
  const double expected = 0.0010536051565782623;
  FocalLossConfig cfg;
  CHECK(FocalTerm(0.9, 1, cfg) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(FocalLoss({0.9}, {1}, cfg).value - 1.0536e-3) < 1e-7);
}

TEST_CASE("focal: gamma 0 equals binary cross-entropy on 10000 random pairs") {
  Rng rng(17);
  FocalLossConfig cfg;
  cfg.gamma = 0;
  std::vector<double> p;
  std::vector<std::optional<int>> y;
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double pi = Uniform01(rng);
    const int yi = static_cast<int>(rng() % 2);
    const double bce = -(yi ? std::log(std::clamp(pi, 1e-7, 1 - 1e-7)) : std::log(1 - std::clamp(pi, 1e-7, 1 - 1e-7)));
    worst = std::max(worst, testing::RelErr(FocalTerm(pi, yi, cfg), bce));
    p.push_back(pi);
    y.push_back(yi);
  }
  CHECK(worst < 1e-9);
  CHECK(testing::RelErr(FocalLoss(p, y, cfg).value, BinaryCrossEntropy(p, y)) < 1e-9);
}

TEST_CASE("focal: easy examples are down-weighted, loss falls as p rises") {
  FocalLossConfig focal;
  FocalLossConfig bce;
  bce.gamma = 0;
  double prev = INFINITY;
  for (int i = 1; i < 100; ++i) {
    const double p = i / 100.0;
    const double f = FocalTerm(p, 1, focal);
    CHECK(f < prev);
    prev = f;
    if (p > 0.5) CHECK(f < FocalTerm(p, 1, bce));
    CHECK(FocalTerm(p, 0, focal) == doctest::Approx(FocalTerm(1 - p, 1, focal)).epsilon(1e-12));
  }
}

TEST_CASE("focal: mean runs over labeled entries only") {
  FocalLossConfig cfg;
  const LossValue a = FocalLoss({0.3, 0.8, 0.6}, {1, std::nullopt, 0}, cfg);
  CHECK(a.labeled == 2);
  CHECK(a.value == doctest::Approx((FocalTerm(0.3, 1, cfg) + FocalTerm(0.6, 0, cfg)) / 2));
  CHECK(a.grad[1] == 0.0);
  const LossValue b = FocalLoss({0.3, 0.1, 0.6}, {1, std::nullopt, 0}, cfg);
  CHECK(a.value == b.value);
  CHECK_THROWS_AS(FocalLoss({0.3}, {std::nullopt}, cfg), UndefinedLossError);
}

TEST_CASE("focal: gradients match central differences") {
  Rng rng(23);
  for (double gamma : {0.0, 1.0, 2.0, 3.5}) {
    FocalLossConfig cfg;
    cfg.gamma = gamma;
    for (int trial = 0; trial < 200; ++trial) {
      const double p = 0.01 + 0.98 * Uniform01(rng);
      const int y = static_cast<int>(rng() % 2);
      const double h = 1e-6;
      const double fd = (FocalTerm(p + h, y, cfg) - FocalTerm(p - h, y, cfg)) / (2 * h);
      CHECK(testing::RelErr(FocalTermGrad(p, y, cfg), fd) < 1e-5);
    }
    std::vector<double> z;
    std::vector<std::optional<int>> labels;
    for (int i = 0; i < 12; ++i) {
      z.push_back(3 * Normal(rng));
      labels.push_back(i % 4 == 3 ? std::nullopt : std::optional<int>(static_cast<int>(rng() % 2)));
    }
    const LossValue lv = FocalLossFromLogits(z, labels, cfg);
    for (size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += 1e-6;
      zm[i] -= 1e-6;
      const double fd = (FocalLossFromLogits(zp, labels, cfg).value - FocalLossFromLogits(zm, labels, cfg).value) / 2e-6;
      if (!labels[i]) CHECK(lv.grad[i] == 0.0);
      else CHECK(std::abs(lv.grad[i] - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("focal: clamp keeps extreme inputs finite; alpha weights classes") {
  FocalLossConfig cfg;
  CHECK(std::isfinite(FocalTerm(0.0, 1, cfg)));
  CHECK(std::isfinite(FocalTerm(1.0, 0, cfg)));
  CHECK(FocalTermGrad(0.0, 1, cfg) == 0.0);
  FocalLossConfig weighted = cfg;
  weighted.alpha = 0.25;
  CHECK(FocalTerm(0.3, 1, weighted) == doctest::Approx(0.25 * FocalTerm(0.3, 1, cfg)));
  CHECK(FocalTerm(0.3, 0, weighted) == doctest::Approx(0.75 * FocalTerm(0.3, 0, cfg)));
  cfg.gamma = -1;
  CHECK_THROWS_AS(cfg.Validate(), ConfigError);
}

TEST_CASE("metrics: published recall and precision give F1 0.420") {
  // recall 478/1000 = 0.478, precision 478/1278 = 0.374.
  ConfusionCounts c{.tp = 478, .fp = 800, .tn = 9000, .fn = 522};
  const Metrics m = ComputeMetrics(c);
  CHECK(m.recall == doctest::Approx(0.478).epsilon(1e-9));
  CHECK(std::abs(m.precision - 0.374) < 5e-4);
  CHECK(std::abs(m.f1 - 0.420) < 0.001);
  CHECK(m.gmean == doctest::Approx(std::sqrt(0.478 * 9000.0 / 9800.0)));
}

TEST_CASE("metrics: all-negative predictor scores zero everywhere") {
  std::vector<double> p(200, 0.1);
  std::vector<std::optional<int>> y;
  for (int i = 0; i < 200; ++i) y.push_back(i % 10 == 0 ? 1 : 0);
  const ConfusionCounts c = Confusion(p, y);
  CHECK(c.tp == 0);
  CHECK(c.fn == 20);
  CHECK(ComputeMetrics(c) == Metrics{0, 0, 0, 0});
  CHECK(ComputeMetrics(ConfusionCounts{}) == Metrics{0, 0, 0, 0});
}

TEST_CASE("metrics: agree with a brute-force oracle on 1000 random vectors") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 60);
    const double threshold = trial % 3 == 0 ? 0.5 : Uniform01(rng);
    std::vector<double> p;
    std::vector<std::optional<int>> y;
    for (int i = 0; i < n; ++i) {
      p.push_back(trial % 7 == 0 ? std::round(Uniform01(rng) * 4) / 4 : Uniform01(rng));
      const auto r = rng() % 5;
      y.push_back(r == 0 ? std::nullopt : std::optional<int>(r <= 1 ? 1 : 0));
    }
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      if (!y[i]) continue;
      const bool pos = p[i] >= threshold;
      if (*y[i] == 1) (pos ? tp : fn)++;
      else (pos ? fp : tn)++;
    }
    const ConfusionCounts c = Confusion(p, y, threshold);
    REQUIRE(c == ConfusionCounts{tp, fp, tn, fn});
    const double recall = tp + fn ? double(tp) / (tp + fn) : 0;
    const double precision = tp + fp ? double(tp) / (tp + fp) : 0;
    const double spec = tn + fp ? double(tn) / (tn + fp) : 0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0;
    const Metrics m = ComputeMetrics(c);
    REQUIRE(m.recall == recall);
    REQUIRE(m.precision == precision);
    REQUIRE(m.f1 == f1);
    REQUIRE(m.gmean == std::sqrt(recall * spec));
  }
}
