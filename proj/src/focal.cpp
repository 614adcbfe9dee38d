#include "rahand/focal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rahand/error.hpp"
#include "rahand/model.hpp"

namespace rahand {

void FocalLossConfig::Validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-4)) throw ConfigError("focal epsilon must be in (0, 1e-4]");
  if (alpha && !(*alpha > 0.0 && *alpha < 1.0)) throw ConfigError("focal alpha must be in (0, 1)");
}

namespace {

double Weight(int y, const FocalLossConfig& c) {
  if (!c.alpha) return 1.0;
  return y == 1 ? *c.alpha : 1.0 - *c.alpha;
}

}  // namespace

double FocalTerm(double p, int y, const FocalLossConfig& c) {
  p = std::clamp(p, c.epsilon, 1.0 - c.epsilon);
  const double w = Weight(y, c);
  if (y == 1) return -w * std::pow(1.0 - p, c.gamma) * std::log(p);
  return -w * std::pow(p, c.gamma) * std::log1p(-p);
}

double FocalTermGrad(double p, int y, const FocalLossConfig& c) {
  if (p < c.epsilon || p > 1.0 - c.epsilon) return 0.0;
  const double w = Weight(y, c);
  const double g = c.gamma;
  if (y == 1) {
    const double q = 1.0 - p;
    const double lead = g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0) * std::log(p);
    return w * (lead - std::pow(q, g) / p);
  }
  const double lead = g == 0.0 ? 0.0 : -g * std::pow(p, g - 1.0) * std::log1p(-p);
  return w * (lead + std::pow(p, g) / (1.0 - p));
}

LossValue FocalLoss(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                    const FocalLossConfig& config) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("focal loss got " + std::to_string(predictions.size()) + " predictions and " +
                          std::to_string(labels.size()) + " labels");
  }
  LossValue out;
  out.grad.assign(predictions.size(), 0.0);
  double sum = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    sum += FocalTerm(predictions[i], *labels[i], config);
    ++out.labeled;
  }
  if (out.labeled == 0) throw UndefinedLossError("every label in the batch is absent");
  out.value = sum / out.labeled;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) out.grad[i] = FocalTermGrad(predictions[i], *labels[i], config) / out.labeled;
  }
  return out;
}

LossValue FocalLossFromLogits(const std::vector<double>& logits, const std::vector<std::optional<int>>& labels,
                              const FocalLossConfig& config) {
  std::vector<double> p(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) p[i] = Sigmoid(logits[i]);
  LossValue out = FocalLoss(p, labels, config);
  for (size_t i = 0; i < p.size(); ++i) out.grad[i] *= p[i] * (1.0 - p[i]);
  return out;
}

double BinaryCrossEntropy(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                          double epsilon) {
  double sum = 0;
  int n = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    const double p = std::clamp(predictions[i], epsilon, 1.0 - epsilon);
    sum += *labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
    ++n;
  }
  if (n == 0) throw UndefinedLossError("every label in the batch is absent");
  return sum / n;
}

}  // namespace rahand
