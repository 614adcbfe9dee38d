#include "rahand/metrics.hpp"

#include <cmath>
#include <string>

#include "rahand/error.hpp"

namespace rahand {

ConfusionCounts Confusion(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                          double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
  if (predictions.size() != labels.size()) {
    throw ValidationError("confusion got " + std::to_string(predictions.size()) + " predictions and " +
                          std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    const bool positive = predictions[i] >= threshold;
    if (*labels[i] == 1) {
      positive ? ++c.tp : ++c.fn;
    } else {
      positive ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

namespace {

double Ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

Metrics ComputeMetrics(const ConfusionCounts& c) {
  Metrics m;
  m.recall = Ratio(c.tp, c.tp + c.fn);
  m.precision = Ratio(c.tp, c.tp + c.fp);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  const double specificity = Ratio(c.tn, c.tn + c.fp);
  m.gmean = std::sqrt(m.recall * specificity);
  return m;
}

}  // namespace rahand
