#pragma once

#include <optional>
#include <vector>

namespace rahand {

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;

  long total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Metrics {
  double recall = 0, precision = 0, f1 = 0, gmean = 0;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// Positive iff p >= threshold; unlabeled entries are skipped.
ConfusionCounts Confusion(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                          double threshold = 0.5);

// Every ratio with a zero denominator counts as 0.
Metrics ComputeMetrics(const ConfusionCounts& counts);

}  // namespace rahand
