#pragma once

#include <optional>
#include <vector>

namespace rahand {

enum class Reduction { kMeanOverLabeled };

struct FocalLossConfig {
  double gamma = 2.0;
  Reduction reduction = Reduction::kMeanOverLabeled;
  double epsilon = 1e-7;  // probabilities are clamped to [eps, 1 - eps]
  // Positive-class weight alpha (negatives get 1 - alpha). Off by default.
  std::optional<double> alpha;

  void Validate() const;
};

// -[y (1-p)^g log p + (1-y) p^g log(1-p)] for one entry.
double FocalTerm(double p, int y, const FocalLossConfig& config);
// d FocalTerm / dp; zero where the clamp is active.
double FocalTermGrad(double p, int y, const FocalLossConfig& config);

struct LossValue {
  double value = 0;
  std::vector<double> grad;  // d value / d input, 0 for unlabeled entries
  int labeled = 0;
};

// Mean over labeled entries. Throws UndefinedLossError when nothing is labeled.
LossValue FocalLoss(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                    const FocalLossConfig& config);
// Same loss with gradients taken with respect to logits z, p = sigmoid(z).
LossValue FocalLossFromLogits(const std::vector<double>& logits, const std::vector<std::optional<int>>& labels,
                              const FocalLossConfig& config);

// Plain mean binary cross-entropy with the same clamp, kept separate as a
// reference for the gamma = 0 case.
double BinaryCrossEntropy(const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels,
                          double epsilon = 1e-7);

}  // namespace rahand
