#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rahand/focal.hpp"
#include "rahand/model.hpp"

namespace rahand {

enum class LossKind { kFocal, kBce };

std::string LossKindName(LossKind kind);
LossKind ParseLossKind(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 20;
  int batch_size = 8;  // hands per step
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kFocal;
  bool freeze = true;
  // With freeze, standardize encoder outputs per dimension using the
  // training set's statistics before the FFNs.
  bool standardize_features = true;
  // Stop after this many optimizer steps; 0 runs every epoch in full.
  int max_steps = 0;

  void Validate() const;
};

// bce is the focal objective at gamma = 0.
FocalLossConfig EffectiveLoss(const TrainConfig& train, const FocalLossConfig& focal);

struct EpochLog {
  int epoch = 0;
  double loss = 0;  // mean over labeled joints seen this epoch
  double learning_rate = 0;
  int steps = 0;
  int skipped_batches = 0;  // batches without any label
  std::uint64_t global_encoder_checksum = 0;
  std::uint64_t local_encoder_checksum = 0;
  double elapsed_s = 0;
};

struct FinetuneLog {
  std::vector<EpochLog> epochs;
  std::uint64_t global_checksum_start = 0, global_checksum_end = 0;
  std::uint64_t local_checksum_start = 0, local_checksum_end = 0;
  int total_steps = 0;

  // One JSON object per line: a start record, one per epoch, an end record.
  std::string ToJsonLines() const;
};

using LabelRow = std::vector<std::optional<int>>;

// Loss over a batch of encoded hands; adds gradients of the trainable head
// groups into their Param::grad. Throws UndefinedLossError if nothing in
// the batch is labeled.
double HeadLossAndGrad(GlobalLocalNet& net, const std::vector<const EncodedSample*>& batch,
                       const std::vector<const LabelRow*>& labels, const FocalLossConfig& loss);

// Frozen-encoder training on precomputed encoder outputs.
FinetuneLog FinetuneHead(GlobalLocalNet& net, const std::vector<EncodedSample>& encoded,
                         const std::vector<LabelRow>& labels, const TrainConfig& config,
                         const FocalLossConfig& loss);

// Full loop over normalized samples. With config.freeze the encoders are
// frozen, encoded once, and only FFNs and head are optimized; otherwise
// every group of the network is trained end to end.
FinetuneLog FinetuneLoop(GlobalLocalNet& net, const std::vector<PreparedSample>& train, const TrainConfig& config,
                         const FocalLossConfig& loss);

std::vector<std::vector<double>> Predict(const GlobalLocalNet& net, const std::vector<PreparedSample>& samples);

// Deterministic Fisher-Yates; identical on every standard library.
void Shuffle(std::vector<size_t>& order, Rng& rng);

}  // namespace rahand
