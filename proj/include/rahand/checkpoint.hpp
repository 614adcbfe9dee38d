#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rahand/model.hpp"
#include "rahand/preprocess.hpp"

namespace rahand {

// Self-describing parameter container.
//
// On disk: the 8-byte magic "RAHCKPT1", a little-endian u64 header length,
// a JSON header (kind, encoder spec, tensor table, normalization constants,
// free-form metadata such as the probe ledger), then every tensor as raw
// little-endian doubles in column-major order, in tensor-table order.
struct Checkpoint {
  std::string kind;  // "pretrain" or "model"
  EncoderSpec spec;
  bool use_global_branch = true;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
  NormStats norm;
  nlohmann::json metadata = nlohmann::json::object();

  void AddModule(const std::string& prefix, nn::Sequential& module);
  // Copies tensors named prefix + param name into `module`. Missing or
  // mis-shaped tensors are appended to `problems`.
  void CopyInto(const std::string& prefix, nn::Sequential& module,
                std::vector<std::string>& problems) const;
  bool HasPrefix(const std::string& prefix) const;
};

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Full network (every group) plus the normalization it was trained with.
Checkpoint CaptureModel(GlobalLocalNet& net, const NormStats& norm);
GlobalLocalNet RestoreModel(const Checkpoint& checkpoint);

inline constexpr int kProbeCount = 16;
inline constexpr std::uint64_t kProbeSeed = 0x5eed0f9706eULL;

// Fixed smooth pseudo-random images used to verify that a reloaded encoder
// reproduces the embeddings recorded when it was saved.
std::vector<nn::Tensor> ProbeImages(int size, int channels, int count = kProbeCount,
                                    std::uint64_t seed = kProbeSeed);
nlohmann::json RecordProbeLedger(const nn::Sequential& encoder, int size, int channels);
// Largest absolute deviation from the recorded embeddings.
double ProbeDeviation(const nn::Sequential& encoder, const nlohmann::json& ledger);

enum class WeightsSource { kRandom, kPretrainedCheckpoint };

// Replaces encoder weights (random draw from `seed`, or the checkpoint's
// encoders) and re-draws FFNs and head. Checkpoint loads are verified
// against the probe ledger at `probe_tolerance`.
void LoadBackbone(GlobalLocalNet& net, WeightsSource source, const Checkpoint* checkpoint,
                  std::uint64_t seed, double probe_tolerance = 1e-5);

}  // namespace rahand
