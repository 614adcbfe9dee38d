#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rahand/distill.hpp"
#include "rahand/finetune.hpp"
#include "rahand/focal.hpp"
#include "rahand/model.hpp"
#include "rahand/preprocess.hpp"
#include "rahand/synth.hpp"

namespace rahand {

// Where inputs come from. Empty paths mean "the artifact of the matching
// stage inside the run directory"; see pipeline.hpp.
struct DataSection {
  std::string manifest;         // dataset manifest.jsonl
  std::string pretrain_corpus;  // folder of unlabeled *.png; empty = synthetic corpus
  int corpus_patients = 250;    // synthetic corpus size (two images per patient)
  double corpus_prevalence = 0.3;
  std::string checkpoint;       // pretraining checkpoint
  std::string model;            // fine-tuned model checkpoint
  int n_folds = 5;
};

struct FinetuneSection {
  TrainConfig train;
  FocalLossConfig focal;
};

struct EvalSection {
  double threshold = 0.5;
  // Drives finetune/evaluate: no_pretrain draws random encoders, no_focal
  // switches to bce, local_only drops the global branch.
  std::string variant = "ours";
  std::vector<std::string> variants = {"ours", "no_pretrain", "no_focal", "local_only"};
  // Fold held out by finetune/evaluate; -1 trains and scores on everything.
  int holdout_fold = 0;
};

struct ExperimentConfig {
  std::string run_id = "default";
  std::uint64_t seed = 0;
  bool test_mode = false;  // timing-free logs; every kernel is deterministic anyway

  DataSection data;
  SynthConfig synth;
  CropSpec preprocess;
  EncoderSpec model;
  DistillConfig pretrain;
  FinetuneSection finetune;
  EvalSection eval;

  // Built-in defaults, sized so the full pipeline runs in minutes on one core.
  static ExperimentConfig Defaults();
  void Validate() const;
};

// Per-stage seeds: DeriveSeed(root, "<stage>") for synth, corpus, pretrain,
// finetune and crossval; the fold plan uses the root seed directly.
std::uint64_t StageSeed(const ExperimentConfig& config, const std::string& stage);

nlohmann::json ConfigToJson(const ExperimentConfig& config);
// Strict: unknown keys and wrong types raise SchemaError with the key path.
ExperimentConfig ConfigFromJson(const nlohmann::json& j);

// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void ApplyOverride(nlohmann::json& tree, const std::string& assignment);

// defaults < file (if non-empty) < overrides
ExperimentConfig ResolveConfig(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace rahand
