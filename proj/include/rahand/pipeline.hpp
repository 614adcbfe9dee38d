#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rahand/config.hpp"
#include "rahand/error.hpp"

namespace rahand {

// Run layout, under <run_root>/<run_id>/:
//   synth/      images/, masks/, manifest.jsonl, ledger.jsonl
//   pretrain/   checkpoint.bin, log.jsonl
//   finetune/   model.bin, log.jsonl, folds.json
//   evaluate/   report.json, predictions.tsv
//   crossval/   fold_<k>.json, folds.tsv, aggregate.json, folds.json
//   ablate/     ablation.tsv, ablation.png, <variant>/ (as crossval)
// Every stage directory also gets resolved_config.json and provenance.json
// (SHA-256 of inputs and outputs).
//
// Missing upstream artifacts are produced on demand: crossval with an empty
// config synthesizes a dataset and pretrains first.

// $RAHAND_RUN_ROOT, or "runs".
std::filesystem::path DefaultRunRoot();

// Failure of one pipeline stage. `locus` narrows it down (fold, file, epoch)
// when the underlying error says.
class StageError : public Error {
 public:
  StageError(ErrorKind kind, const std::string& message, std::string stage, std::string locus)
      : Error(kind, message), stage_(std::move(stage)), locus_(std::move(locus)) {}
  const std::string& stage() const { return stage_; }
  const std::string& locus() const { return locus_; }

 private:
  std::string stage_;
  std::string locus_;
};

struct StageResult {
  std::filesystem::path dir;
  nlohmann::json summary;
};

StageResult RunSynth(const ExperimentConfig& config, const std::filesystem::path& run_root);
StageResult RunPretrain(const ExperimentConfig& config, const std::filesystem::path& run_root);
StageResult RunFinetune(const ExperimentConfig& config, const std::filesystem::path& run_root);
StageResult RunEvaluate(const ExperimentConfig& config, const std::filesystem::path& run_root);
StageResult RunCrossval(const ExperimentConfig& config, const std::filesystem::path& run_root);
StageResult RunAblate(const ExperimentConfig& config, const std::filesystem::path& run_root);

// Lower-case hex digest.
std::string Sha256File(const std::filesystem::path& path);

}  // namespace rahand
