#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rahand/checkpoint.hpp"
#include "rahand/finetune.hpp"
#include "rahand/folds.hpp"
#include "rahand/metrics.hpp"
#include "rahand/preprocess.hpp"

namespace rahand {

enum class Variant { kOurs, kNoPretrain, kNoFocal, kLocalOnly };

std::string VariantName(Variant v);   // ours, no_pretrain, no_focal, local_only
std::string VariantLabel(Variant v);  // row label of the ablation table
// Accepts either spelling.
Variant ParseVariant(const std::string& name);
const std::vector<Variant>& AllVariants();
bool NeedsPretrainedEncoders(Variant v);

struct CrossvalSettings {
  EncoderSpec encoder;
  CropSpec crop;
  TrainConfig finetune;
  FocalLossConfig focal;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

struct FoldResult {
  int fold = 0;
  ConfusionCounts counts;
  Metrics metrics;
  int n_train_images = 0;
  int n_test_images = 0;
  std::vector<double> predictions;  // test joints, record order then joint order
  LabelRow labels;
  FinetuneLog log;
  NormStats norm;
};

struct EvalReport {
  std::string variant_name;
  std::string variant_label;
  double threshold = 0.5;
  std::vector<FoldResult> per_fold;
  Metrics aggregate;  // unweighted mean over folds
  nlohmann::json metadata = nlohmann::json::object();

  ConfusionCounts PooledCounts() const;
};

// Unnormalized samples for every record, in manifest order.
std::vector<PreparedSample> PrepareAll(const DatasetManifest& manifest, const CropSpec& crop);

// Per fold: normalization fitted on the training split, backbone from the
// checkpoint (or random for no_pretrain), fine-tune, predict the test split.
// `pretrained` may be null only for variants that do not need it.
EvalReport CrossvalEvaluate(const std::vector<PreparedSample>& samples, const DatasetManifest& manifest,
                            const FoldPlan& plan, const CrossvalSettings& settings, Variant variant,
                            const Checkpoint* pretrained);

std::vector<EvalReport> RunAblation(const std::vector<PreparedSample>& samples, const DatasetManifest& manifest,
                                    const FoldPlan& plan, const CrossvalSettings& settings,
                                    const std::vector<Variant>& variants, const Checkpoint* pretrained);

// Tab-separated, columns exactly variant, recall, precision, f1, gmean.
std::string AblationTable(const std::vector<EvalReport>& reports);
// Tab-separated per-fold counts and metrics.
std::string FoldTable(const EvalReport& report);
nlohmann::json FoldJson(const FoldResult& fold);
// Aggregate summary; per-fold entries carry counts and metrics only.
nlohmann::json ReportJson(const EvalReport& report);
// fold_<k>.json per fold, folds.tsv and aggregate.json.
void WriteReport(const std::filesystem::path& dir, const EvalReport& report);
// Grouped bar chart: one group per metric, one bar per report.
void WriteBarChart(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

}  // namespace rahand
