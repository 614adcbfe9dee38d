#include "rahand/crossval.hpp"

#include <cstdio>
#include <fstream>

#include "rahand/error.hpp"
#include "rahand/image.hpp"

namespace rahand {

using nlohmann::json;

std::string VariantName(Variant v) {
  switch (v) {
    case Variant::kOurs: return "ours";
    case Variant::kNoPretrain: return "no_pretrain";
    case Variant::kNoFocal: return "no_focal";
    case Variant::kLocalOnly: return "local_only";
  }
  return "?";
}

std::string VariantLabel(Variant v) {
  switch (v) {
    case Variant::kOurs: return "Ours";
    case Variant::kNoPretrain: return "w/o DINO pre-training";
    case Variant::kNoFocal: return "w/o Focal Loss";
    case Variant::kLocalOnly: return "w/o Global/Local Encoder";
  }
  return "?";
}

const std::vector<Variant>& AllVariants() {
  static const std::vector<Variant> all = {Variant::kOurs, Variant::kNoPretrain, Variant::kNoFocal,
                                           Variant::kLocalOnly};
  return all;
}

Variant ParseVariant(const std::string& name) {
  for (Variant v : AllVariants()) {
    if (name == VariantName(v) || name == VariantLabel(v)) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected ours, no_pretrain, no_focal or local_only)");
}

bool NeedsPretrainedEncoders(Variant v) { return v != Variant::kNoPretrain; }

ConfusionCounts EvalReport::PooledCounts() const {
  ConfusionCounts c;
  for (const auto& f : per_fold) c += f.counts;
  return c;
}

std::vector<PreparedSample> PrepareAll(const DatasetManifest& manifest, const CropSpec& crop) {
  std::vector<PreparedSample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(PrepareSample(r, manifest, crop));
  return out;
}

namespace {

FoldResult RunFold(const std::vector<PreparedSample>& samples, const DatasetManifest& manifest, const FoldPlan& plan,
                   const CrossvalSettings& settings, Variant variant, const Checkpoint* pretrained, int fold) {
  const std::vector<size_t> train_idx = plan.TrainRecords(manifest, fold);
  const std::vector<size_t> test_idx = plan.TestRecords(manifest, fold);
  if (train_idx.empty() || test_idx.empty()) throw ConfigError("fold has an empty train or test split");

  std::vector<const PreparedSample*> train_raw;
  for (size_t i : train_idx) train_raw.push_back(&samples[i]);
  FoldResult result;
  result.fold = fold;
  result.norm = ComputeNormStats(train_raw);
  result.n_train_images = static_cast<int>(train_idx.size());
  result.n_test_images = static_cast<int>(test_idx.size());

  const bool use_global = variant != Variant::kLocalOnly;
  const std::uint64_t fold_seed = DeriveSeed(DeriveSeed(settings.seed, "crossval"), static_cast<std::uint64_t>(fold));
  GlobalLocalNet net(settings.encoder, use_global, fold_seed);
  LoadBackbone(net, NeedsPretrainedEncoders(variant) ? WeightsSource::kPretrainedCheckpoint : WeightsSource::kRandom,
               pretrained, fold_seed);

  TrainConfig train = settings.finetune;
  train.seed = fold_seed;
  if (variant == Variant::kNoFocal) train.loss = LossKind::kBce;

  std::vector<PreparedSample> train_set;
  for (size_t i : train_idx) train_set.push_back(Normalize(samples[i], result.norm));
  result.log = FinetuneLoop(net, train_set, train, settings.focal);
  train_set.clear();

  for (size_t i : test_idx) {
    const PreparedSample s = Normalize(samples[i], result.norm);
    const std::vector<double> p = net.Forward(s);
    result.predictions.insert(result.predictions.end(), p.begin(), p.end());
    result.labels.insert(result.labels.end(), s.labels.begin(), s.labels.end());
  }
  result.counts = Confusion(result.predictions, result.labels, settings.threshold);
  result.metrics = ComputeMetrics(result.counts);
  return result;
}

}  // namespace

EvalReport CrossvalEvaluate(const std::vector<PreparedSample>& samples, const DatasetManifest& manifest,
                            const FoldPlan& plan, const CrossvalSettings& settings, Variant variant,
                            const Checkpoint* pretrained) {
  if (samples.size() != manifest.records.size()) throw ConfigError("prepared samples do not match the manifest");
  if (NeedsPretrainedEncoders(variant) && !pretrained) {
    throw ConfigError("variant " + VariantName(variant) + " needs a pretrained checkpoint");
  }
  EvalReport report;
  report.variant_name = VariantName(variant);
  report.variant_label = VariantLabel(variant);
  report.threshold = settings.threshold;
  for (int k = 0; k < plan.n_folds; ++k) {
    try {
      report.per_fold.push_back(RunFold(samples, manifest, plan, settings, variant, pretrained, k));
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(k) + ": " + e.what());
    }
  }
  for (const auto& f : report.per_fold) {
    report.aggregate.recall += f.metrics.recall / plan.n_folds;
    report.aggregate.precision += f.metrics.precision / plan.n_folds;
    report.aggregate.f1 += f.metrics.f1 / plan.n_folds;
    report.aggregate.gmean += f.metrics.gmean / plan.n_folds;
  }
  report.metadata = {{"encoders", NeedsPretrainedEncoders(variant) ? "pretrained" : "random"},
                     {"loss", variant == Variant::kNoFocal ? "bce" : LossKindName(settings.finetune.loss)},
                     {"architecture", variant == Variant::kLocalOnly ? "local branch only" : "global + local"},
                     {"pooling", "micro within fold, macro across folds"},
                     {"n_folds", plan.n_folds}};
  return report;
}

std::vector<EvalReport> RunAblation(const std::vector<PreparedSample>& samples, const DatasetManifest& manifest,
                                    const FoldPlan& plan, const CrossvalSettings& settings,
                                    const std::vector<Variant>& variants, const Checkpoint* pretrained) {
  std::vector<EvalReport> out;
  for (Variant v : variants) out.push_back(CrossvalEvaluate(samples, manifest, plan, settings, v, pretrained));
  return out;
}

namespace {

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

json MetricsJson(const Metrics& m) {
  return {{"recall", m.recall}, {"precision", m.precision}, {"f1", m.f1}, {"gmean", m.gmean}};
}

json CountsJson(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("short write on '" + path.string() + "'");
}

}  // namespace

std::string AblationTable(const std::vector<EvalReport>& reports) {
  std::string out = "variant\trecall\tprecision\tf1\tgmean\n";
  for (const auto& r : reports) {
    out += r.variant_label + "\t" + Fixed(r.aggregate.recall) + "\t" + Fixed(r.aggregate.precision) + "\t" +
           Fixed(r.aggregate.f1) + "\t" + Fixed(r.aggregate.gmean) + "\n";
  }
  return out;
}

std::string FoldTable(const EvalReport& report) {
  std::string out = "fold\ttp\tfp\ttn\tfn\trecall\tprecision\tf1\tgmean\n";
  for (const auto& f : report.per_fold) {
    out += std::to_string(f.fold) + "\t" + std::to_string(f.counts.tp) + "\t" + std::to_string(f.counts.fp) + "\t" +
           std::to_string(f.counts.tn) + "\t" + std::to_string(f.counts.fn) + "\t" + Fixed(f.metrics.recall) + "\t" +
           Fixed(f.metrics.precision) + "\t" + Fixed(f.metrics.f1) + "\t" + Fixed(f.metrics.gmean) + "\n";
  }
  return out;
}

json FoldJson(const FoldResult& f) {
  json losses = json::array();
  for (const auto& e : f.log.epochs) losses.push_back(e.loss);
  return {{"fold", f.fold},
          {"counts", CountsJson(f.counts)},
          {"metrics", MetricsJson(f.metrics)},
          {"n_train_images", f.n_train_images},
          {"n_test_images", f.n_test_images},
          {"train_loss_per_epoch", losses},
          {"normalization", {{"mean", f.norm.mean}, {"std", f.norm.std}}}};
}

json ReportJson(const EvalReport& r) {
  json folds = json::array();
  for (const auto& f : r.per_fold) {
    folds.push_back({{"fold", f.fold}, {"counts", CountsJson(f.counts)}, {"metrics", MetricsJson(f.metrics)}});
  }
  return {{"variant", r.variant_name},
          {"label", r.variant_label},
          {"threshold", r.threshold},
          {"per_fold", folds},
          {"pooled_counts", CountsJson(r.PooledCounts())},
          {"aggregate", MetricsJson(r.aggregate)},
          {"metadata", r.metadata}};
}

void WriteReport(const std::filesystem::path& dir, const EvalReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& f : report.per_fold) {
    WriteText(dir / ("fold_" + std::to_string(f.fold) + ".json"), FoldJson(f).dump(2) + "\n");
  }
  WriteText(dir / "folds.tsv", FoldTable(report));
  WriteText(dir / "aggregate.json", ReportJson(report).dump(2) + "\n");
}

void WriteBarChart(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  const int bar = 18, gap = 6, group_gap = 30, height = 220, margin = 20;
  const int n = static_cast<int>(reports.size());
  const int group_w = n * (bar + gap);
  const int width = 2 * margin + 4 * group_w + 3 * group_gap;
  Image img(width, height + 2 * margin, 3, 255);
  static const std::uint8_t palette[][3] = {
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}};
  for (int m = 0; m < 4; ++m) {
    for (int v = 0; v < n; ++v) {
      const Metrics& a = reports[v].aggregate;
      const double value = m == 0 ? a.recall : m == 1 ? a.precision : m == 2 ? a.f1 : a.gmean;
      const int h = static_cast<int>(value * height + 0.5);
      const int x0 = margin + m * (group_w + group_gap) + v * (bar + gap);
      for (int y = margin + height - h; y < margin + height; ++y) {
        for (int x = x0; x < x0 + bar; ++x) {
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = palette[v % 6][c];
        }
      }
    }
  }
  for (int x = margin / 2; x < width - margin / 2; ++x) {
    for (int c = 0; c < 3; ++c) img.at(x, margin + height, c) = 0;
  }
  WritePng(path, img);
}

}  // namespace rahand
