#include "rahand/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>

#include <openssl/evp.h>

#include "rahand/checkpoint.hpp"
#include "rahand/crossval.hpp"
#include "rahand/distill.hpp"
#include "rahand/finetune.hpp"
#include "rahand/folds.hpp"
#include "rahand/metrics.hpp"
#include "rahand/synth.hpp"

namespace rahand {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path DefaultRunRoot() {
  const char* env = std::getenv("RAHAND_RUN_ROOT");
  return (env && *env) ? fs::path(env) : fs::path("runs");
}

std::string Sha256File(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof(b), "%02x", md[i]);
    hex += b;
  }
  return hex;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string LocusOf(const std::string& message) {
  static const std::regex re(R"((fold \d+|line \d+|epoch \d+ step \d+|step \d+|record \d+))");
  std::smatch m;
  if (std::regex_search(message, m, re)) return m.str(1);
  return "";
}

template <typename F>
auto Stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(e.kind(), e.what(), stage, LocusOf(e.what()));
  } catch (const fs::filesystem_error& e) {
    throw StageError(ErrorKind::kIo, e.what(), stage, e.path1().string());
  } catch (const std::bad_alloc&) {
    throw StageError(ErrorKind::kValidation, "out of memory", stage, "");
  }
}

fs::path RunDir(const ExperimentConfig& c, const fs::path& root) { return root / c.run_id; }

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("short write on '" + path.string() + "'");
}

fs::path MakeStageDir(const ExperimentConfig& c, const fs::path& root, const std::string& name) {
  const fs::path dir = RunDir(c, root) / name;
  fs::create_directories(dir);
  return dir;
}

// resolved_config.json, then provenance.json hashing `inputs` and every
// file under `dir`.
void WriteProvenance(const fs::path& dir, const ExperimentConfig& c, const std::string& subcommand,
                     const std::vector<fs::path>& inputs, Clock::time_point started) {
  WriteText(dir / "resolved_config.json", ConfigToJson(c).dump(2) + "\n");
  json in = json::object();
  for (const auto& p : inputs) {
    if (fs::is_regular_file(p)) in[p.string()] = Sha256File(p);
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "provenance.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& p : files) out[fs::relative(p, dir).generic_string()] = Sha256File(p);
  json prov = {{"subcommand", subcommand},
               {"run_id", c.run_id},
               {"seed", c.seed},
               {"test_mode", c.test_mode},
               {"inputs", std::move(in)},
               {"outputs", std::move(out)}};
  if (!c.test_mode) prov["wall_time_s"] = std::chrono::duration<double>(Clock::now() - started).count();
  WriteText(dir / "provenance.json", prov.dump(2) + "\n");
}

SynthConfig StageSynth(const ExperimentConfig& c) {
  SynthConfig s = c.synth;
  s.seed = StageSeed(c, "synth");
  return s;
}

struct ManifestInput {
  DatasetManifest manifest;
  fs::path path;
};

ManifestInput EnsureManifest(const ExperimentConfig& c, const fs::path& root) {
  ManifestInput m;
  if (c.data.manifest.empty()) {
    m.path = RunDir(c, root) / "synth" / "manifest.jsonl";
    if (!fs::exists(m.path)) RunSynth(c, root);
  } else {
    m.path = c.data.manifest;
  }
  m.manifest = Stage("load_manifest", [&] { return LoadManifest(m.path); });
  return m;
}

struct CheckpointInput {
  Checkpoint checkpoint;
  fs::path path;
};

CheckpointInput EnsureCheckpoint(const ExperimentConfig& c, const fs::path& root) {
  CheckpointInput ck;
  if (c.data.checkpoint.empty()) {
    ck.path = RunDir(c, root) / "pretrain" / "checkpoint.bin";
    if (!fs::exists(ck.path)) RunPretrain(c, root);
  } else {
    ck.path = c.data.checkpoint;
  }
  ck.checkpoint = Stage("load_checkpoint", [&] { return LoadCheckpoint(ck.path); });
  return ck;
}

CrossvalSettings Settings(const ExperimentConfig& c) {
  CrossvalSettings s;
  s.encoder = c.model;
  s.crop = c.preprocess;
  s.finetune = c.finetune.train;
  s.focal = c.finetune.focal;
  s.threshold = c.eval.threshold;
  s.seed = c.seed;
  return s;
}

std::string FinetuneLogText(FinetuneLog log, bool test_mode) {
  if (test_mode) {
    for (auto& e : log.epochs) e.elapsed_s = 0;
  }
  return log.ToJsonLines();
}

}  // namespace

StageResult RunSynth(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  const fs::path dir = MakeStageDir(c, root, "synth");
  const DatasetManifest m = Stage("generate", [&] { return GenerateDataset(StageSynth(c), dir); });
  Stage("provenance", [&] { WriteProvenance(dir, c, "synth", {}, t0); });
  return {dir,
          {{"records", m.records.size()}, {"patients", m.Patients().size()}, {"positives", m.PositiveCount()}}};
}

StageResult RunPretrain(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  std::vector<fs::path> inputs;
  const std::vector<Image> corpus = Stage("corpus", [&] {
    if (!c.data.pretrain_corpus.empty()) {
      std::vector<Image> images = LoadImageFolder(c.data.pretrain_corpus);
      if (images.empty()) throw ValidationError("no *.png files in '" + c.data.pretrain_corpus + "'");
      return images;
    }
    SynthConfig s = c.synth;
    s.seed = StageSeed(c, "corpus");
    s.n_patients = c.data.corpus_patients;
    s.images_per_patient = 2;
    s.prevalence = SynthConfig::UniformPrevalence(c.data.corpus_prevalence);
    return GenerateCorpus(s);
  });
  if (!c.data.pretrain_corpus.empty()) {
    for (const auto& e : fs::directory_iterator(c.data.pretrain_corpus)) {
      if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  }
  DistillConfig d = c.pretrain;
  d.seed = StageSeed(c, "pretrain");
  PretrainResult r = Stage("distill", [&] { return PretrainLoop(corpus, c.model, d); });

  const fs::path dir = MakeStageDir(c, root, "pretrain");
  Stage("write", [&] {
    SaveCheckpoint(dir / "checkpoint.bin", r.checkpoint);
    if (c.test_mode) {
      for (auto& e : r.log) e.elapsed_s = 0;
    }
    WriteText(dir / "log.jsonl", r.LogJsonLines());
    WriteProvenance(dir, c, "pretrain", inputs, t0);
  });
  return {dir,
          {{"corpus_size", corpus.size()},
           {"final_loss", r.final_loss},
           {"embedding_std", r.log.empty() ? 0.0 : r.log.back().embedding_std},
           {"warnings", r.warnings}}};
}

StageResult RunFinetune(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  const ManifestInput mi = EnsureManifest(c, root);
  const Variant variant = ParseVariant(c.eval.variant);
  std::vector<fs::path> inputs = {mi.path};
  std::optional<CheckpointInput> ck;
  if (NeedsPretrainedEncoders(variant)) {
    ck = EnsureCheckpoint(c, root);
    inputs.push_back(ck->path);
  }
  const FoldPlan plan = MakeFolds(mi.manifest, c.data.n_folds, c.seed);
  std::vector<size_t> idx;
  if (c.eval.holdout_fold < 0) {
    for (size_t i = 0; i < mi.manifest.records.size(); ++i) idx.push_back(i);
  } else {
    idx = plan.TrainRecords(mi.manifest, c.eval.holdout_fold);
  }

  std::vector<PreparedSample> raw = Stage("preprocess", [&] {
    std::vector<PreparedSample> out;
    for (size_t i : idx) out.push_back(PrepareSample(mi.manifest.records[i], mi.manifest, c.preprocess));
    return out;
  });
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : raw) ptrs.push_back(&s);
  const NormStats norm = ComputeNormStats(ptrs);
  std::vector<PreparedSample> train;
  for (const auto& s : raw) train.push_back(Normalize(s, norm));
  raw.clear();

  const std::uint64_t seed = StageSeed(c, "finetune");
  GlobalLocalNet net(c.model, variant != Variant::kLocalOnly, seed);
  Stage("load_backbone", [&] {
    LoadBackbone(net, ck ? WeightsSource::kPretrainedCheckpoint : WeightsSource::kRandom,
                 ck ? &ck->checkpoint : nullptr, seed);
  });
  TrainConfig t = c.finetune.train;
  t.seed = seed;
  if (variant == Variant::kNoFocal) t.loss = LossKind::kBce;
  const FinetuneLog log = Stage("train", [&] { return FinetuneLoop(net, train, t, c.finetune.focal); });

  const fs::path dir = MakeStageDir(c, root, "finetune");
  Stage("write", [&] {
    Checkpoint model = CaptureModel(net, norm);
    model.metadata = {{"variant", VariantName(variant)},
                      {"holdout_fold", c.eval.holdout_fold},
                      {"n_train_images", train.size()},
                      {"loss", LossKindName(t.loss)}};
    SaveCheckpoint(dir / "model.bin", model);
    WriteText(dir / "log.jsonl", FinetuneLogText(log, c.test_mode));
    SaveFoldPlan(dir / "folds.json", plan);
    WriteProvenance(dir, c, "finetune", inputs, t0);
  });
  return {dir,
          {{"variant", VariantName(variant)},
           {"n_train_images", train.size()},
           {"final_loss", log.epochs.empty() ? 0.0 : log.epochs.back().loss}}};
}

StageResult RunEvaluate(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  const fs::path model_path =
      c.data.model.empty() ? RunDir(c, root) / "finetune" / "model.bin" : fs::path(c.data.model);
  if (!fs::exists(model_path)) {
    throw StageError(ErrorKind::kIo, "model checkpoint '" + model_path.string() + "' does not exist; run finetune",
                     "load_model", model_path.string());
  }
  const Checkpoint ckpt = Stage("load_model", [&] { return LoadCheckpoint(model_path); });
  const GlobalLocalNet net = Stage("load_model", [&] { return RestoreModel(ckpt); });
  const ManifestInput mi = EnsureManifest(c, root);
  const FoldPlan plan = MakeFolds(mi.manifest, c.data.n_folds, c.seed);
  std::vector<size_t> idx;
  if (c.eval.holdout_fold < 0) {
    for (size_t i = 0; i < mi.manifest.records.size(); ++i) idx.push_back(i);
  } else {
    idx = plan.TestRecords(mi.manifest, c.eval.holdout_fold);
  }

  std::vector<double> preds;
  LabelRow labels;
  std::string tsv = "image_path\tjoint\tlabel\tprobability\n";
  Stage("predict", [&] {
    for (size_t i : idx) {
      const auto& rec = mi.manifest.records[i];
      const PreparedSample s = Normalize(PrepareSample(rec, mi.manifest, c.preprocess), ckpt.norm);
      const std::vector<double> p = net.Forward(s);
      for (size_t j = 0; j < p.size(); ++j) {
        preds.push_back(p[j]);
        labels.push_back(s.labels[j]);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", p[j]);
        tsv += rec.image_path + "\t" + s.joint_ids[j].Name() + "\t" +
               (s.labels[j] ? std::to_string(*s.labels[j]) : std::string("NA")) + "\t" + buf + "\n";
      }
    }
  });
  const ConfusionCounts counts = Stage("metrics", [&] { return Confusion(preds, labels, c.eval.threshold); });
  const Metrics m = ComputeMetrics(counts);
  const json report = {{"model", model_path.string()},
                       {"holdout_fold", c.eval.holdout_fold},
                       {"threshold", c.eval.threshold},
                       {"n_images", idx.size()},
                       {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}}},
                       {"metrics", {{"recall", m.recall}, {"precision", m.precision}, {"f1", m.f1}, {"gmean", m.gmean}}}};

  const fs::path dir = MakeStageDir(c, root, "evaluate");
  Stage("write", [&] {
    WriteText(dir / "report.json", report.dump(2) + "\n");
    WriteText(dir / "predictions.tsv", tsv);
    WriteProvenance(dir, c, "evaluate", {model_path, mi.path}, t0);
  });
  return {dir, report};
}

StageResult RunCrossval(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  const ManifestInput mi = EnsureManifest(c, root);
  const Variant variant = ParseVariant(c.eval.variant);
  std::vector<fs::path> inputs = {mi.path};
  std::optional<CheckpointInput> ck;
  if (NeedsPretrainedEncoders(variant)) {
    ck = EnsureCheckpoint(c, root);
    inputs.push_back(ck->path);
  }
  const FoldPlan plan = MakeFolds(mi.manifest, c.data.n_folds, c.seed);
  const std::vector<PreparedSample> samples =
      Stage("preprocess", [&] { return PrepareAll(mi.manifest, c.preprocess); });
  const EvalReport report = Stage("crossval", [&] {
    return CrossvalEvaluate(samples, mi.manifest, plan, Settings(c), variant, ck ? &ck->checkpoint : nullptr);
  });

  const fs::path dir = MakeStageDir(c, root, "crossval");
  Stage("write", [&] {
    WriteReport(dir, report);
    SaveFoldPlan(dir / "folds.json", plan);
    WriteProvenance(dir, c, "crossval", inputs, t0);
  });
  return {dir, ReportJson(report)["aggregate"]};
}

StageResult RunAblate(const ExperimentConfig& c, const fs::path& root) {
  const auto t0 = Clock::now();
  const ManifestInput mi = EnsureManifest(c, root);
  std::vector<Variant> variants;
  for (const auto& v : c.eval.variants) variants.push_back(ParseVariant(v));
  std::vector<fs::path> inputs = {mi.path};
  std::optional<CheckpointInput> ck;
  if (std::any_of(variants.begin(), variants.end(), NeedsPretrainedEncoders)) {
    ck = EnsureCheckpoint(c, root);
    inputs.push_back(ck->path);
  }
  const FoldPlan plan = MakeFolds(mi.manifest, c.data.n_folds, c.seed);
  const std::vector<PreparedSample> samples =
      Stage("preprocess", [&] { return PrepareAll(mi.manifest, c.preprocess); });
  std::vector<EvalReport> reports;
  for (Variant v : variants) {
    reports.push_back(Stage("ablate:" + VariantName(v), [&] {
      return CrossvalEvaluate(samples, mi.manifest, plan, Settings(c), v, ck ? &ck->checkpoint : nullptr);
    }));
  }

  const fs::path dir = MakeStageDir(c, root, "ablate");
  const std::string table = AblationTable(reports);
  Stage("write", [&] {
    WriteText(dir / "ablation.tsv", table);
    WriteBarChart(dir / "ablation.png", reports);
    for (const auto& r : reports) {
      fs::create_directories(dir / r.variant_name);
      WriteReport(dir / r.variant_name, r);
    }
    SaveFoldPlan(dir / "folds.json", plan);
    WriteProvenance(dir, c, "ablate", inputs, t0);
  });
  json rows = json::array();
  for (const auto& r : reports) rows.push_back(ReportJson(r)["aggregate"]);
  return {dir, {{"rows", std::move(rows)}}};
}

}  // namespace rahand
