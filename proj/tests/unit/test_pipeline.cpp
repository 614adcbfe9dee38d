#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "rahand/config.hpp"
#include "rahand/crossval.hpp"
#include "rahand/error.hpp"
#include "rahand/pipeline.hpp"

using namespace rahand;
using nlohmann::json;

namespace {

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Seconds-scale end-to-end configuration.
ExperimentConfig Tiny() {
  ExperimentConfig c = ExperimentConfig::Defaults();
  c.test_mode = true;
  c.synth.n_patients = 8;
  c.synth.image_width = c.synth.image_height = 192;
  c.synth.marker_radius_px = 5;
  c.synth.prevalence = SynthConfig::UniformPrevalence(0.2);
  c.data.corpus_patients = 6;
  c.data.n_folds = 2;
  c.preprocess.patch_size_px = 32;
  c.preprocess.model_input_px = 32;
  c.model.feature_dim = 16;
  c.model.ffn_dim = 8;
  c.pretrain.epochs = 1;
  c.pretrain.batch_size = 4;
  c.pretrain.global_crop_px = 32;
  c.pretrain.local_crop_px = 16;
  c.pretrain.n_prototypes = 32;
  c.pretrain.head_hidden_dim = 16;
  c.pretrain.head_bottleneck_dim = 8;
  c.pretrain.probe_batch = 8;
  c.finetune.train.epochs = 3;
  c.eval.variants = {"ours", "no_focal"};
  c.Validate();
  return c;
}

}  // namespace

TEST_CASE("config: defaults round-trip through JSON") {
  const ExperimentConfig d = ExperimentConfig::Defaults();
  const json j = ConfigToJson(d);
  CHECK(ConfigToJson(ConfigFromJson(j)) == j);
  CHECK(j["finetune"]["gamma"] == 2.0);
  CHECK(j["eval"]["threshold"] == 0.5);
  CHECK(j["pretrain"]["teacher_temp"] == 0.04);
}

TEST_CASE("config: file values beat defaults, overrides beat the file") {
  testing::TempDir dir("config");
  const auto file = dir.path() / "exp.json";
  std::ofstream(file) << R"({
    // comments are allowed
    "seed": 7,
    "finetune": {"epochs": 12, "learning_rate": 0.001},
    "synth": {"prevalence": 0.1}
  })";
  const ExperimentConfig c = ResolveConfig(file, {"finetune.epochs=40", "run_id=trial", "eval.variant=no_focal"});
  CHECK(c.seed == 7);
  CHECK(c.finetune.train.epochs == 40);
  CHECK(c.finetune.train.learning_rate == 0.001);
  CHECK(c.synth.prevalence[0] == 0.1);
  CHECK(c.run_id == "trial");
  CHECK(ParseVariant(c.eval.variant) == Variant::kNoFocal);
  CHECK(ResolveConfig("", {}).finetune.train.epochs == ExperimentConfig::Defaults().finetune.train.epochs);
}

TEST_CASE("config: unknown keys, wrong types and bad values are rejected") {
  json tree = ConfigToJson(ExperimentConfig::Defaults());
  CHECK_THROWS_AS(ApplyOverride(tree, "no_equals_sign"), ConfigError);
  try {
    ResolveConfig("", {"finetune.lr=1"});
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("finetune.lr") != std::string::npos);
  }
  CHECK_THROWS_AS(ResolveConfig("", {"finetune.epochs=\"many\""}), SchemaError);
  CHECK_THROWS_AS(ResolveConfig("", {"finetune.loss=hinge"}), ConfigError);
  CHECK_THROWS_AS(ResolveConfig("", {"data.n_folds=1"}), ConfigError);
  CHECK_THROWS_AS(ResolveConfig("", {"synth.prevalence=[0.1, 0.2]"}), SchemaError);
}

TEST_CASE("config: stage seeds differ by stage and follow the root seed") {
  ExperimentConfig a = ExperimentConfig::Defaults(), b = a;
  b.seed = 1;
  CHECK(StageSeed(a, "synth") != StageSeed(a, "pretrain"));
  CHECK(StageSeed(a, "synth") != StageSeed(b, "synth"));
  CHECK(StageSeed(a, "finetune") == StageSeed(ExperimentConfig::Defaults(), "finetune"));
}

TEST_CASE("crossval: variant names and the ablation table layout") {
  for (Variant v : AllVariants()) {
    CHECK(ParseVariant(VariantName(v)) == v);
    CHECK(ParseVariant(VariantLabel(v)) == v);
  }
  CHECK(NeedsPretrainedEncoders(Variant::kOurs));
  CHECK_FALSE(NeedsPretrainedEncoders(Variant::kNoPretrain));
  EvalReport r;
  r.variant_name = "ours";
  r.variant_label = VariantLabel(Variant::kOurs);
  r.aggregate = {0.5, 0.25, 1.0 / 3, 0.6};
  const std::string t = AblationTable({r});
  CHECK(t.substr(0, t.find('\n')) == "variant\trecall\tprecision\tf1\tgmean");
}

TEST_CASE("pipeline: tiny crossval writes the run layout and is byte-reproducible") {
  testing::TempDir root("pipeline");
  ExperimentConfig c = Tiny();
  c.run_id = "a";
  const StageResult ra = RunCrossval(c, root.path());
  c.run_id = "b";
  const StageResult rb = RunCrossval(c, root.path());
  for (const char* f : {"aggregate.json", "folds.tsv", "fold_0.json", "fold_1.json", "folds.json",
                        "provenance.json", "resolved_config.json"}) {
    INFO(f);
    REQUIRE(std::filesystem::exists(ra.dir / f));
  }
  CHECK(Slurp(ra.dir / "aggregate.json") == Slurp(rb.dir / "aggregate.json"));
  CHECK(std::filesystem::exists(root.path() / "a" / "synth" / "manifest.jsonl"));
  CHECK(std::filesystem::exists(root.path() / "a" / "pretrain" / "checkpoint.bin"));

  const json prov = json::parse(Slurp(ra.dir / "provenance.json"));
  CHECK(prov["subcommand"] == "crossval");
  CHECK_FALSE(prov.contains("wall_time_s"));
  for (const auto& [rel, sha] : prov["outputs"].items()) {
    if (std::filesystem::exists(ra.dir / rel)) CHECK(sha == Sha256File(ra.dir / rel));
  }

  const json agg = json::parse(Slurp(ra.dir / "aggregate.json"));
  for (const char* m : {"recall", "precision", "f1", "gmean"}) {
    const double v = agg["aggregate"][m];
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("pipeline: finetune, evaluate and ablate on a shared run") {
  testing::TempDir root("pipeline_stages");
  ExperimentConfig c = Tiny();
  c.run_id = "s";
  RunSynth(c, root.path());
  const StageResult ft = RunFinetune(c, root.path());
  CHECK(std::filesystem::exists(ft.dir / "model.bin"));
  CHECK(std::filesystem::exists(ft.dir / "log.jsonl"));
  const StageResult ev = RunEvaluate(c, root.path());
  CHECK(std::filesystem::exists(ev.dir / "report.json"));
  CHECK(std::filesystem::exists(ev.dir / "predictions.tsv"));
  const StageResult ab = RunAblate(c, root.path());
  const std::string table = Slurp(ab.dir / "ablation.tsv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  CHECK(std::filesystem::exists(ab.dir / "ablation.png"));
}

TEST_CASE("pipeline: failures carry stage and locus") {
  testing::TempDir root("pipeline_fail");
  ExperimentConfig c = Tiny();
  c.data.manifest = (root.path() / "missing.jsonl").string();
  try {
    RunCrossval(c, root.path());
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.kind() == ErrorKind::kIo);
    CHECK_FALSE(e.stage().empty());
  }

  std::filesystem::create_directories(root.path() / "bad");
  std::ofstream(root.path() / "bad" / "manifest.jsonl") << "{\"format\": \"nope\"}\n";
  c.data.manifest = (root.path() / "bad" / "manifest.jsonl").string();
  CHECK_THROWS_AS(RunCrossval(c, root.path()), StageError);
}
