// rahand: synth / pretrain / finetune / evaluate / crossval / ablate.
//
//   rahand crossval --config exp.json --set finetune.epochs=40 --run-id try1
//
// Success prints one JSON line on stdout. Failure prints one JSON line
// {"error", "kind", "subcommand", "stage", "locus"} on stderr and exits 1.

#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rahand/config.hpp"
#include "rahand/pipeline.hpp"

namespace {

using nlohmann::json;
using rahand::ExperimentConfig;
using StageFn = rahand::StageResult (*)(const ExperimentConfig&, const std::filesystem::path&);

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string run_id;
  std::string run_root;
  long long seed = -1;
  bool test_mode = false;
};

void Fail(const std::string& message, const std::string& kind, const std::string& sub, const std::string& stage,
          const std::string& locus) {
  std::cerr << json{{"error", message}, {"kind", kind}, {"subcommand", sub}, {"stage", stage}, {"locus", locus}}
                   .dump(-1, ' ', false, json::error_handler_t::replace)
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-joint inflammation detection pipeline on hand images"};
  app.require_subcommand(1);

  Common opt;
  const std::map<std::string, std::pair<StageFn, std::string>> stages = {
      {"synth", {rahand::RunSynth, "generate a labeled synthetic hand dataset"}},
      {"pretrain", {rahand::RunPretrain, "self-distillation pretraining of the encoders"}},
      {"finetune", {rahand::RunFinetune, "fine-tune FFNs and head on the training folds"}},
      {"evaluate", {rahand::RunEvaluate, "score a fine-tuned model on the held-out fold"}},
      {"crossval", {rahand::RunCrossval, "k-fold cross-validation of one variant"}},
      {"ablate", {rahand::RunAblate, "cross-validate every ablation variant"}},
  };
  std::string chosen;
  for (const auto& [name, entry] : stages) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("-c,--config", opt.config_file, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "override, e.g. finetune.epochs=40 (repeatable)");
    sub->add_option("--run-id", opt.run_id, "run directory name");
    sub->add_option("--seed", opt.seed, "root seed")->check(CLI::NonNegativeNumber);
    sub->add_flag("--test-mode", opt.test_mode, "timing-free, byte-reproducible outputs");
    sub->add_option("--run-root", opt.run_root, "parent of run directories (default $RAHAND_RUN_ROOT or runs)");
    sub->callback([&chosen, name = name] { chosen = name; });
  }
  CLI::App* show = app.add_subcommand("config", "print the resolved config and exit");
  show->add_option("-c,--config", opt.config_file)->check(CLI::ExistingFile);
  show->add_option("--set", opt.overrides);
  show->callback([&chosen] { chosen = "config"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    Fail(e.what(), "usage", chosen, "parse_args", "");
    return 2;
  }

  try {
    std::vector<std::string> overrides = opt.overrides;
    if (!opt.run_id.empty()) overrides.push_back("run_id=\"" + opt.run_id + "\"");
    if (opt.seed >= 0) overrides.push_back("seed=" + std::to_string(opt.seed));
    if (opt.test_mode) overrides.push_back("test_mode=true");
    ExperimentConfig config;
    try {
      config = rahand::ResolveConfig(opt.config_file, overrides);
    } catch (const rahand::Error& e) {
      throw rahand::StageError(e.kind(), e.what(), "config", opt.config_file);
    }
    if (chosen == "config") {
      std::cout << rahand::ConfigToJson(config).dump(2) << "\n";
      return 0;
    }
    const std::filesystem::path root = opt.run_root.empty() ? rahand::DefaultRunRoot() : std::filesystem::path(opt.run_root);
    const rahand::StageResult r = stages.at(chosen).first(config, root);
    std::cout << json{{"subcommand", chosen}, {"dir", r.dir.string()}, {"summary", r.summary}}.dump() << "\n";
    return 0;
  } catch (const rahand::StageError& e) {
    Fail(e.what(), rahand::ErrorKindName(e.kind()), chosen, e.stage(), e.locus());
  } catch (const rahand::Error& e) {
    Fail(e.what(), rahand::ErrorKindName(e.kind()), chosen, "", "");
  } catch (const std::exception& e) {
    Fail(e.what(), "internal", chosen, "", "");
  }
  return 1;
}
