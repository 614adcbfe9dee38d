#include "rahand/folds.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rahand/error.hpp"
#include "rahand/random.hpp"

namespace rahand {

using nlohmann::json;

FoldPlan MakeFolds(const std::vector<std::string>& patients, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("n_folds must be at least 2, got " + std::to_string(n_folds));
  std::vector<std::string> ids(patients.begin(), patients.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (static_cast<int>(ids.size()) < n_folds) {
    throw ConfigError("need at least " + std::to_string(n_folds) + " patients for " +
                      std::to_string(n_folds) + " folds, have " + std::to_string(ids.size()));
  }
  // Fisher-Yates with an explicit index draw; std::shuffle's algorithm is
  // library-defined and would make plans differ across standard libraries.
  Rng rng(DeriveSeed(seed, "folds"));
  for (size_t i = ids.size(); i > 1; --i) {
    const size_t j = rng() % i;
    std::swap(ids[i - 1], ids[j]);
  }
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  for (size_t i = 0; i < ids.size(); ++i) plan.assignments[ids[i]] = static_cast<int>(i % n_folds);
  return plan;
}

FoldPlan MakeFolds(const DatasetManifest& manifest, int n_folds, std::uint64_t seed) {
  return MakeFolds(manifest.Patients(), n_folds, seed);
}

std::vector<std::string> FoldPlan::TestPatients(int fold) const {
  std::vector<std::string> out;
  for (const auto& [pid, k] : assignments) {
    if (k == fold) out.push_back(pid);
  }
  return out;
}

std::vector<std::string> FoldPlan::TrainPatients(int fold) const {
  std::vector<std::string> out;
  for (const auto& [pid, k] : assignments) {
    if (k != fold) out.push_back(pid);
  }
  return out;
}

namespace {

std::vector<size_t> SelectRecords(const FoldPlan& plan, const DatasetManifest& manifest, int fold,
                                  bool test) {
  std::vector<size_t> out;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    auto it = plan.assignments.find(manifest.records[i].patient_id);
    if (it == plan.assignments.end()) {
      throw ConfigError("patient '" + manifest.records[i].patient_id + "' is not in the fold plan");
    }
    if ((it->second == fold) == test) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<size_t> FoldPlan::TestRecords(const DatasetManifest& manifest, int fold) const {
  return SelectRecords(*this, manifest, fold, true);
}

std::vector<size_t> FoldPlan::TrainRecords(const DatasetManifest& manifest, int fold) const {
  return SelectRecords(*this, manifest, fold, false);
}

std::string SerializeFoldPlan(const FoldPlan& plan) {
  json j = {{"n_folds", plan.n_folds},
            {"seed", plan.seed},
            {"train_fraction", plan.train_fraction()},
            {"assignments", plan.assignments}};
  return j.dump(2) + "\n";
}

FoldPlan ParseFoldPlan(const std::string& text) {
  FoldPlan plan;
  try {
    const json j = json::parse(text);
    plan.n_folds = j.at("n_folds").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.assignments = j.at("assignments").get<std::map<std::string, int>>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("fold plan: ") + e.what());
  }
  for (const auto& [pid, k] : plan.assignments) {
    if (k < 0 || k >= plan.n_folds) {
      throw ValidationError("fold plan: patient '" + pid + "' assigned to invalid fold " +
                            std::to_string(k));
    }
  }
  return plan;
}

void SaveFoldPlan(const std::filesystem::path& path, const FoldPlan& plan) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write fold plan '" + path.string() + "'");
  out << SerializeFoldPlan(plan);
}

FoldPlan LoadFoldPlan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open fold plan '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseFoldPlan(buffer.str());
}

}  // namespace rahand
