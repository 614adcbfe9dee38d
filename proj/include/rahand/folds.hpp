#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rahand/manifest.hpp"

namespace rahand {

// Patient-disjoint k-fold assignment. Fold k's test partition is fold k and
// its training partition is every other fold.
struct FoldPlan {
  int n_folds = 5;
  std::map<std::string, int> assignments;  // patient_id -> fold
  std::uint64_t seed = 0;

  // Nominal train share, (n_folds - 1) / n_folds.
  double train_fraction() const { return static_cast<double>(n_folds - 1) / n_folds; }

  std::vector<std::string> TestPatients(int fold) const;
  std::vector<std::string> TrainPatients(int fold) const;
  // Record indices of `manifest` falling in the fold's test / train partition.
  std::vector<size_t> TestRecords(const DatasetManifest& manifest, int fold) const;
  std::vector<size_t> TrainRecords(const DatasetManifest& manifest, int fold) const;

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

FoldPlan MakeFolds(const DatasetManifest& manifest, int n_folds, std::uint64_t seed);
FoldPlan MakeFolds(const std::vector<std::string>& patients, int n_folds, std::uint64_t seed);

std::string SerializeFoldPlan(const FoldPlan& plan);
FoldPlan ParseFoldPlan(const std::string& text);
void SaveFoldPlan(const std::filesystem::path& path, const FoldPlan& plan);
FoldPlan LoadFoldPlan(const std::filesystem::path& path);

}  // namespace rahand
