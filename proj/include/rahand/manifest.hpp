#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rahand/joints.hpp"

namespace rahand {

enum class HandSide { kLeft, kRight };

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct HandImageRecord {
  std::string image_path;  // as written in the manifest, relative paths resolve against its directory
  std::string patient_id;
  HandSide hand_side = HandSide::kRight;
  int capture_week = 0;
  std::optional<std::string> mask_path;
  std::array<Point, kNumJoints> landmarks{};
  std::array<std::optional<int>, kNumJoints> labels{};

  friend bool operator==(const HandImageRecord&, const HandImageRecord&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct DatasetManifest {
  std::vector<HandImageRecord> records;
  std::set<JointLevel> joint_exclusions = {JointLevel::kDIP};
  int schema_version = kManifestSchemaVersion;
  // Directory that relative image/mask paths resolve against.
  std::filesystem::path base_dir;

  std::vector<JointId> active_joints() const { return ActiveJoints(joint_exclusions); }
  std::filesystem::path Resolve(const std::string& path) const;
  // Distinct patient ids, sorted.
  std::vector<std::string> Patients() const;
  // Labeled positives over active joints.
  int PositiveCount() const;
};

struct ManifestLoadOptions {
  // Check that each image exists and every landmark lies inside its bounds.
  bool check_images = true;
};

DatasetManifest LoadManifest(const std::filesystem::path& path,
                             const ManifestLoadOptions& options = {});
DatasetManifest ParseManifest(const std::string& text, const std::filesystem::path& base_dir,
                              const ManifestLoadOptions& options = {});

// Canonical text form: a header line then one compact JSON object per record.
std::string SerializeManifest(const DatasetManifest& manifest);
void SaveManifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Checks record-level invariants that do not need image files. `bounds`
// (width, height) enables the landmark range check.
void ValidateRecord(const HandImageRecord& record, const std::string& locus,
                    std::optional<std::pair<int, int>> bounds);

}  // namespace rahand
