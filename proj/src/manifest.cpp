#include "rahand/manifest.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rahand/error.hpp"
#include "rahand/image.hpp"

namespace rahand {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "rahand-manifest";

std::string SideName(HandSide side) { return side == HandSide::kLeft ? "left" : "right"; }

HandSide ParseSide(const std::string& s, const std::string& locus) {
  if (s == "left") return HandSide::kLeft;
  if (s == "right") return HandSide::kRight;
  throw SchemaError(locus + ": hand_side must be 'left' or 'right', got '" + s + "'");
}

template <typename T>
T Field(const json& obj, const char* key, const std::string& locus) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(locus + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError(locus + ": field '" + key + "' has the wrong type");
  }
}

HandImageRecord ParseRecord(const json& obj, const std::string& locus) {
  if (!obj.is_object()) throw SchemaError(locus + ": record is not an object");
  HandImageRecord rec;
  rec.image_path = Field<std::string>(obj, "image_path", locus);
  rec.patient_id = Field<std::string>(obj, "patient_id", locus);
  rec.hand_side = ParseSide(Field<std::string>(obj, "hand_side", locus), locus);
  rec.capture_week = Field<int>(obj, "capture_week", locus);
  if (auto it = obj.find("mask_path"); it != obj.end() && !it->is_null()) {
    rec.mask_path = Field<std::string>(obj, "mask_path", locus);
  }

  const std::string rec_locus = locus + " (" + rec.image_path + ")";
  std::array<bool, kNumJoints> seen{};
  for (const json& entry : Field<json>(obj, "landmarks", locus)) {
    if (!entry.is_array() || entry.size() != 3 || !entry[0].is_number_integer() ||
        !entry[1].is_number_integer() || !entry[2].is_number_integer()) {
      throw SchemaError(rec_locus + ": landmark entries must be [joint_index, x, y] integers");
    }
    const int j = entry[0].get<int>();
    if (j < 0 || j >= kNumJoints) {
      throw ValidationError(rec_locus + ": landmark joint index " + std::to_string(j) + " out of range");
    }
    if (seen[j]) {
      throw ValidationError(rec_locus + ": duplicate landmark for " + JointId::FromIndex(j).Name());
    }
    seen[j] = true;
    rec.landmarks[j] = {entry[1].get<int>(), entry[2].get<int>()};
  }
  for (int j = 0; j < kNumJoints; ++j) {
    if (!seen[j]) {
      throw ValidationError(rec_locus + ": missing landmark for joint " +
                            JointId::FromIndex(j).Name());
    }
  }

  if (auto it = obj.find("labels"); it != obj.end()) {
    for (const json& entry : *it) {
      if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_integer() ||
          !entry[1].is_number_integer()) {
        throw SchemaError(rec_locus + ": label entries must be [joint_index, label] integers");
      }
      const int j = entry[0].get<int>();
      const int label = entry[1].get<int>();
      if (j < 0 || j >= kNumJoints) {
        throw ValidationError(rec_locus + ": label joint index " + std::to_string(j) + " out of range");
      }
      if (rec.labels[j].has_value()) {
        throw ValidationError(rec_locus + ": duplicate label for " + JointId::FromIndex(j).Name());
      }
      rec.labels[j] = label;
    }
  }
  return rec;
}

json RecordToJson(const HandImageRecord& rec) {
  json landmarks = json::array();
  for (int j = 0; j < kNumJoints; ++j) {
    landmarks.push_back({j, rec.landmarks[j].x, rec.landmarks[j].y});
  }
  json labels = json::array();
  for (int j = 0; j < kNumJoints; ++j) {
    if (rec.labels[j]) labels.push_back({j, *rec.labels[j]});
  }
  json obj = {
      {"image_path", rec.image_path},
      {"patient_id", rec.patient_id},
      {"hand_side", SideName(rec.hand_side)},
      {"capture_week", rec.capture_week},
      {"landmarks", std::move(landmarks)},
      {"labels", std::move(labels)},
  };
  if (rec.mask_path) obj["mask_path"] = *rec.mask_path;
  return obj;
}

}  // namespace

std::filesystem::path DatasetManifest::Resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> DatasetManifest::Patients() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.patient_id);
  return {ids.begin(), ids.end()};
}

int DatasetManifest::PositiveCount() const {
  int count = 0;
  for (const auto& r : records) {
    for (JointId j : active_joints()) count += r.labels[j.index()].value_or(0) == 1;
  }
  return count;
}

void ValidateRecord(const HandImageRecord& record, const std::string& locus,
                    std::optional<std::pair<int, int>> bounds) {
  if (record.patient_id.empty()) throw ValidationError(locus + ": empty patient_id");
  if (record.capture_week < 0) throw ValidationError(locus + ": negative capture_week");
  for (JointId j : AllJoints()) {
    const auto& label = record.labels[j.index()];
    if (label && *label != 0 && *label != 1) {
      throw ValidationError(locus + ": label for " + j.Name() + " must be 0 or 1, got " +
                            std::to_string(*label));
    }
    if (bounds) {
      const Point p = record.landmarks[j.index()];
      if (p.x < 0 || p.y < 0 || p.x >= bounds->first || p.y >= bounds->second) {
        throw ValidationError(locus + ": landmark for " + j.Name() + " at (" + std::to_string(p.x) +
                              ", " + std::to_string(p.y) + ") lies outside the " +
                              std::to_string(bounds->first) + "x" + std::to_string(bounds->second) +
                              " image");
      }
    }
  }
}

DatasetManifest ParseManifest(const std::string& text, const std::filesystem::path& base_dir,
                              const ManifestLoadOptions& options) {
  DatasetManifest manifest;
  manifest.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::set<std::string> paths;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string locus = "line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(locus + ": " + e.what());
    }
    if (!have_header) {
      if (!obj.is_object() || Field<std::string>(obj, "format", locus) != kFormatTag) {
        throw SchemaError(locus + ": expected manifest header with format '" +
                          std::string(kFormatTag) + "'");
      }
      manifest.schema_version = Field<int>(obj, "schema_version", locus);
      if (manifest.schema_version != kManifestSchemaVersion) {
        throw SchemaError(locus + ": unsupported schema_version " +
                          std::to_string(manifest.schema_version));
      }
      manifest.joint_exclusions.clear();
      if (auto it = obj.find("joint_exclusions"); it != obj.end()) {
        for (const json& lv : *it) manifest.joint_exclusions.insert(ParseLevel(lv.get<std::string>()));
      }
      have_header = true;
      continue;
    }
    HandImageRecord rec = ParseRecord(obj, locus);
    const std::string rec_locus = locus + " (" + rec.image_path + ")";
    if (!paths.insert(rec.image_path).second) {
      throw ValidationError(rec_locus + ": duplicate image_path");
    }
    std::optional<std::pair<int, int>> bounds;
    if (options.check_images) {
      const ImageSize size = PngSize(manifest.Resolve(rec.image_path));
      bounds = std::make_pair(size.width, size.height);
    }
    ValidateRecord(rec, rec_locus, bounds);
    manifest.records.push_back(std::move(rec));
  }
  if (!have_header) throw SchemaError("manifest has no header line");
  // Every record has all 14 landmarks, so the active joint set is the same
  // for every record once exclusions apply.
  return manifest;
}

DatasetManifest LoadManifest(const std::filesystem::path& path, const ManifestLoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseManifest(buffer.str(), path.parent_path(), options);
}

std::string SerializeManifest(const DatasetManifest& manifest) {
  json levels = json::array();
  for (JointLevel lv : manifest.joint_exclusions) levels.push_back(std::string(LevelName(lv)));
  json header = {{"format", kFormatTag},
                 {"schema_version", manifest.schema_version},
                 {"joint_exclusions", std::move(levels)}};
  std::string out = header.dump() + "\n";
  for (const auto& rec : manifest.records) out += RecordToJson(rec).dump() + "\n";
  return out;
}

void SaveManifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << SerializeManifest(manifest);
  if (!out) throw IoError("short write on '" + path.string() + "'");
}

}  // namespace rahand
