#include "rahand/joints.hpp"

#include "rahand/error.hpp"

namespace rahand {

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kCheckpoint: return "checkpoint";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kUndefinedLoss: return "undefined_loss";
  }
  return "unknown";
}

namespace {

struct JointRow {
  Finger finger;
  JointLevel level;
};

constexpr std::array<JointRow, kNumJoints> kTable = {{
    {Finger::kThumb, JointLevel::kMCP},
    {Finger::kIndex, JointLevel::kMCP},
    {Finger::kMiddle, JointLevel::kMCP},
    {Finger::kRing, JointLevel::kMCP},
    {Finger::kLittle, JointLevel::kMCP},
    {Finger::kThumb, JointLevel::kPIP},
    {Finger::kIndex, JointLevel::kPIP},
    {Finger::kMiddle, JointLevel::kPIP},
    {Finger::kRing, JointLevel::kPIP},
    {Finger::kLittle, JointLevel::kPIP},
    {Finger::kIndex, JointLevel::kDIP},
    {Finger::kMiddle, JointLevel::kDIP},
    {Finger::kRing, JointLevel::kDIP},
    {Finger::kLittle, JointLevel::kDIP},
}};

}  // namespace

JointId JointId::FromIndex(int index) {
  if (index < 0 || index >= kNumJoints) {
    throw ValidationError("joint index out of range: " + std::to_string(index));
  }
  return JointId(index);
}

std::optional<JointId> JointId::Make(Finger finger, JointLevel level) {
  for (int i = 0; i < kNumJoints; ++i) {
    if (kTable[i].finger == finger && kTable[i].level == level) return JointId(i);
  }
  return std::nullopt;
}

Finger JointId::finger() const { return kTable[index_].finger; }
JointLevel JointId::level() const { return kTable[index_].level; }

std::string JointId::Name() const {
  return std::string(FingerName(finger())) + "_" + std::string(LevelName(level()));
}

const std::array<JointId, kNumJoints>& AllJoints() {
  static const std::array<JointId, kNumJoints> joints = [] {
    std::array<JointId, kNumJoints> out{};
    for (int i = 0; i < kNumJoints; ++i) out[i] = JointId::FromIndex(i);
    return out;
  }();
  return joints;
}

std::string_view FingerName(Finger finger) {
  switch (finger) {
    case Finger::kThumb: return "thumb";
    case Finger::kIndex: return "index";
    case Finger::kMiddle: return "middle";
    case Finger::kRing: return "ring";
    case Finger::kLittle: return "little";
  }
  return "?";
}

std::string_view LevelName(JointLevel level) {
  switch (level) {
    case JointLevel::kMCP: return "MCP";
    case JointLevel::kPIP: return "PIP";
    case JointLevel::kDIP: return "DIP";
  }
  return "?";
}

JointLevel ParseLevel(std::string_view name) {
  if (name == "MCP") return JointLevel::kMCP;
  if (name == "PIP") return JointLevel::kPIP;
  if (name == "DIP") return JointLevel::kDIP;
  throw SchemaError("unknown joint level '" + std::string(name) + "'");
}

std::vector<JointId> ActiveJoints(const std::set<JointLevel>& exclusions) {
  std::vector<JointId> out;
  for (JointId j : AllJoints()) {
    if (!exclusions.contains(j.level())) out.push_back(j);
  }
  return out;
}

}  // namespace rahand
