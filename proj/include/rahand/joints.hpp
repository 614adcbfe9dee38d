#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rahand {

enum class Finger : std::uint8_t { kThumb, kIndex, kMiddle, kRing, kLittle };
enum class JointLevel : std::uint8_t { kMCP, kPIP, kDIP };

inline constexpr int kNumJoints = 14;
inline constexpr int kNumFingers = 5;

// Canonical ordering of the 14-joint skeleton:
//   0..4   MCP  thumb, index, middle, ring, little
//   5..9   PIP  thumb (interphalangeal), index, middle, ring, little
//   10..13 DIP  index, middle, ring, little
// The thumb has no DIP, which gives 5 + 5 + 4.
class JointId {
 public:
  constexpr JointId() = default;

  static JointId FromIndex(int index);
  static std::optional<JointId> Make(Finger finger, JointLevel level);

  constexpr int index() const { return index_; }
  Finger finger() const;
  JointLevel level() const;
  std::string Name() const;

  friend constexpr bool operator==(JointId a, JointId b) { return a.index_ == b.index_; }
  friend constexpr auto operator<=>(JointId a, JointId b) { return a.index_ <=> b.index_; }

 private:
  explicit constexpr JointId(int index) : index_(index) {}
  int index_ = 0;
};

// All 14 joints in canonical order.
const std::array<JointId, kNumJoints>& AllJoints();

std::string_view FingerName(Finger finger);
std::string_view LevelName(JointLevel level);
JointLevel ParseLevel(std::string_view name);

// Joints remaining after dropping every joint whose level is excluded, in
// canonical order.
std::vector<JointId> ActiveJoints(const std::set<JointLevel>& exclusions);

}  // namespace rahand
