#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "rahand/error.hpp"
#include "rahand/preprocess.hpp"
#include "rahand/synth.hpp"

using namespace rahand;

namespace {

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthConfig Small(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.image_width = 192;
  c.image_height = 192;
  c.marker_radius_px = 5;
  return c;
}

}  // namespace

TEST_CASE("synth: config validation") {
  SynthConfig c;
  CHECK_NOTHROW(c.Validate());
  c.marker_radius_px = 96;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
  c = SynthConfig{};
  c.prevalence[3] = 1.5;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
  c = SynthConfig{};
  c.marker_intensity = 0;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
}

TEST_CASE("synth: 68 x 2 at 5% prevalence lands in the central 99% binomial interval") {
  testing::TempDir dir("synth_binom");
  SynthConfig c = Small(7);
  c.n_patients = 68;
  c.images_per_patient = 2;
  const DatasetManifest m = GenerateDataset(c, dir.path());
  REQUIRE(m.records.size() == 136);
  // Binomial(1360, 0.05): P(X <= 47) < 0.005 and P(X >= 91) < 0.005.
  const int positives = m.PositiveCount();
  CHECK(positives >= 48);
  CHECK(positives <= 90);

  // The manifest on disk loads and agrees with the ledger.
  const DatasetManifest loaded = LoadManifest(dir.path() / "manifest.jsonl");
  CHECK(loaded.records.size() == 136);
  CHECK(loaded.PositiveCount() == positives);
  std::ifstream ledger(dir.path() / "ledger.jsonl");
  std::string line;
  std::getline(ledger, line);
  CHECK(nlohmann::json::parse(line).at("format") == "rahand-synth-ledger");
  int ledger_positives = 0, markers = 0;
  while (std::getline(ledger, line)) {
    const auto row = nlohmann::json::parse(line);
    for (const auto& l : row.at("labels")) ledger_positives += l[1].get<int>();
    markers += static_cast<int>(row.at("markers").size());
  }
  CHECK(ledger_positives == positives);
  CHECK(markers == positives);

  // Masked background is exactly zero.
  for (int i = 0; i < 4; ++i) {
    const auto& r = loaded.records[i];
    const Image img = ReadPng(loaded.Resolve(r.image_path));
    const Image mask = ReadPng(loaded.Resolve(*r.mask_path));
    const Image masked = ApplyMask(img, mask);
    long background = 0;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (mask.at(x, y, 0) == 0) {
          for (int ch = 0; ch < 3; ++ch) background += masked.at(x, y, ch);
        }
      }
    }
    CHECK(background == 0);
  }
}

TEST_CASE("synth: same config twice gives byte-identical files") {
  testing::TempDir a("synth_det_a"), b("synth_det_b");
  SynthConfig c = Small(99);
  c.n_patients = 3;
  c.prevalence = SynthConfig::UniformPrevalence(0.4);
  GenerateDataset(c, a.path());
  GenerateDataset(c, b.path());
  int compared = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    REQUIRE(std::filesystem::exists(b.path() / rel));
    CHECK(Slurp(e.path()) == Slurp(b.path() / rel));
    ++compared;
  }
  CHECK(compared == 3 * 2 * 2 + 2);
}

TEST_CASE("synth: zero prevalence gives all-negative labels") {
  SynthConfig c = Small(5);
  c.n_patients = 4;
  c.prevalence = SynthConfig::UniformPrevalence(0.0);
  for (int i = 0; i < 8; ++i) {
    const SynthRecord r = RenderRecord(c, i);
    for (JointId j : ActiveJoints(c.joint_exclusions)) CHECK(r.record.labels[j.index()] == 0);
    for (JointId j : AllJoints()) {
      if (j.level() == JointLevel::kDIP) CHECK_FALSE(r.record.labels[j.index()].has_value());
    }
  }
}

TEST_CASE("synth: labels only change pixels inside the marker disks") {
  SynthConfig c = Small(3);
  c.background_clutter = 0.6;
  std::array<int, kNumJoints> off{}, on{};
  on.fill(1);
  const RenderedHand a = RenderHand(1234, 99, HandSide::kRight, off, c);
  const RenderedHand b = RenderHand(1234, 99, HandSide::kRight, on, c);
  CHECK(a.mask == b.mask);
  CHECK(a.landmarks == b.landmarks);
  const auto active = ActiveJoints(c.joint_exclusions);
  const int r = c.marker_radius_px;
  std::vector<int> changed_per_joint(kNumJoints, 0);
  int outside = 0;
  for (int y = 0; y < c.image_height; ++y) {
    for (int x = 0; x < c.image_width; ++x) {
      bool differs = false;
      for (int ch = 0; ch < 3; ++ch) differs |= a.image.at(x, y, ch) != b.image.at(x, y, ch);
      if (!differs) continue;
      bool inside = false;
      for (JointId j : active) {
        const Point p = a.landmarks[j.index()];
        if ((x - p.x) * (x - p.x) + (y - p.y) * (y - p.y) <= r * r) {
          inside = true;
          ++changed_per_joint[j.index()];
        }
      }
      outside += !inside;
    }
  }
  CHECK(outside == 0);
  for (JointId j : active) CHECK(changed_per_joint[j.index()] > r * r);
  for (JointId j : AllJoints()) {
    if (j.level() == JointLevel::kDIP) CHECK(changed_per_joint[j.index()] == 0);
  }
}

TEST_CASE("synth: landmarks of one patient stay within the jitter bound") {
  SynthConfig c = Small(11);
  c.n_patients = 5;
  c.images_per_patient = 4;
  for (int p = 0; p < c.n_patients; ++p) {
    std::vector<SynthRecord> recs;
    for (int k = 0; k < c.images_per_patient; ++k) recs.push_back(RenderRecord(c, p * c.images_per_patient + k));
    for (size_t a = 0; a < recs.size(); ++a) {
      for (size_t b = a + 1; b < recs.size(); ++b) {
        REQUIRE(recs[a].record.patient_id == recs[b].record.patient_id);
        if (recs[a].record.hand_side != recs[b].record.hand_side) continue;
        for (int j = 0; j < kNumJoints; ++j) {
          const Point u = recs[a].record.landmarks[j], v = recs[b].record.landmarks[j];
          CHECK(std::hypot(u.x - v.x, u.y - v.y) <= c.landmark_jitter_px + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("synth: reference detector recovers labels at zero clutter") {
  SynthConfig c;
  c.seed = 21;
  c.n_patients = 20;
  c.background_clutter = 0.0;
  c.prevalence = SynthConfig::UniformPrevalence(0.3);
  int correct = 0, total = 0;
  for (int i = 0; i < c.n_patients * c.images_per_patient; ++i) {
    const SynthRecord r = RenderRecord(c, i);
    for (JointId j : ActiveJoints(c.joint_exclusions)) {
      const bool detected = DetectMarker(r.hand.image, r.hand.mask, r.hand.landmarks[j.index()], c);
      correct += detected == (r.truth[j.index()] == 1);
      ++total;
    }
  }
  CHECK(total == 400);
  CHECK(correct >= 0.99 * total);
}

TEST_CASE("synth: unlabeled fraction withholds labels without touching truth") {
  SynthConfig c = Small(8);
  c.n_patients = 10;
  c.unlabeled_fraction = 0.5;
  int withheld = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    const SynthRecord r = RenderRecord(c, i);
    for (JointId j : ActiveJoints(c.joint_exclusions)) {
      withheld += !r.record.labels[j.index()].has_value();
      if (r.record.labels[j.index()]) CHECK(*r.record.labels[j.index()] == r.truth[j.index()]);
      ++total;
    }
  }
  CHECK(withheld > total / 4);
  CHECK(withheld < 3 * total / 4);
}
