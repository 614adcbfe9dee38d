#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

#include "rahand/image.hpp"
#include "rahand/joints.hpp"
#include "rahand/manifest.hpp"

namespace rahand {

struct SynthConfig {
  int n_patients = 68;
  int images_per_patient = 2;
  int image_width = 384;
  int image_height = 384;
  std::array<double, kNumJoints> prevalence = UniformPrevalence(0.05);
  double marker_intensity = 0.5;  // (0, 1]
  int marker_radius_px = 6;
  double background_clutter = 0.3;  // [0, 1]
  std::uint64_t seed = 0;
  // Integer landmark offsets per image have norm <= landmark_jitter_px / 2,
  // so two images of one hand differ by at most landmark_jitter_px.
  double landmark_jitter_px = 2.0;
  // Fraction of active-joint labels withheld from the manifest.
  double unlabeled_fraction = 0.0;
  std::set<JointLevel> joint_exclusions = {JointLevel::kDIP};

  static std::array<double, kNumJoints> UniformPrevalence(double p);
  void Validate() const;
};

struct RenderedHand {
  Image image;  // RGB
  Image mask;   // gray, 0 or 255
  std::array<Point, kNumJoints> landmarks;
};

// Per-patient base geometry (finger lengths, angles, skin tone) comes from
// patient_seed; image_seed drives jitter, clutter and noise. No random draw
// depends on `labels`, so two renders that differ only in labels differ
// only inside the marker disks of the joints whose label changed.
// `labels[j]` = 1 paints a marker at joint j; excluded joints are ignored.
RenderedHand RenderHand(std::uint64_t patient_seed, std::uint64_t image_seed, HandSide side,
                        const std::array<int, kNumJoints>& labels, const SynthConfig& config);

// One dataset record, rendered in memory. Index runs over
// n_patients * images_per_patient.
struct SynthRecord {
  HandImageRecord record;               // paths relative to the dataset root
  std::array<int, kNumJoints> truth{};  // true marker state (0 for excluded joints)
  RenderedHand hand;
};

SynthRecord RenderRecord(const SynthConfig& config, int index);

// Writes images/, masks/, manifest.jsonl and ledger.jsonl under out_dir and
// returns the manifest (base_dir = out_dir).
DatasetManifest GenerateDataset(const SynthConfig& config, const std::filesystem::path& out_dir);

// Masked hand images for self-supervised pretraining.
std::vector<Image> GenerateCorpus(const SynthConfig& config);

// Reference detector: mean redness R - (G + B) / 2 inside the marker disk
// minus the mean over the annulus r+1..2r restricted to the hand mask, in
// [0, 1] units. A marker is reported when the contrast reaches
// marker_intensity / 2.
double MarkerContrast(const Image& image, const Image& mask, Point center, int radius);
bool DetectMarker(const Image& image, const Image& mask, Point center, const SynthConfig& config);

}  // namespace rahand
