#pragma once

#include <array>
#include <optional>
#include <vector>

#include "rahand/image.hpp"
#include "rahand/joints.hpp"
#include "rahand/manifest.hpp"
#include "rahand/nn/tensor.hpp"

namespace rahand {

enum class PaddingPolicy { kZeroPad, kClamp };

struct CropSpec {
  int patch_size_px = 64;
  int model_input_px = 224;
  PaddingPolicy padding_policy = PaddingPolicy::kZeroPad;

  void Validate() const;
};

// Network-ready inputs for one hand image. Tensors are C x (H*W); raw
// samples hold intensities in [0, 1] and normalized samples hold
// (v - mean[c]) / std[c].
struct PreparedSample {
  nn::Tensor global_image;
  std::vector<nn::Tensor> local_patches;
  std::vector<JointId> joint_ids;
  std::vector<std::optional<int>> labels;

  size_t size() const { return joint_ids.size(); }
};

// Source of landmarks and foreground masks. The manifest-backed provider
// reads both from the manifest; a live detector can be substituted.
class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual std::array<Point, kNumJoints> Landmarks(const HandImageRecord& record,
                                                  const Image& image) const = 0;
  // nullopt means "no mask": every pixel is foreground.
  virtual std::optional<Image> Mask(const HandImageRecord& record,
                                    const DatasetManifest& manifest) const = 0;
};

class ManifestLandmarkProvider final : public LandmarkProvider {
 public:
  std::array<Point, kNumJoints> Landmarks(const HandImageRecord& record,
                                          const Image& image) const override;
  std::optional<Image> Mask(const HandImageRecord& record,
                            const DatasetManifest& manifest) const override;
};

// Zeroes every channel where mask == 0.
Image ApplyMask(const Image& image, const Image& mask);

// Planar [0, 1] tensor from an 8-bit image.
nn::Tensor ToTensor(const Image& image);

// Half-pixel-centre bilinear resampling (edge samples clamp).
nn::Tensor ResizeBilinear(const nn::Tensor& input, int out_height, int out_width);

// Square window rows/cols [c - s/2, c + s/2) around each active landmark,
// taken from the original-resolution image, then resized to
// model_input_px.
std::vector<nn::Tensor> CropJointPatches(const Image& image,
                                         const std::array<Point, kNumJoints>& landmarks,
                                         const CropSpec& spec,
                                         const std::vector<JointId>& active_joints);

// Window only, before resizing; exposed for geometry checks.
nn::Tensor CropWindow(const Image& image, Point center, int size, PaddingPolicy policy);

// Mask, resize, crop. Intensities stay in [0, 1]; see Normalize().
PreparedSample PrepareSample(const HandImageRecord& record, const DatasetManifest& manifest,
                             const CropSpec& spec, const LandmarkProvider* provider = nullptr);
PreparedSample PrepareSample(const Image& image, const std::optional<Image>& mask,
                             const HandImageRecord& record, const std::vector<JointId>& active,
                             const CropSpec& spec);

// Per-channel affine normalization constants, fitted on a training split.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats ComputeNormStats(const std::vector<const PreparedSample*>& samples);
NormStats IdentityNormStats(int channels);
nn::Tensor Normalize(const nn::Tensor& raw, const NormStats& stats);
nn::Tensor Denormalize(const nn::Tensor& normalized, const NormStats& stats);
PreparedSample Normalize(const PreparedSample& raw, const NormStats& stats);

}  // namespace rahand
