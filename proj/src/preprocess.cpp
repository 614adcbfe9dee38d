#include "rahand/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "rahand/error.hpp"

namespace rahand {

void CropSpec::Validate() const {
  if (patch_size_px <= 0 || model_input_px <= 0) {
    throw ConfigError("crop sizes must be positive");
  }
  if (patch_size_px > model_input_px) {
    throw ConfigError("patch_size_px (" + std::to_string(patch_size_px) +
                      ") exceeds model_input_px (" + std::to_string(model_input_px) + ")");
  }
}

std::array<Point, kNumJoints> ManifestLandmarkProvider::Landmarks(const HandImageRecord& record,
                                                                  const Image&) const {
  return record.landmarks;
}

std::optional<Image> ManifestLandmarkProvider::Mask(const HandImageRecord& record,
                                                    const DatasetManifest& manifest) const {
  if (!record.mask_path) return std::nullopt;
  return ReadPng(manifest.Resolve(*record.mask_path));
}

Image ApplyMask(const Image& image, const Image& mask) {
  if (mask.width != image.width || mask.height != image.height) {
    throw ValidationError("mask is " + std::to_string(mask.width) + "x" +
                          std::to_string(mask.height) + " but image is " +
                          std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  Image out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (mask.at(x, y, 0) > 0) continue;
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = 0;
    }
  }
  return out;
}

nn::Tensor ToTensor(const Image& image) {
  nn::Tensor t(image.channels, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) t.at(c, y, x) = image.at(x, y, c) / 255.0;
    }
  }
  return t;
}

nn::Tensor ResizeBilinear(const nn::Tensor& input, int out_height, int out_width) {
  const int in_h = input.height, in_w = input.width;
  if (in_h == out_height && in_w == out_width) return input;
  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - i0};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(in_h, out_height);
  const std::vector<Tap> tx = taps(in_w, out_width);
  nn::Tensor out(input.channels(), out_height, out_width);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < out_height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < out_width; ++x) {
        const Tap& b = tx[x];
        const double top = input.at(c, a.i0, b.i0) * (1 - b.w1) + input.at(c, a.i0, b.i1) * b.w1;
        const double bot = input.at(c, a.i1, b.i0) * (1 - b.w1) + input.at(c, a.i1, b.i1) * b.w1;
        out.at(c, y, x) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return out;
}

nn::Tensor CropWindow(const Image& image, Point center, int size, PaddingPolicy policy) {
  nn::Tensor patch(image.channels, size, size);
  const int x0 = center.x - size / 2;
  const int y0 = center.y - size / 2;
  for (int dy = 0; dy < size; ++dy) {
    int y = y0 + dy;
    const bool y_in = y >= 0 && y < image.height;
    if (!y_in && policy == PaddingPolicy::kZeroPad) continue;
    y = std::clamp(y, 0, image.height - 1);
    for (int dx = 0; dx < size; ++dx) {
      int x = x0 + dx;
      const bool x_in = x >= 0 && x < image.width;
      if (!x_in && policy == PaddingPolicy::kZeroPad) continue;
      x = std::clamp(x, 0, image.width - 1);
      for (int c = 0; c < image.channels; ++c) patch.at(c, dy, dx) = image.at(x, y, c) / 255.0;
    }
  }
  return patch;
}

std::vector<nn::Tensor> CropJointPatches(const Image& image,
                                         const std::array<Point, kNumJoints>& landmarks,
                                         const CropSpec& spec,
                                         const std::vector<JointId>& active_joints) {
  std::vector<nn::Tensor> patches;
  patches.reserve(active_joints.size());
  for (JointId j : active_joints) {
    nn::Tensor window = CropWindow(image, landmarks[j.index()], spec.patch_size_px, spec.padding_policy);
    patches.push_back(ResizeBilinear(window, spec.model_input_px, spec.model_input_px));
  }
  return patches;
}

PreparedSample PrepareSample(const Image& image, const std::optional<Image>& mask,
                             const HandImageRecord& record, const std::vector<JointId>& active,
                             const CropSpec& spec) {
  spec.Validate();
  const Image masked = mask ? ApplyMask(image, *mask) : image;
  PreparedSample sample;
  sample.global_image = ResizeBilinear(ToTensor(masked), spec.model_input_px, spec.model_input_px);
  sample.local_patches = CropJointPatches(masked, record.landmarks, spec, active);
  sample.joint_ids = active;
  for (JointId j : active) sample.labels.push_back(record.labels[j.index()]);
  return sample;
}

PreparedSample PrepareSample(const HandImageRecord& record, const DatasetManifest& manifest,
                             const CropSpec& spec, const LandmarkProvider* provider) {
  static const ManifestLandmarkProvider kDefaultProvider;
  if (!provider) provider = &kDefaultProvider;
  const Image image = ReadPng(manifest.Resolve(record.image_path));
  HandImageRecord located = record;
  located.landmarks = provider->Landmarks(record, image);
  return PrepareSample(image, provider->Mask(record, manifest), located, manifest.active_joints(),
                       spec);
}

NormStats IdentityNormStats(int channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

NormStats ComputeNormStats(const std::vector<const PreparedSample*>& samples) {
  if (samples.empty()) throw ConfigError("cannot fit normalization on an empty split");
  const int channels = samples.front()->global_image.channels();
  std::vector<double> sum(channels, 0.0), sum_sq(channels, 0.0);
  double count = 0;
  auto accumulate = [&](const nn::Tensor& t) {
    for (int c = 0; c < channels; ++c) {
      sum[c] += t.data.row(c).sum();
      sum_sq[c] += t.data.row(c).squaredNorm();
    }
    count += t.pixels();
  };
  for (const PreparedSample* s : samples) {
    accumulate(s->global_image);
    for (const auto& p : s->local_patches) accumulate(p);
  }
  NormStats stats;
  for (int c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(sum_sq[c] / count - mean * mean, 0.0);
    stats.mean.push_back(mean);
    stats.std.push_back(std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

nn::Tensor Normalize(const nn::Tensor& raw, const NormStats& stats) {
  nn::Tensor out = raw;
  for (int c = 0; c < raw.channels(); ++c) {
    out.data.row(c) = (raw.data.row(c).array() - stats.mean[c]) / stats.std[c];
  }
  return out;
}

nn::Tensor Denormalize(const nn::Tensor& normalized, const NormStats& stats) {
  nn::Tensor out = normalized;
  for (int c = 0; c < normalized.channels(); ++c) {
    out.data.row(c) = normalized.data.row(c).array() * stats.std[c] + stats.mean[c];
  }
  return out;
}

PreparedSample Normalize(const PreparedSample& raw, const NormStats& stats) {
  PreparedSample out;
  out.global_image = Normalize(raw.global_image, stats);
  for (const auto& p : raw.local_patches) out.local_patches.push_back(Normalize(p, stats));
  out.joint_ids = raw.joint_ids;
  out.labels = raw.labels;
  return out;
}

}  // namespace rahand
