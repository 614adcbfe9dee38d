#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rahand/checkpoint.hpp"
#include "rahand/image.hpp"
#include "rahand/model.hpp"
#include "rahand/nn/layers.hpp"

namespace rahand {

struct DistillConfig {
  int n_prototypes = 256;  // K
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;
  double ema_momentum = 0.996;
  int n_global_crops = 2;
  int n_local_crops = 4;
  std::pair<double, double> global_crop_scale = {0.4, 1.0};
  std::pair<double, double> local_crop_scale = {0.05, 0.4};
  int global_crop_px = 64;
  int local_crop_px = 32;
  int epochs = 5;
  int batch_size = 16;
  double learning_rate = 1.5e-4;
  double weight_decay = 0.04;
  int warmup_steps = 10;  // linear learning-rate warmup
  int head_hidden_dim = 128;
  int head_bottleneck_dim = 64;
  // Standardize projection-head inputs per dimension with batch statistics
  // (no gradient through the statistics).
  bool head_batch_standardize = true;

  bool flip = true;
  bool color_jitter = true;
  double jitter_brightness = 0.4, jitter_contrast = 0.4, jitter_saturation = 0.2;
  double jitter_probability = 0.8;
  bool blur = true;
  double blur_probability = 0.5;
  double grayscale_probability = 0.2;

  // One run initializes both encoders; false runs two independent runs.
  bool shared_encoders = true;
  int probe_batch = 64;
  double collapse_threshold = 0.01;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct MultiCropViews {
  std::vector<nn::Tensor> global;
  std::vector<nn::Tensor> local;
};

// Random resized crops (area fraction from the scale range, aspect ratio
// log-uniform in [3/4, 4/3], whole image after 10 failed draws) followed by
// the enabled augmentations. Views hold [0, 1] intensities.
MultiCropViews MultiCrop(const Image& image, const DistillConfig& config, Rng& rng);

// 3-layer GELU MLP -> L2 normalize -> unit-row linear layer with K outputs.
nn::Sequential BuildProjectionHead(int in_dim, const DistillConfig& config, Rng& rng);

struct DistillState {
  nn::Sequential student_backbone, student_head;
  nn::Sequential teacher_backbone, teacher_head;
  Eigen::VectorXd center;
  long step = 0;

  DistillState(const EncoderSpec& spec, const DistillConfig& config, std::uint64_t seed);
};

struct DistillLossValue {
  double value = 0;
  std::vector<Eigen::VectorXd> student_grad;  // d value / d student logits, per view
};

// Mean over (teacher global view t, student view s != t) of
// H(softmax((teacher_t - center) / teacher_temp), log_softmax(student_s / student_temp)).
// Student views 0..G-1 are the global views seen by the teacher, in order.
// `step` only labels errors.
DistillLossValue DistillLoss(const std::vector<Eigen::VectorXd>& student_logits,
                             const std::vector<Eigen::VectorXd>& teacher_logits, const Eigen::VectorXd& center,
                             double student_temp, double teacher_temp, long step = -1);

// theta_t <- m theta_t + (1 - m) theta_s, parameter by parameter.
void EmaUpdate(nn::Sequential& teacher, nn::Sequential& student, double momentum);
// c <- lambda c + (1 - lambda) mean(batch).
void CenterUpdate(Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& batch_teacher_logits, double lambda);

// Mean over embedding dimensions of the per-dimension standard deviation
// across the probe batch.
double EmbeddingSpread(const nn::Sequential& backbone, const std::vector<nn::Tensor>& probes);

struct PretrainEpochLog {
  int epoch = 0;
  double loss = 0;
  double embedding_std = 0;
  double elapsed_s = 0;
  bool collapse_warning = false;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainEpochLog> log;
  double final_loss = 0;
  std::vector<std::string> warnings;

  std::string LogJsonLines() const;
};

PretrainResult PretrainLoop(const std::vector<Image>& corpus, const EncoderSpec& spec, const DistillConfig& config);

// Every *.png directly inside `dir`, sorted by file name.
std::vector<Image> LoadImageFolder(const std::filesystem::path& dir);

}  // namespace rahand
