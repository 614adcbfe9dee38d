#include "rahand/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rahand/error.hpp"
#include "rahand/finetune.hpp"
#include "rahand/nn/optim.hpp"
#include "rahand/preprocess.hpp"

namespace rahand {

void DistillConfig::Validate() const {
  if (n_prototypes < 1) throw ConfigError("n_prototypes must be positive");
  if (!(student_temp > 0) || !(teacher_temp > 0)) throw ConfigError("distillation temperatures must be > 0");
  if (!(center_momentum > 0 && center_momentum < 1)) throw ConfigError("center_momentum must be in (0, 1)");
  if (!(ema_momentum > 0 && ema_momentum < 1)) throw ConfigError("ema_momentum must be in (0, 1)");
  if (n_global_crops != 2) throw ConfigError("n_global_crops must be 2");
  if (n_local_crops < 0) throw ConfigError("n_local_crops must be >= 0");
  for (const auto& [lo, hi] : {global_crop_scale, local_crop_scale}) {
    if (!(lo > 0 && lo <= hi && hi <= 1)) throw ConfigError("crop scale ranges must satisfy 0 < lo <= hi <= 1");
  }
  if (global_crop_px < 8 || local_crop_px < 8) throw ConfigError("crop sizes must be at least 8 px");
  if (epochs < 1 || batch_size < 1) throw ConfigError("pretraining epochs and batch_size must be positive");
  if (!(learning_rate >= 0) || !(weight_decay >= 0)) throw ConfigError("learning_rate and weight_decay must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (head_hidden_dim < 1 || head_bottleneck_dim < 1) throw ConfigError("projection head widths must be positive");
  if (probe_batch < 1) throw ConfigError("probe_batch must be positive");
}

namespace {

nn::Tensor CropToTensor(const Image& image, int x0, int y0, int w, int h) {
  nn::Tensor t(image.channels, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < image.channels; ++c) t.at(c, y, x) = image.at(x0 + x, y0 + y, c) / 255.0;
    }
  }
  return t;
}

nn::Tensor RandomResizedCrop(const Image& image, std::pair<double, double> scale, int out_px, Rng& rng) {
  const double area = static_cast<double>(image.width) * image.height;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * Uniform(rng, scale.first, scale.second);
    const double ratio = std::exp(Uniform(rng, log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > image.width || h > image.height) continue;
    const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(image.width - w + 1));
    const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(image.height - h + 1));
    return ResizeBilinear(CropToTensor(image, x0, y0, w, h), out_px, out_px);
  }
  return ResizeBilinear(CropToTensor(image, 0, 0, image.width, image.height), out_px, out_px);
}

Eigen::RowVectorXd Luma(const nn::Tensor& t) {
  if (t.channels() < 3) return t.data.row(0);
  return 0.299 * t.data.row(0) + 0.587 * t.data.row(1) + 0.114 * t.data.row(2);
}

void GaussianBlur(nn::Tensor& t, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2 * sigma)));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= sum;
  const int H = t.height, W = t.width;
  nn::Tensor tmp = t;
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * t.at(c, y, std::clamp(x + i, 0, W - 1));
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, H - 1), x);
        t.at(c, y, x) = acc;
      }
    }
  }
}

void Augment(nn::Tensor& t, const DistillConfig& config, Rng& rng) {
  if (config.flip && Bernoulli(rng, 0.5)) {
    for (int c = 0; c < t.channels(); ++c) {
      for (int y = 0; y < t.height; ++y) {
        auto row = t.data.row(c).segment(static_cast<Eigen::Index>(y) * t.width, t.width);
        row = row.reverse().eval();
      }
    }
  }
  if (config.color_jitter && Bernoulli(rng, config.jitter_probability)) {
    const double b = Uniform(rng, 1 - config.jitter_brightness, 1 + config.jitter_brightness);
    const double k = Uniform(rng, 1 - config.jitter_contrast, 1 + config.jitter_contrast);
    const double s = Uniform(rng, 1 - config.jitter_saturation, 1 + config.jitter_saturation);
    t.data *= b;
    const double mean = Luma(t).mean();
    t.data = ((t.data.array() - mean) * k + mean).matrix();
    if (t.channels() >= 3) {
      const Eigen::RowVectorXd l = Luma(t);
      for (int c = 0; c < t.channels(); ++c) t.data.row(c) = l + s * (t.data.row(c) - l);
    }
    t.data = t.data.cwiseMax(0.0).cwiseMin(1.0);
  }
  if (t.channels() >= 3 && Bernoulli(rng, config.grayscale_probability)) {
    const Eigen::RowVectorXd l = Luma(t);
    for (int c = 0; c < t.channels(); ++c) t.data.row(c) = l;
  }
  if (config.blur && Bernoulli(rng, config.blur_probability)) GaussianBlur(t, Uniform(rng, 0.1, 1.5));
}

Eigen::VectorXd Softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd LogSoftmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  return (z.array() - m - std::log((z.array() - m).exp().sum())).matrix();
}

}  // namespace

MultiCropViews MultiCrop(const Image& image, const DistillConfig& config, Rng& rng) {
  if (std::min(image.width, image.height) < config.local_crop_px) {
    throw ValidationError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          ", smaller than the " + std::to_string(config.local_crop_px) + " px crop minimum");
  }
  MultiCropViews views;
  for (int i = 0; i < config.n_global_crops; ++i) {
    views.global.push_back(RandomResizedCrop(image, config.global_crop_scale, config.global_crop_px, rng));
    Augment(views.global.back(), config, rng);
  }
  for (int i = 0; i < config.n_local_crops; ++i) {
    views.local.push_back(RandomResizedCrop(image, config.local_crop_scale, config.local_crop_px, rng));
    Augment(views.local.back(), config, rng);
  }
  return views;
}

nn::Sequential BuildProjectionHead(int in_dim, const DistillConfig& config, Rng& rng) {
  nn::Sequential head;
  head.Add<nn::Linear>(in_dim, config.head_hidden_dim, rng)
      .Add<nn::Gelu>()
      .Add<nn::Linear>(config.head_hidden_dim, config.head_hidden_dim, rng)
      .Add<nn::Gelu>()
      .Add<nn::Linear>(config.head_hidden_dim, config.head_bottleneck_dim, rng)
      .Add<nn::L2Normalize>()
      .Add<nn::NormedLinear>(config.head_bottleneck_dim, config.n_prototypes, rng);
  return head;
}

DistillState::DistillState(const EncoderSpec& spec, const DistillConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  student_backbone = BuildEncoder(spec, rng);
  student_head = BuildProjectionHead(spec.feature_dim, config, rng);
  teacher_backbone = student_backbone;
  teacher_head = student_head;
  center = Eigen::VectorXd::Zero(config.n_prototypes);
}

DistillLossValue DistillLoss(const std::vector<Eigen::VectorXd>& student_logits,
                             const std::vector<Eigen::VectorXd>& teacher_logits, const Eigen::VectorXd& center,
                             double student_temp, double teacher_temp, long step) {
  const std::string where = step >= 0 ? " at step " + std::to_string(step) : "";
  const Eigen::Index K = center.size();
  if (teacher_logits.empty() || student_logits.size() < teacher_logits.size()) {
    throw ConfigError("distillation needs at least as many student views as teacher views");
  }
  for (const auto* set : {&student_logits, &teacher_logits}) {
    for (const auto& v : *set) {
      if (v.size() != K) throw ConfigError("logit width disagrees with the center width");
      if (!v.allFinite()) throw NumericalError("non-finite logits in distillation loss" + where);
    }
  }
  if (!center.allFinite()) throw NumericalError("non-finite center" + where);

  std::vector<Eigen::VectorXd> targets;
  for (const auto& t : teacher_logits) targets.push_back(Softmax((t - center) / teacher_temp));
  DistillLossValue out;
  int pairs = 0;
  for (size_t s = 0; s < student_logits.size(); ++s) {
    const Eigen::VectorXd log_q = LogSoftmax(student_logits[s] / student_temp);
    const Eigen::VectorXd q = log_q.array().exp();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(K);
    for (size_t t = 0; t < targets.size(); ++t) {
      if (t == s) continue;
      out.value -= targets[t].dot(log_q);
      g += (q - targets[t]) / student_temp;
      ++pairs;
    }
    out.student_grad.push_back(g);
  }
  if (pairs == 0) throw ConfigError("distillation has no (teacher, student) view pairs");
  out.value /= pairs;
  for (auto& g : out.student_grad) g /= pairs;
  return out;
}

void EmaUpdate(nn::Sequential& teacher, nn::Sequential& student, double momentum) {
  auto tp = teacher.Params();
  auto sp = student.Params();
  if (tp.size() != sp.size()) throw ConfigError("teacher and student differ in parameter count");
  for (size_t i = 0; i < tp.size(); ++i) {
    Eigen::MatrixXd& t = tp[i].param->value;
    const Eigen::MatrixXd& s = sp[i].param->value;
    if (t.rows() != s.rows() || t.cols() != s.cols()) {
      throw ConfigError("teacher and student shapes differ at " + tp[i].name);
    }
    t = momentum * t + (1.0 - momentum) * s;
  }
}

void CenterUpdate(Eigen::VectorXd& center, const std::vector<Eigen::VectorXd>& batch, double lambda) {
  if (batch.empty()) return;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(center.size());
  for (const auto& v : batch) mean += v;
  mean /= static_cast<double>(batch.size());
  center = lambda * center + (1.0 - lambda) * mean;
}

double EmbeddingSpread(const nn::Sequential& backbone, const std::vector<nn::Tensor>& probes) {
  if (probes.empty()) return 0.0;
  std::vector<Eigen::VectorXd> e;
  for (const auto& p : probes) e.push_back(backbone.Forward(p, nullptr).vector());
  const Eigen::Index D = e.front().size();
  const double n = static_cast<double>(e.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(D), sq = Eigen::VectorXd::Zero(D);
  for (const auto& v : e) {
    mean += v;
    sq += v.cwiseProduct(v);
  }
  mean /= n;
  const Eigen::VectorXd var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
  return var.cwiseSqrt().mean();
}

std::string PretrainResult::LogJsonLines() const {
  std::string out;
  for (const auto& e : log) {
    out += nlohmann::json{{"epoch", e.epoch},
                          {"loss", e.loss},
                          {"embedding_std", e.embedding_std},
                          {"collapse_warning", e.collapse_warning},
                          {"wall_time_s", e.elapsed_s}}
               .dump() +
           "\n";
  }
  return out;
}

namespace {

NormStats CorpusNormStats(const std::vector<Image>& corpus) {
  const int channels = corpus.front().channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  double n = 0;
  for (const Image& im : corpus) {
    for (size_t i = 0; i < im.pixels.size(); ++i) {
      const double v = im.pixels[i] / 255.0;
      sum[i % channels] += v;
      sq[i % channels] += v * v;
    }
    n += static_cast<double>(im.width) * im.height;
  }
  NormStats s;
  for (int c = 0; c < channels; ++c) {
    const double m = sum[c] / n;
    s.mean.push_back(m);
    s.std.push_back(std::max(std::sqrt(std::max(sq[c] / n - m * m, 0.0)), 1e-6));
  }
  return s;
}

// Per-dimension standardization with batch statistics held constant in the
// backward pass. Identity when disabled.
struct FeatureScaler {
  Eigen::VectorXd mean, inv_std;

  static FeatureScaler Fit(const std::vector<std::vector<Eigen::VectorXd>>& groups, bool enabled) {
    FeatureScaler s;
    if (!enabled) return s;
    double n = 0;
    for (const auto& g : groups) {
      for (const auto& v : g) {
        if (s.mean.size() == 0) {
          s.mean = Eigen::VectorXd::Zero(v.size());
          s.inv_std = Eigen::VectorXd::Zero(v.size());
        }
        s.mean += v;
        s.inv_std += v.cwiseAbs2();
        n += 1;
      }
    }
    if (n < 2) return FeatureScaler{};
    s.mean /= n;
    const Eigen::ArrayXd var = (s.inv_std.array() / n - s.mean.array().square()).max(0.0);
    s.inv_std = (var + 1e-5).rsqrt().matrix();
    return s;
  }

  Eigen::VectorXd Apply(const Eigen::VectorXd& v) const {
    if (mean.size() == 0) return v;
    return ((v - mean).array() * inv_std.array()).matrix();
  }
  Eigen::VectorXd Back(const Eigen::VectorXd& g) const {
    if (mean.size() == 0) return g;
    return (g.array() * inv_std.array()).matrix();
  }
};

struct SingleRun {
  nn::Sequential teacher_backbone;
  std::vector<PretrainEpochLog> log;
  double final_loss = 0;
};

SingleRun RunDistillation(const std::vector<Image>& corpus, const EncoderSpec& spec, const DistillConfig& config,
                          std::uint64_t seed, const NormStats& norm, const std::vector<nn::Tensor>& probes,
                          std::vector<std::string>& warnings, const std::string& label) {
  DistillState state(spec, config, DeriveSeed(seed, "init"));
  std::vector<nn::Param*> params;
  for (auto& np : state.student_backbone.Params()) params.push_back(np.param);
  for (auto& np : state.student_head.Params()) params.push_back(np.param);
  nn::Adam optimizer(params, {.learning_rate = config.learning_rate, .weight_decay = config.weight_decay});
  Rng crop_rng(DeriveSeed(seed, "crops"));
  Rng order_rng(DeriveSeed(seed, "order"));
  std::vector<size_t> order(corpus.size());
  const auto t0 = std::chrono::steady_clock::now();

  SingleRun run;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Shuffle(order, order_rng);
    double epoch_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      const double warm =
          config.warmup_steps > 0 ? std::min(1.0, (state.step + 1.0) / config.warmup_steps) : 1.0;
      optimizer.set_learning_rate(config.learning_rate * warm);
      state.student_backbone.ZeroGrad();
      state.student_head.ZeroGrad();
      const size_t n = end - start;
      const double inv_batch = 1.0 / static_cast<double>(n);

      // Backbone pass over every view of the batch first, so the head input
      // can be standardized with batch statistics.
      std::vector<std::vector<nn::Trace>> backbone_traces(n);
      std::vector<std::vector<Eigen::VectorXd>> sfeat(n), tfeat(n);
      for (size_t b = 0; b < n; ++b) {
        MultiCropViews views = MultiCrop(corpus[order[start + b]], config, crop_rng);
        std::vector<nn::Tensor> all;
        for (auto& v : views.global) all.push_back(Normalize(v, norm));
        for (auto& v : views.local) all.push_back(Normalize(v, norm));
        backbone_traces[b].resize(all.size());
        for (size_t v = 0; v < all.size(); ++v) {
          sfeat[b].push_back(state.student_backbone.Forward(all[v], &backbone_traces[b][v]).vector());
        }
        for (int g = 0; g < config.n_global_crops; ++g) {
          tfeat[b].push_back(state.teacher_backbone.Forward(all[g], nullptr).vector());
        }
      }
      const FeatureScaler sscale = FeatureScaler::Fit(sfeat, config.head_batch_standardize);
      const FeatureScaler tscale = FeatureScaler::Fit(tfeat, config.head_batch_standardize);

      std::vector<Eigen::VectorXd> batch_teacher;
      double batch_loss = 0;
      for (size_t b = 0; b < n; ++b) {
        std::vector<Eigen::VectorXd> teacher;
        for (const auto& f : tfeat[b]) {
          teacher.push_back(state.teacher_head.Forward(nn::Tensor::FromVector(tscale.Apply(f)), nullptr).vector());
        }
        std::vector<nn::Trace> head_traces(sfeat[b].size());
        std::vector<Eigen::VectorXd> student;
        for (size_t v = 0; v < sfeat[b].size(); ++v) {
          student.push_back(
              state.student_head.Forward(nn::Tensor::FromVector(sscale.Apply(sfeat[b][v])), &head_traces[v]).vector());
        }
        const DistillLossValue lv = DistillLoss(student, teacher, state.center, config.student_temp,
                                                config.teacher_temp, state.step);
        for (size_t v = 0; v < student.size(); ++v) {
          const nn::Tensor dh =
              state.student_head.Backward(head_traces[v], nn::Tensor::FromVector(lv.student_grad[v] * inv_batch));
          state.student_backbone.Backward(backbone_traces[b][v], nn::Tensor::FromVector(sscale.Back(dh.vector())));
        }
        batch_loss += lv.value * inv_batch;
        batch_teacher.insert(batch_teacher.end(), teacher.begin(), teacher.end());
      }
      optimizer.Step();
      EmaUpdate(state.teacher_backbone, state.student_backbone, config.ema_momentum);
      EmaUpdate(state.teacher_head, state.student_head, config.ema_momentum);
      CenterUpdate(state.center, batch_teacher, config.center_momentum);
      ++state.step;
      epoch_loss += batch_loss;
      ++batches;
    }
    PretrainEpochLog e;
    e.epoch = epoch;
    e.loss = epoch_loss / std::max(batches, 1);
    e.embedding_std = EmbeddingSpread(state.teacher_backbone, probes);
    e.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!(e.embedding_std > config.collapse_threshold)) {
      e.collapse_warning = true;
      warnings.push_back(label + "epoch " + std::to_string(epoch) + ": teacher embedding std " +
                         std::to_string(e.embedding_std) + " is at or below " +
                         std::to_string(config.collapse_threshold));
    }
    run.log.push_back(e);
    run.final_loss = e.loss;
  }
  run.teacher_backbone = std::move(state.teacher_backbone);
  return run;
}

}  // namespace

PretrainResult PretrainLoop(const std::vector<Image>& corpus, const EncoderSpec& spec, const DistillConfig& config) {
  config.Validate();
  spec.Validate();
  if (corpus.empty()) throw ConfigError("pretraining corpus is empty");
  for (const Image& im : corpus) {
    if (im.channels != spec.in_channels) {
      throw ConfigError("corpus image has " + std::to_string(im.channels) + " channels, encoder expects " +
                        std::to_string(spec.in_channels));
    }
  }
  const NormStats norm = CorpusNormStats(corpus);
  std::vector<nn::Tensor> probes;
  for (size_t i = 0; i < corpus.size() && static_cast<int>(i) < config.probe_batch; ++i) {
    probes.push_back(Normalize(ResizeBilinear(ToTensor(corpus[i]), config.global_crop_px, config.global_crop_px), norm));
  }

  PretrainResult result;
  result.checkpoint.kind = "pretrain";
  result.checkpoint.spec = spec;
  result.checkpoint.norm = norm;
  nlohmann::json ledger;
  if (config.shared_encoders) {
    SingleRun run = RunDistillation(corpus, spec, config, config.seed, norm, probes, result.warnings, "");
    result.checkpoint.AddModule("global_encoder/", run.teacher_backbone);
    result.checkpoint.AddModule("local_encoder/", run.teacher_backbone);
    const auto probe_ledger = RecordProbeLedger(run.teacher_backbone, config.global_crop_px, spec.in_channels);
    ledger = {{"global_encoder", probe_ledger}, {"local_encoder", probe_ledger}};
    result.log = std::move(run.log);
    result.final_loss = run.final_loss;
  } else {
    SingleRun g = RunDistillation(corpus, spec, config, DeriveSeed(config.seed, "global"), norm, probes,
                                  result.warnings, "global encoder ");
    SingleRun l = RunDistillation(corpus, spec, config, DeriveSeed(config.seed, "local"), norm, probes,
                                  result.warnings, "local encoder ");
    result.checkpoint.AddModule("global_encoder/", g.teacher_backbone);
    result.checkpoint.AddModule("local_encoder/", l.teacher_backbone);
    ledger = {{"global_encoder", RecordProbeLedger(g.teacher_backbone, config.global_crop_px, spec.in_channels)},
              {"local_encoder", RecordProbeLedger(l.teacher_backbone, config.global_crop_px, spec.in_channels)}};
    result.log = std::move(g.log);
    for (auto e : l.log) result.log.push_back(e);
    result.final_loss = l.final_loss;
  }
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : result.log) epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"embedding_std", e.embedding_std}});
  result.checkpoint.metadata = {{"probe_ledger", ledger},
                                {"final_loss", result.final_loss},
                                {"epochs", epochs},
                                {"corpus_size", corpus.size()},
                                {"shared_encoders", config.shared_encoders},
                                {"seed", config.seed}};
  return result;
}

std::vector<Image> LoadImageFolder(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  for (const auto& f : files) {
    Image im = ReadPng(f);
    if (im.channels == 1) {
      Image rgb(im.width, im.height, 3);
      for (size_t i = 0; i < im.pixels.size(); ++i) {
        for (int c = 0; c < 3; ++c) rgb.pixels[3 * i + c] = im.pixels[i];
      }
      im = std::move(rgb);
    }
    images.push_back(std::move(im));
  }
  return images;
}

}  // namespace rahand
