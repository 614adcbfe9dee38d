#include "rahand/finetune.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "rahand/error.hpp"
#include "rahand/nn/optim.hpp"

namespace rahand {

std::string LossKindName(LossKind kind) { return kind == LossKind::kBce ? "bce" : "focal"; }

LossKind ParseLossKind(const std::string& name) {
  if (name == "focal") return LossKind::kFocal;
  if (name == "bce") return LossKind::kBce;
  throw ConfigError("unknown loss '" + name + "' (expected focal or bce)");
}

void TrainConfig::Validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

FocalLossConfig EffectiveLoss(const TrainConfig& train, const FocalLossConfig& focal) {
  FocalLossConfig out = focal;
  if (train.loss == LossKind::kBce) {
    out.gamma = 0.0;
    out.alpha.reset();
  }
  out.Validate();
  return out;
}

void Shuffle(std::vector<size_t>& order, Rng& rng) {
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

std::string FinetuneLog::ToJsonLines() const {
  std::string out;
  out += nlohmann::json{{"event", "start"},
                        {"global_encoder_checksum", global_checksum_start},
                        {"local_encoder_checksum", local_checksum_start}}
             .dump() +
         "\n";
  for (const EpochLog& e : epochs) {
    out += nlohmann::json{{"event", "epoch"},
                          {"epoch", e.epoch},
                          {"loss", e.loss},
                          {"lr", e.learning_rate},
                          {"steps", e.steps},
                          {"skipped_batches", e.skipped_batches},
                          {"global_encoder_checksum", e.global_encoder_checksum},
                          {"local_encoder_checksum", e.local_encoder_checksum},
                          {"elapsed_s", e.elapsed_s}}
               .dump() +
           "\n";
  }
  out += nlohmann::json{{"event", "end"},
                        {"steps", total_steps},
                        {"global_encoder_checksum", global_checksum_end},
                        {"local_encoder_checksum", local_checksum_end}}
             .dump() +
         "\n";
  return out;
}

double HeadLossAndGrad(GlobalLocalNet& net, const std::vector<const EncodedSample*>& batch,
                       const std::vector<const LabelRow*>& labels, const FocalLossConfig& loss) {
  std::vector<HeadTrace> traces(batch.size());
  std::vector<double> logits;
  LabelRow flat;
  for (size_t b = 0; b < batch.size(); ++b) {
    const Eigen::VectorXd z = net.LogitsFromEncoded(*batch[b], &traces[b]);
    logits.insert(logits.end(), z.data(), z.data() + z.size());
    flat.insert(flat.end(), labels[b]->begin(), labels[b]->end());
  }
  const LossValue lv = FocalLossFromLogits(logits, flat, loss);
  size_t offset = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    const size_t n = batch[b]->local.size();
    const Eigen::VectorXd dz = Eigen::Map<const Eigen::VectorXd>(lv.grad.data() + offset, n);
    net.BackwardHead(traces[b], dz);
    offset += n;
  }
  return lv.value;
}

namespace {

struct Run {
  GlobalLocalNet& net;
  const TrainConfig& config;
  FinetuneLog log;
  nn::Adam optimizer;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  Run(GlobalLocalNet& n, const TrainConfig& c)
      : net(n), config(c), optimizer(n.TrainableParams(), nn::AdamOptions{.learning_rate = c.learning_rate}) {
    log.global_checksum_start = Checksum(ParamGroup::kGlobalEncoder);
    log.local_checksum_start = Checksum(ParamGroup::kLocalEncoder);
  }

  std::uint64_t Checksum(ParamGroup g) { return net.Checksum(g); }

  // `step` computes one batch loss with gradients; returns false once the
  // step budget is spent.
  template <typename StepFn>
  void Train(size_t n_items, StepFn step) {
    Rng rng(DeriveSeed(config.seed, "finetune_shuffle"));
    std::vector<size_t> order(n_items);
    bool done = false;
    for (int epoch = 1; epoch <= config.epochs && !done; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      Shuffle(order, rng);
      EpochLog e;
      e.epoch = epoch;
      e.learning_rate = config.learning_rate;
      double weighted = 0;
      int labeled = 0;
      for (size_t start = 0; start < n_items; start += config.batch_size) {
        if (config.max_steps > 0 && log.total_steps >= config.max_steps) {
          done = true;
          break;
        }
        const std::vector<size_t> idx(order.begin() + start,
                                      order.begin() + std::min(n_items, start + config.batch_size));
        net.ZeroGrad();
        double value;
        int count;
        try {
          std::tie(value, count) = step(idx);
        } catch (const UndefinedLossError&) {
          ++e.skipped_batches;
          continue;
        }
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite fine-tuning loss at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(log.total_steps + 1));
        }
        optimizer.Step();
        weighted += value * count;
        labeled += count;
        ++e.steps;
        ++log.total_steps;
      }
      if (e.steps == 0 && e.skipped_batches == 0) break;
      e.loss = labeled > 0 ? weighted / labeled : 0.0;
      e.global_encoder_checksum = Checksum(ParamGroup::kGlobalEncoder);
      e.local_encoder_checksum = Checksum(ParamGroup::kLocalEncoder);
      e.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.epochs.push_back(e);
    }
    log.global_checksum_end = Checksum(ParamGroup::kGlobalEncoder);
    log.local_checksum_end = Checksum(ParamGroup::kLocalEncoder);
  }
};

int CountLabeled(const LabelRow& row) {
  int n = 0;
  for (const auto& l : row) n += l.has_value();
  return n;
}

}  // namespace

FinetuneLog FinetuneHead(GlobalLocalNet& net, const std::vector<EncodedSample>& encoded,
                         const std::vector<LabelRow>& labels, const TrainConfig& config,
                         const FocalLossConfig& loss) {
  config.Validate();
  if (encoded.empty()) throw ConfigError("empty training set");
  if (encoded.size() != labels.size()) throw ConfigError("encoded samples and label rows differ in count");
  const FocalLossConfig objective = EffectiveLoss(config, loss);
  net.FreezeEncoders();
  Run run(net, config);
  run.Train(encoded.size(), [&](const std::vector<size_t>& idx) {
    std::vector<const EncodedSample*> batch;
    std::vector<const LabelRow*> rows;
    int count = 0;
    for (size_t i : idx) {
      batch.push_back(&encoded[i]);
      rows.push_back(&labels[i]);
      count += CountLabeled(labels[i]);
    }
    return std::make_pair(HeadLossAndGrad(net, batch, rows, objective), count);
  });
  return run.log;
}

FinetuneLog FinetuneLoop(GlobalLocalNet& net, const std::vector<PreparedSample>& train, const TrainConfig& config,
                         const FocalLossConfig& loss) {
  config.Validate();
  if (train.empty()) throw ConfigError("empty training set");
  std::vector<LabelRow> labels;
  for (const auto& s : train) labels.push_back(s.labels);
  if (config.freeze) {
    std::vector<EncodedSample> encoded;
    encoded.reserve(train.size());
    for (const auto& s : train) encoded.push_back(net.Encode(s));
    if (config.standardize_features) net.FitFeatureNorm(encoded);
    return FinetuneHead(net, encoded, labels, config, loss);
  }

  const FocalLossConfig objective = EffectiveLoss(config, loss);
  for (ParamGroup g : AllGroups()) net.SetTrainable(g, true);
  Run run(net, config);
  run.Train(train.size(), [&](const std::vector<size_t>& idx) {
    std::vector<SampleTrace> traces(idx.size());
    std::vector<double> logits;
    LabelRow flat;
    int count = 0;
    for (size_t b = 0; b < idx.size(); ++b) {
      const Eigen::VectorXd z = net.ForwardTrain(train[idx[b]], &traces[b]);
      logits.insert(logits.end(), z.data(), z.data() + z.size());
      flat.insert(flat.end(), labels[idx[b]].begin(), labels[idx[b]].end());
      count += CountLabeled(labels[idx[b]]);
    }
    const LossValue lv = FocalLossFromLogits(logits, flat, objective);
    size_t offset = 0;
    for (size_t b = 0; b < idx.size(); ++b) {
      const size_t n = train[idx[b]].size();
      net.Backward(traces[b], Eigen::Map<const Eigen::VectorXd>(lv.grad.data() + offset, n));
      offset += n;
    }
    return std::make_pair(lv.value, count);
  });
  return run.log;
}

std::vector<std::vector<double>> Predict(const GlobalLocalNet& net, const std::vector<PreparedSample>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(net.Forward(s));
  return out;
}

}  // namespace rahand
