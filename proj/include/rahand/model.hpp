#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rahand/nn/layers.hpp"
#include "rahand/preprocess.hpp"

namespace rahand {

enum class Backbone { kResnet18Like, kSmallCnn };

std::string BackboneName(Backbone b);
Backbone ParseBackbone(const std::string& name);

struct EncoderSpec {
  Backbone backbone = Backbone::kResnet18Like;
  int feature_dim = 512;  // backbone output width
  int ffn_dim = 128;      // projection width, shared by both branches
  int in_channels = 3;

  void Validate() const;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

// Image -> feature_dim vector. Fully convolutional with a global average
// pool, so any input size above the total stride works.
nn::Sequential BuildEncoder(const EncoderSpec& spec, Rng& rng);

// linear -> relu -> linear, hidden width = out width.
nn::Sequential BuildFfn(int in_dim, int out_dim, Rng& rng);

enum class ParamGroup { kGlobalEncoder, kLocalEncoder, kGlobalFfn, kLocalFfn, kHead };

std::string GroupName(ParamGroup g);
const std::vector<ParamGroup>& AllGroups();

// Encoder outputs for one sample, the part that stays fixed while encoders
// are frozen.
struct EncodedSample {
  Eigen::VectorXd global;               // empty when the global branch is off
  std::vector<Eigen::VectorXd> local;   // one per active joint
};

// Fixed per-dimension affine on encoder outputs, (v - mean) * inv_std,
// applied before the FFNs. Empty means identity.
struct FeatureNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;

  bool empty() const { return mean.size() == 0; }
  Eigen::VectorXd Apply(const Eigen::VectorXd& v) const;
  // Standardizes with the mean and standard deviation of `vectors`
  // (variance floored at 1e-8).
  static FeatureNorm Fit(const std::vector<const Eigen::VectorXd*>& vectors);
};

struct HeadTrace {
  nn::Trace global_ffn;
  std::vector<nn::Trace> local_ffn;
  std::vector<nn::Trace> head;
};

struct SampleTrace {
  nn::Trace global_encoder;
  std::vector<nn::Trace> local_encoder;
  HeadTrace head;
};

struct EncodedGrad {
  Eigen::VectorXd global;
  std::vector<Eigen::VectorXd> local;
};

// Global/local dual encoder with per-branch FFN projections and one MLP head
// shared by every joint:
//   p_j = sigmoid(head([global_ffn(G(X)); local_ffn(L(x_j))]))
// With the global branch disabled the head sees local_ffn(L(x_j)) alone.
class GlobalLocalNet {
 public:
  GlobalLocalNet(const EncoderSpec& spec, bool use_global_branch, std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }
  bool uses_global_branch() const { return use_global_; }

  EncodedSample Encode(const PreparedSample& sample) const;
  Eigen::VectorXd LogitsFromEncoded(const EncodedSample& encoded, HeadTrace* trace) const;
  Eigen::VectorXd Logits(const PreparedSample& sample) const;
  // Per-joint probabilities, each strictly inside (0, 1) up to rounding.
  std::vector<double> Forward(const PreparedSample& sample) const;
  std::vector<double> ForwardEncoded(const EncodedSample& encoded) const;

  // Training path through every branch.
  Eigen::VectorXd ForwardTrain(const PreparedSample& sample, SampleTrace* trace) const;
  // Accumulates gradients for the head groups; encoder gradients are only
  // computed for trainable encoders.
  void Backward(const SampleTrace& trace, const Eigen::VectorXd& dlogits);
  EncodedGrad BackwardHead(const HeadTrace& trace, const Eigen::VectorXd& dlogits);

  // Only the FFNs and the head stay trainable.
  void FreezeEncoders();
  void SetTrainable(ParamGroup group, bool trainable);
  bool IsTrainable(ParamGroup group) const;

  std::vector<nn::NamedParam> GroupParams(ParamGroup group);
  std::vector<nn::Param*> TrainableParams();
  size_t ParamCount(ParamGroup group);
  void ZeroGrad();
  // FNV-1a over the raw parameter bytes of one group.
  std::uint64_t Checksum(ParamGroup group);

  // Encoder-output standardization; reset to identity by
  // ReinitializeEncoders.
  void SetFeatureNorm(FeatureNorm global, FeatureNorm local);
  // Fits both branches on already-encoded samples.
  void FitFeatureNorm(const std::vector<EncodedSample>& encoded);
  const FeatureNorm& global_feature_norm() const { return global_norm_; }
  const FeatureNorm& local_feature_norm() const { return local_norm_; }

  // Fresh draws for the FFNs and head, keeping the encoders.
  void ReinitializeHead(std::uint64_t seed);
  void ReinitializeEncoders(std::uint64_t seed);

  nn::Sequential& module(ParamGroup group);
  const nn::Sequential& module(ParamGroup group) const;

 private:
  EncoderSpec spec_;
  bool use_global_;
  nn::Sequential global_encoder_;
  nn::Sequential local_encoder_;
  nn::Sequential global_ffn_;
  nn::Sequential local_ffn_;
  nn::Sequential head_;
  std::map<ParamGroup, bool> trainable_;
  FeatureNorm global_norm_;
  FeatureNorm local_norm_;
};

double Sigmoid(double z);

}  // namespace rahand
