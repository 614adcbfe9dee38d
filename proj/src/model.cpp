#include "rahand/model.hpp"

#include <cmath>

#include "rahand/error.hpp"

namespace rahand {

std::string BackboneName(Backbone b) {
  return b == Backbone::kSmallCnn ? "small-cnn" : "resnet18-like";
}

Backbone ParseBackbone(const std::string& name) {
  if (name == "small-cnn") return Backbone::kSmallCnn;
  if (name == "resnet18-like") return Backbone::kResnet18Like;
  throw ConfigError("unknown backbone '" + name + "' (expected small-cnn or resnet18-like)");
}

void EncoderSpec::Validate() const {
  if (feature_dim <= 0 || ffn_dim <= 0 || in_channels <= 0) {
    throw ConfigError("encoder feature_dim, ffn_dim and in_channels must be positive");
  }
  if (backbone == Backbone::kResnet18Like && feature_dim % 8 != 0) {
    throw ConfigError("resnet18-like feature_dim must be a multiple of 8");
  }
}

nn::Sequential BuildEncoder(const EncoderSpec& spec, Rng& rng) {
  spec.Validate();
  nn::Sequential enc;
  if (spec.backbone == Backbone::kSmallCnn) {
    // Four stride-2 3x3 conv blocks.
    const int fd = spec.feature_dim;
    const int widths[4] = {std::max(8, fd / 4), std::max(8, fd / 2), fd, fd};
    int in = spec.in_channels;
    for (int w : widths) {
      enc.Add<nn::Conv2d>(in, w, 3, 2, 1, rng).Add<nn::Relu>();
      in = w;
    }
  } else {
    const int base = spec.feature_dim / 8;
    enc.Add<nn::Conv2d>(spec.in_channels, base, 7, 2, 3, rng).Add<nn::Relu>();
    enc.Add<nn::MaxPool2d>(3, 2, 1);
    // No normalization layers: the second conv of each residual branch starts
    // scaled down so activations stay bounded through eight blocks.
    const double residual_scale = 1.0 / std::sqrt(8.0);
    int in = base;
    for (int stage = 0; stage < 4; ++stage) {
      const int out = base << stage;
      enc.Add<nn::BasicBlock>(in, out, stage == 0 ? 1 : 2, rng, residual_scale);
      enc.Add<nn::BasicBlock>(out, out, 1, rng, residual_scale);
      in = out;
    }
  }
  enc.Add<nn::GlobalAvgPool>();
  return enc;
}

nn::Sequential BuildFfn(int in_dim, int out_dim, Rng& rng) {
  nn::Sequential ffn;
  ffn.Add<nn::Linear>(in_dim, out_dim, rng).Add<nn::Relu>().Add<nn::Linear>(out_dim, out_dim, rng);
  return ffn;
}

std::string GroupName(ParamGroup g) {
  switch (g) {
    case ParamGroup::kGlobalEncoder: return "global_encoder";
    case ParamGroup::kLocalEncoder: return "local_encoder";
    case ParamGroup::kGlobalFfn: return "global_ffn";
    case ParamGroup::kLocalFfn: return "local_ffn";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

const std::vector<ParamGroup>& AllGroups() {
  static const std::vector<ParamGroup> groups = {ParamGroup::kGlobalEncoder, ParamGroup::kLocalEncoder,
                                                 ParamGroup::kGlobalFfn, ParamGroup::kLocalFfn,
                                                 ParamGroup::kHead};
  return groups;
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

GlobalLocalNet::GlobalLocalNet(const EncoderSpec& spec, bool use_global_branch, std::uint64_t seed)
    : spec_(spec), use_global_(use_global_branch) {
  spec_.Validate();
  ReinitializeEncoders(seed);
  ReinitializeHead(seed);
  for (ParamGroup g : AllGroups()) trainable_[g] = true;
  if (!use_global_) {
    trainable_[ParamGroup::kGlobalEncoder] = false;
    trainable_[ParamGroup::kGlobalFfn] = false;
  }
}

void GlobalLocalNet::ReinitializeEncoders(std::uint64_t seed) {
  Rng global_rng(DeriveSeed(seed, "global_encoder"));
  Rng local_rng(DeriveSeed(seed, "local_encoder"));
  global_encoder_ = use_global_ ? BuildEncoder(spec_, global_rng) : nn::Sequential();
  local_encoder_ = BuildEncoder(spec_, local_rng);
  global_norm_ = {};
  local_norm_ = {};
}

Eigen::VectorXd FeatureNorm::Apply(const Eigen::VectorXd& v) const {
  if (empty()) return v;
  return (v - mean).cwiseProduct(inv_std);
}

FeatureNorm FeatureNorm::Fit(const std::vector<const Eigen::VectorXd*>& vectors) {
  FeatureNorm out;
  if (vectors.size() < 2) return out;
  const Eigen::Index d = vectors.front()->size();
  out.mean = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const auto* v : vectors) {
    out.mean += *v;
    sq += v->cwiseProduct(*v);
  }
  const double n = static_cast<double>(vectors.size());
  out.mean /= n;
  const Eigen::VectorXd var = (sq / n - out.mean.cwiseProduct(out.mean)).cwiseMax(1e-8);
  out.inv_std = var.cwiseSqrt().cwiseInverse();
  return out;
}

void GlobalLocalNet::SetFeatureNorm(FeatureNorm global, FeatureNorm local) {
  auto check = [&](const FeatureNorm& n, const char* which) {
    if (!n.empty() && (n.mean.size() != spec_.feature_dim || n.inv_std.size() != spec_.feature_dim)) {
      throw ConfigError(std::string(which) + " feature norm width differs from feature_dim");
    }
  };
  check(global, "global");
  check(local, "local");
  global_norm_ = use_global_ ? std::move(global) : FeatureNorm{};
  local_norm_ = std::move(local);
}

void GlobalLocalNet::FitFeatureNorm(const std::vector<EncodedSample>& encoded) {
  std::vector<const Eigen::VectorXd*> g, l;
  for (const auto& e : encoded) {
    if (use_global_) g.push_back(&e.global);
    for (const auto& v : e.local) l.push_back(&v);
  }
  SetFeatureNorm(FeatureNorm::Fit(g), FeatureNorm::Fit(l));
}

void GlobalLocalNet::ReinitializeHead(std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, "head"));
  global_ffn_ = use_global_ ? BuildFfn(spec_.feature_dim, spec_.ffn_dim, rng) : nn::Sequential();
  local_ffn_ = BuildFfn(spec_.feature_dim, spec_.ffn_dim, rng);
  const int fused = (use_global_ ? 2 : 1) * spec_.ffn_dim;
  head_ = nn::Sequential();
  head_.Add<nn::Linear>(fused, spec_.ffn_dim, rng).Add<nn::Relu>().Add<nn::Linear>(spec_.ffn_dim, 1, rng);
}

nn::Sequential& GlobalLocalNet::module(ParamGroup group) {
  return const_cast<nn::Sequential&>(static_cast<const GlobalLocalNet*>(this)->module(group));
}

const nn::Sequential& GlobalLocalNet::module(ParamGroup group) const {
  switch (group) {
    case ParamGroup::kGlobalEncoder: return global_encoder_;
    case ParamGroup::kLocalEncoder: return local_encoder_;
    case ParamGroup::kGlobalFfn: return global_ffn_;
    case ParamGroup::kLocalFfn: return local_ffn_;
    case ParamGroup::kHead: return head_;
  }
  return head_;
}

namespace {

void CheckSample(const PreparedSample& sample, const EncoderSpec& spec) {
  if (sample.local_patches.size() != sample.joint_ids.size() ||
      sample.labels.size() != sample.joint_ids.size()) {
    throw ConfigError("prepared sample has inconsistent joint counts");
  }
  auto check = [&](const nn::Tensor& t, const char* what) {
    if (t.channels() != spec.in_channels) {
      throw ConfigError(std::string(what) + " has " + std::to_string(t.channels()) +
                        " channels, encoder expects " + std::to_string(spec.in_channels));
    }
  };
  check(sample.global_image, "global image");
  for (const auto& p : sample.local_patches) check(p, "joint patch");
}

}  // namespace

EncodedSample GlobalLocalNet::Encode(const PreparedSample& sample) const {
  CheckSample(sample, spec_);
  EncodedSample enc;
  if (use_global_) enc.global = global_encoder_.Forward(sample.global_image, nullptr).vector();
  for (const auto& patch : sample.local_patches) {
    enc.local.push_back(local_encoder_.Forward(patch, nullptr).vector());
  }
  return enc;
}

Eigen::VectorXd GlobalLocalNet::LogitsFromEncoded(const EncodedSample& encoded, HeadTrace* trace) const {
  const size_t n = encoded.local.size();
  Eigen::VectorXd gproj;
  if (use_global_) {
    gproj = global_ffn_.Forward(nn::Tensor::FromVector(global_norm_.Apply(encoded.global)),
                                trace ? &trace->global_ffn : nullptr)
                .vector();
  }
  if (trace) {
    trace->local_ffn.assign(n, {});
    trace->head.assign(n, {});
  }
  Eigen::VectorXd logits(n);
  const int f = spec_.ffn_dim;
  Eigen::VectorXd fused((use_global_ ? 2 : 1) * f);
  if (use_global_) fused.head(f) = gproj;
  for (size_t j = 0; j < n; ++j) {
    const Eigen::VectorXd lproj =
        local_ffn_.Forward(nn::Tensor::FromVector(local_norm_.Apply(encoded.local[j])), trace ? &trace->local_ffn[j] : nullptr)
            .vector();
    fused.tail(f) = lproj;
    logits[j] = head_.Forward(nn::Tensor::FromVector(fused), trace ? &trace->head[j] : nullptr).data(0, 0);
  }
  return logits;
}

Eigen::VectorXd GlobalLocalNet::Logits(const PreparedSample& sample) const {
  return LogitsFromEncoded(Encode(sample), nullptr);
}

std::vector<double> GlobalLocalNet::ForwardEncoded(const EncodedSample& encoded) const {
  const Eigen::VectorXd z = LogitsFromEncoded(encoded, nullptr);
  std::vector<double> p(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = Sigmoid(z[i]);
  return p;
}

std::vector<double> GlobalLocalNet::Forward(const PreparedSample& sample) const {
  return ForwardEncoded(Encode(sample));
}

Eigen::VectorXd GlobalLocalNet::ForwardTrain(const PreparedSample& sample, SampleTrace* trace) const {
  CheckSample(sample, spec_);
  EncodedSample enc;
  const bool trace_global = trace && IsTrainable(ParamGroup::kGlobalEncoder);
  const bool trace_local = trace && IsTrainable(ParamGroup::kLocalEncoder);
  if (use_global_) {
    enc.global = global_encoder_.Forward(sample.global_image, trace_global ? &trace->global_encoder : nullptr)
                     .vector();
  }
  if (trace_local) trace->local_encoder.assign(sample.local_patches.size(), {});
  for (size_t j = 0; j < sample.local_patches.size(); ++j) {
    enc.local.push_back(
        local_encoder_.Forward(sample.local_patches[j], trace_local ? &trace->local_encoder[j] : nullptr)
            .vector());
  }
  return LogitsFromEncoded(enc, trace ? &trace->head : nullptr);
}

EncodedGrad GlobalLocalNet::BackwardHead(const HeadTrace& trace, const Eigen::VectorXd& dlogits) {
  const int f = spec_.ffn_dim;
  EncodedGrad grad;
  Eigen::VectorXd dgproj = Eigen::VectorXd::Zero(f);
  for (Eigen::Index j = 0; j < dlogits.size(); ++j) {
    nn::Tensor g(1, 1, 1);
    g.data(0, 0) = dlogits[j];
    const Eigen::VectorXd dfused = head_.Backward(trace.head[j], g).vector();
    if (use_global_) dgproj += dfused.head(f);
    Eigen::VectorXd dl = local_ffn_.Backward(trace.local_ffn[j], nn::Tensor::FromVector(dfused.tail(f))).vector();
    if (!local_norm_.empty()) dl = dl.cwiseProduct(local_norm_.inv_std);
    grad.local.push_back(std::move(dl));
  }
  if (use_global_) {
    grad.global = global_ffn_.Backward(trace.global_ffn, nn::Tensor::FromVector(dgproj)).vector();
    if (!global_norm_.empty()) grad.global = grad.global.cwiseProduct(global_norm_.inv_std);
  }
  return grad;
}

void GlobalLocalNet::Backward(const SampleTrace& trace, const Eigen::VectorXd& dlogits) {
  const EncodedGrad grad = BackwardHead(trace.head, dlogits);
  if (use_global_ && IsTrainable(ParamGroup::kGlobalEncoder)) {
    global_encoder_.Backward(trace.global_encoder, nn::Tensor::FromVector(grad.global));
  }
  if (IsTrainable(ParamGroup::kLocalEncoder)) {
    for (size_t j = 0; j < grad.local.size(); ++j) {
      local_encoder_.Backward(trace.local_encoder[j], nn::Tensor::FromVector(grad.local[j]));
    }
  }
}

void GlobalLocalNet::FreezeEncoders() {
  trainable_[ParamGroup::kGlobalEncoder] = false;
  trainable_[ParamGroup::kLocalEncoder] = false;
}

void GlobalLocalNet::SetTrainable(ParamGroup group, bool trainable) {
  if (!use_global_ && (group == ParamGroup::kGlobalEncoder || group == ParamGroup::kGlobalFfn)) return;
  trainable_[group] = trainable;
}

bool GlobalLocalNet::IsTrainable(ParamGroup group) const { return trainable_.at(group); }

std::vector<nn::NamedParam> GlobalLocalNet::GroupParams(ParamGroup group) {
  return module(group).Params(GroupName(group) + "/");
}

std::vector<nn::Param*> GlobalLocalNet::TrainableParams() {
  std::vector<nn::Param*> out;
  for (ParamGroup g : AllGroups()) {
    if (!IsTrainable(g)) continue;
    for (auto& np : GroupParams(g)) out.push_back(np.param);
  }
  return out;
}

size_t GlobalLocalNet::ParamCount(ParamGroup group) {
  size_t n = 0;
  for (auto& np : GroupParams(group)) n += np.param->value.size();
  return n;
}

void GlobalLocalNet::ZeroGrad() {
  for (ParamGroup g : AllGroups()) module(g).ZeroGrad();
}

std::uint64_t GlobalLocalNet::Checksum(ParamGroup group) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& np : GroupParams(group)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(np.param->value.data());
    const size_t n = static_cast<size_t>(np.param->value.size()) * sizeof(double);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace rahand
