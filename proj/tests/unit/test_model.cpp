#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "rahand/checkpoint.hpp"
#include "rahand/error.hpp"
#include "rahand/model.hpp"

using namespace rahand;

namespace {

EncoderSpec TinySpec() {
  EncoderSpec s;
  s.backbone = Backbone::kSmallCnn;
  s.feature_dim = 16;
  s.ffn_dim = 8;
  return s;
}

PreparedSample RandomSample(int joints, int px, Rng& rng) {
  PreparedSample s;
  s.global_image = testing::RandomTensor(3, px, px, rng);
  for (int j = 0; j < joints; ++j) {
    s.local_patches.push_back(testing::RandomTensor(3, px, px, rng));
    s.joint_ids.push_back(JointId::FromIndex(j));
    s.labels.push_back(std::nullopt);
  }
  return s;
}

Checkpoint PretrainCheckpoint(GlobalLocalNet& net, int probe_px) {
  Checkpoint c;
  c.kind = "pretrain";
  c.spec = net.spec();
  c.norm = IdentityNormStats(3);
  nlohmann::json ledger;
  for (ParamGroup g : {ParamGroup::kGlobalEncoder, ParamGroup::kLocalEncoder}) {
    c.AddModule(GroupName(g) + "/", net.module(g));
    ledger[GroupName(g)] = RecordProbeLedger(net.module(g), probe_px, 3);
  }
  c.metadata["probe_ledger"] = ledger;
  return c;
}

}  // namespace

TEST_CASE("model: probabilities in (0, 1), one per joint, deterministic by seed") {
  Rng rng(1);
  const PreparedSample s = RandomSample(10, 32, rng);
  for (Backbone b : {Backbone::kSmallCnn, Backbone::kResnet18Like}) {
    EncoderSpec spec = TinySpec();
    spec.backbone = b;
    GlobalLocalNet a(spec, true, 5), c(spec, true, 5), d(spec, true, 6);
    const auto pa = a.Forward(s);
    REQUIRE(pa.size() == 10);
    for (double p : pa) {
      CHECK(p > 0);
      CHECK(p < 1);
    }
    CHECK(pa == c.Forward(s));
    CHECK(pa != d.Forward(s));
  }
}

TEST_CASE("model: swapping two patches swaps exactly their outputs") {
  Rng rng(2);
  PreparedSample s = RandomSample(10, 32, rng);
  GlobalLocalNet net(TinySpec(), true, 3);
  const auto before = net.Forward(s);
  std::swap(s.local_patches[2], s.local_patches[7]);
  const auto after = net.Forward(s);
  for (int j = 0; j < 10; ++j) {
    const int src = j == 2 ? 7 : j == 7 ? 2 : j;
    CHECK(after[j] == doctest::Approx(before[src]).epsilon(1e-12));
  }
}

TEST_CASE("model: global image changes every output; local-only ignores it") {
  Rng rng(3);
  PreparedSample s = RandomSample(4, 32, rng);
  GlobalLocalNet both(TinySpec(), true, 4), local(TinySpec(), false, 4);
  const auto b0 = both.Forward(s), l0 = local.Forward(s);
  s.global_image = testing::RandomTensor(3, 32, 32, rng);
  const auto b1 = both.Forward(s), l1 = local.Forward(s);
  for (int j = 0; j < 4; ++j) {
    CHECK(b0[j] != b1[j]);
    CHECK(l0[j] == l1[j]);
  }
}

TEST_CASE("model: zeroed head outputs exactly 0.5") {
  Rng rng(4);
  const PreparedSample s = RandomSample(10, 32, rng);
  GlobalLocalNet net(TinySpec(), true, 7);
  for (auto& np : net.GroupParams(ParamGroup::kHead)) np.param->value.setZero();
  for (double p : net.Forward(s)) CHECK(p == 0.5);
}

TEST_CASE("model: freezing leaves only FFNs and head trainable") {
  GlobalLocalNet net(TinySpec(), true, 8);
  const size_t all = net.TrainableParams().size();
  net.FreezeEncoders();
  CHECK_FALSE(net.IsTrainable(ParamGroup::kGlobalEncoder));
  CHECK_FALSE(net.IsTrainable(ParamGroup::kLocalEncoder));
  size_t expected = 0;
  for (ParamGroup g : {ParamGroup::kGlobalFfn, ParamGroup::kLocalFfn, ParamGroup::kHead}) {
    CHECK(net.IsTrainable(g));
    expected += net.GroupParams(g).size();
  }
  CHECK(net.TrainableParams().size() == expected);
  CHECK(expected < all);
  CHECK(net.ParamCount(ParamGroup::kGlobalEncoder) == net.ParamCount(ParamGroup::kLocalEncoder));
}

TEST_CASE("model: head gradients match central differences") {
  Rng rng(5);
  const PreparedSample s = RandomSample(3, 16, rng);
  GlobalLocalNet net(TinySpec(), true, 9);
  net.FreezeEncoders();
  const Eigen::VectorXd upstream = Eigen::VectorXd::Random(3);
  net.ZeroGrad();
  SampleTrace trace;
  net.ForwardTrain(s, &trace);
  net.Backward(trace, upstream);
  const auto objective = [&] { return net.Logits(s).dot(upstream); };
  double worst = 0;
  for (ParamGroup g : {ParamGroup::kGlobalFfn, ParamGroup::kLocalFfn, ParamGroup::kHead}) {
    for (auto& np : net.GroupParams(g)) {
      for (Eigen::Index i = 0; i < np.param->value.size(); ++i) {
        double& v = np.param->value.data()[i];
        const double orig = v;
        v = orig + 1e-6;
        const double up = objective();
        v = orig - 1e-6;
        const double down = objective();
        v = orig;
        const double fd = (up - down) / 2e-6;
        if (std::abs(fd) > 1e-7) worst = std::max(worst, testing::RelErr(np.param->grad.data()[i], fd));
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("model: spec validation") {
  EncoderSpec s = TinySpec();
  s.feature_dim = 0;
  CHECK_THROWS_AS(s.Validate(), ConfigError);
  s = EncoderSpec{};
  s.feature_dim = 100;
  CHECK_THROWS_AS(s.Validate(), ConfigError);
  CHECK_THROWS_AS(ParseBackbone("vgg"), ConfigError);
  CHECK(ParseBackbone(BackboneName(Backbone::kSmallCnn)) == Backbone::kSmallCnn);
}

TEST_CASE("checkpoint: model round trip reproduces outputs") {
  testing::TempDir dir("ckpt_model");
  Rng rng(6);
  const PreparedSample s = RandomSample(10, 32, rng);
  GlobalLocalNet net(TinySpec(), true, 10);
  NormStats norm{{0.1, 0.2, 0.3}, {0.5, 0.6, 0.7}};
  SaveCheckpoint(dir.path() / "m.bin", CaptureModel(net, norm));
  const Checkpoint loaded = LoadCheckpoint(dir.path() / "m.bin");
  CHECK(loaded.kind == "model");
  CHECK(loaded.norm == norm);
  CHECK(loaded.spec == net.spec());
  GlobalLocalNet back = RestoreModel(loaded);
  CHECK(back.Forward(s) == net.Forward(s));
  for (ParamGroup g : AllGroups()) CHECK(back.Checksum(g) == net.Checksum(g));
}

TEST_CASE("model: feature standardization is identity until fitted, and survives a checkpoint") {
  testing::TempDir dir("ckpt_norm");
  Rng rng(8);
  std::vector<PreparedSample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back(RandomSample(10, 32, rng));
  GlobalLocalNet net(TinySpec(), true, 13);
  CHECK(net.global_feature_norm().empty());
  const std::vector<double> before = net.Forward(samples[0]);

  std::vector<EncodedSample> encoded;
  for (const auto& s : samples) encoded.push_back(net.Encode(s));
  net.FitFeatureNorm(encoded);
  REQUIRE(net.local_feature_norm().mean.size() == TinySpec().feature_dim);
  // Standardized local features have zero mean and unit variance.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(TinySpec().feature_dim), sq = sum;
  int n = 0;
  for (const auto& e : encoded) {
    for (const auto& v : e.local) {
      const Eigen::VectorXd z = net.local_feature_norm().Apply(v);
      sum += z;
      sq += z.cwiseProduct(z);
      ++n;
    }
  }
  CHECK((sum / n).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs((sq / n).mean() - 1.0) < 1e-6);
  CHECK(net.Forward(samples[0]) != before);

  SaveCheckpoint(dir.path() / "m.bin", CaptureModel(net, NormStats{}));
  GlobalLocalNet back = RestoreModel(LoadCheckpoint(dir.path() / "m.bin"));
  CHECK(back.Forward(samples[0]) == net.Forward(samples[0]));
  back.ReinitializeEncoders(3);
  CHECK(back.local_feature_norm().empty());
}

TEST_CASE("checkpoint: pretrained encoders load within the probe tolerance") {
  testing::TempDir dir("ckpt_pre");
  GlobalLocalNet source(TinySpec(), true, 11);
  SaveCheckpoint(dir.path() / "p.bin", PretrainCheckpoint(source, 32));
  const Checkpoint ckpt = LoadCheckpoint(dir.path() / "p.bin");
  GlobalLocalNet target(TinySpec(), true, 12);
  LoadBackbone(target, WeightsSource::kPretrainedCheckpoint, &ckpt, 99);
  for (ParamGroup g : {ParamGroup::kGlobalEncoder, ParamGroup::kLocalEncoder}) {
    CHECK(target.Checksum(g) == source.Checksum(g));
    CHECK(ProbeDeviation(target.module(g), ckpt.metadata["probe_ledger"][GroupName(g)]) <= 1e-5);
  }

  // Random source draws fresh encoders.
  GlobalLocalNet rnd(TinySpec(), true, 12);
  LoadBackbone(rnd, WeightsSource::kRandom, nullptr, 99);
  CHECK(rnd.Checksum(ParamGroup::kLocalEncoder) != source.Checksum(ParamGroup::kLocalEncoder));
  CHECK_THROWS_AS(LoadBackbone(rnd, WeightsSource::kPretrainedCheckpoint, nullptr, 1), CheckpointError);
}

TEST_CASE("checkpoint: mismatched feature_dim names the offending group") {
  GlobalLocalNet source(TinySpec(), true, 13);
  const Checkpoint ckpt = PretrainCheckpoint(source, 32);
  EncoderSpec wide = TinySpec();
  wide.feature_dim = 32;
  GlobalLocalNet target(wide, true, 14);
  try {
    LoadBackbone(target, WeightsSource::kPretrainedCheckpoint, &ckpt, 1);
    FAIL("expected a checkpoint error");
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("feature_dim") != std::string::npos);
    CHECK(msg.find("global_encoder") != std::string::npos);
  }
}

TEST_CASE("checkpoint: tampered weights fail the probe check") {
  GlobalLocalNet source(TinySpec(), true, 15);
  Checkpoint ckpt = PretrainCheckpoint(source, 32);
  ckpt.tensors[0].second.array() += 0.05;
  GlobalLocalNet target(TinySpec(), true, 16);
  CHECK_THROWS_AS(LoadBackbone(target, WeightsSource::kPretrainedCheckpoint, &ckpt, 1), CheckpointError);
}

TEST_CASE("checkpoint: truncated and foreign files are rejected") {
  testing::TempDir dir("ckpt_bad");
  GlobalLocalNet net(TinySpec(), true, 17);
  SaveCheckpoint(dir.path() / "m.bin", CaptureModel(net, IdentityNormStats(3)));
  const auto size = std::filesystem::file_size(dir.path() / "m.bin");
  std::filesystem::resize_file(dir.path() / "m.bin", size - 100);
  CHECK_THROWS_AS(LoadCheckpoint(dir.path() / "m.bin"), CheckpointError);
  std::ofstream(dir.path() / "junk.bin") << "hello, not a checkpoint";
  CHECK_THROWS_AS(LoadCheckpoint(dir.path() / "junk.bin"), CheckpointError);
  CHECK_THROWS_AS(LoadCheckpoint(dir.path() / "absent.bin"), IoError);
}
