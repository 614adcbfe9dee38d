#include "rahand/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "rahand/error.hpp"

namespace rahand {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'A', 'H', 'C', 'K', 'P', 'T', '1'};

json SpecToJson(const EncoderSpec& s) {
  return {{"backbone", BackboneName(s.backbone)},
          {"feature_dim", s.feature_dim},
          {"ffn_dim", s.ffn_dim},
          {"in_channels", s.in_channels}};
}

EncoderSpec SpecFromJson(const json& j) {
  EncoderSpec s;
  s.backbone = ParseBackbone(j.at("backbone").get<std::string>());
  s.feature_dim = j.at("feature_dim").get<int>();
  s.ffn_dim = j.at("ffn_dim").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  return s;
}

}  // namespace

void Checkpoint::AddModule(const std::string& prefix, nn::Sequential& module) {
  for (auto& np : module.Params(prefix)) tensors.emplace_back(np.name, np.param->value);
}

bool Checkpoint::HasPrefix(const std::string& prefix) const {
  for (const auto& [name, value] : tensors) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

void Checkpoint::CopyInto(const std::string& prefix, nn::Sequential& module,
                          std::vector<std::string>& problems) const {
  std::map<std::string, const Eigen::MatrixXd*> by_name;
  for (const auto& [name, value] : tensors) by_name[name] = &value;
  for (auto& np : module.Params(prefix)) {
    auto it = by_name.find(np.name);
    if (it == by_name.end()) {
      problems.push_back(np.name + " missing");
      continue;
    }
    const Eigen::MatrixXd& src = *it->second;
    if (src.rows() != np.param->value.rows() || src.cols() != np.param->value.cols()) {
      problems.push_back(np.name + " is " + std::to_string(src.rows()) + "x" + std::to_string(src.cols()) +
                         ", expected " + std::to_string(np.param->value.rows()) + "x" +
                         std::to_string(np.param->value.cols()));
      continue;
    }
    np.param->value = src;
  }
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json table = json::array();
  for (const auto& [name, value] : ckpt.tensors) {
    table.push_back({{"name", name}, {"rows", value.rows()}, {"cols", value.cols()}});
  }
  const json header = {{"kind", ckpt.kind},
                       {"encoder_spec", SpecToJson(ckpt.spec)},
                       {"use_global_branch", ckpt.use_global_branch},
                       {"tensors", std::move(table)},
                       {"norm", {{"mean", ckpt.norm.mean}, {"std", ckpt.norm.std}}},
                       {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, value] : ckpt.tensors) {
    out.write(reinterpret_cast<const char*>(value.data()),
              static_cast<std::streamsize>(value.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write on '" + path.string() + "'");
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.spec = SpecFromJson(header.at("encoder_spec"));
    ckpt.use_global_branch = header.at("use_global_branch").get<bool>();
    ckpt.norm.mean = header.at("norm").at("mean").get<std::vector<double>>();
    ckpt.norm.std = header.at("norm").at("std").get<std::vector<double>>();
    ckpt.metadata = header.at("metadata");
    for (const json& t : header.at("tensors")) {
      Eigen::MatrixXd value(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      in.read(reinterpret_cast<char*>(value.data()),
              static_cast<std::streamsize>(value.size() * sizeof(double)));
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(value));
    }
  } catch (const json::exception& e) {
    throw CheckpointError("'" + path.string() + "': bad header: " + e.what());
  }
  if (!in) throw CheckpointError("'" + path.string() + "' is truncated");
  return ckpt;
}

Checkpoint CaptureModel(GlobalLocalNet& net, const NormStats& norm) {
  Checkpoint ckpt;
  ckpt.kind = "model";
  ckpt.spec = net.spec();
  ckpt.use_global_branch = net.uses_global_branch();
  ckpt.norm = norm;
  for (ParamGroup g : AllGroups()) ckpt.AddModule(GroupName(g) + "/", net.module(g));
  auto add_norm = [&](const std::string& branch, const FeatureNorm& n) {
    if (n.empty()) return;
    ckpt.tensors.emplace_back("feature_norm/" + branch + "_mean", n.mean);
    ckpt.tensors.emplace_back("feature_norm/" + branch + "_inv_std", n.inv_std);
  };
  add_norm("global", net.global_feature_norm());
  add_norm("local", net.local_feature_norm());
  return ckpt;
}

GlobalLocalNet RestoreModel(const Checkpoint& ckpt) {
  if (ckpt.kind != "model") throw CheckpointError("expected a model checkpoint, got '" + ckpt.kind + "'");
  GlobalLocalNet net(ckpt.spec, ckpt.use_global_branch, 0);
  std::vector<std::string> problems;
  for (ParamGroup g : AllGroups()) ckpt.CopyInto(GroupName(g) + "/", net.module(g), problems);
  if (!problems.empty()) {
    std::string msg = "model checkpoint does not match its own spec:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw CheckpointError(msg);
  }
  auto read_norm = [&](const std::string& branch) {
    FeatureNorm n;
    for (const auto& [name, m] : ckpt.tensors) {
      if (name == "feature_norm/" + branch + "_mean") n.mean = m.reshaped();
      if (name == "feature_norm/" + branch + "_inv_std") n.inv_std = m.reshaped();
    }
    if (n.mean.size() != n.inv_std.size()) throw CheckpointError("incomplete feature_norm/" + branch);
    return n;
  };
  try {
    net.SetFeatureNorm(read_norm("global"), read_norm("local"));
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  return net;
}

std::vector<nn::Tensor> ProbeImages(int size, int channels, int count, std::uint64_t seed) {
  std::vector<nn::Tensor> probes;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    nn::Tensor t(channels, size, size);
    for (int c = 0; c < channels; ++c) {
      // Sum of three random plane waves.
      double fx[3], fy[3], ph[3];
      for (int k = 0; k < 3; ++k) {
        fx[k] = Uniform(rng, -0.3, 0.3);
        fy[k] = Uniform(rng, -0.3, 0.3);
        ph[k] = Uniform(rng, 0.0, 6.283185307179586);
      }
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          double v = 0;
          for (int k = 0; k < 3; ++k) v += std::sin(fx[k] * x + fy[k] * y + ph[k]);
          t.at(c, y, x) = v / 3.0;
        }
      }
    }
    probes.push_back(std::move(t));
  }
  return probes;
}

json RecordProbeLedger(const nn::Sequential& encoder, int size, int channels) {
  json embeddings = json::array();
  for (const auto& probe : ProbeImages(size, channels)) {
    const Eigen::VectorXd e = encoder.Forward(probe, nullptr).vector();
    embeddings.push_back(std::vector<double>(e.data(), e.data() + e.size()));
  }
  return {{"seed", kProbeSeed}, {"size", size}, {"channels", channels}, {"embeddings", std::move(embeddings)}};
}

double ProbeDeviation(const nn::Sequential& encoder, const json& ledger) {
  const int size = ledger.at("size").get<int>();
  const int channels = ledger.at("channels").get<int>();
  const auto probes = ProbeImages(size, channels, static_cast<int>(ledger.at("embeddings").size()),
                                  ledger.at("seed").get<std::uint64_t>());
  double worst = 0;
  for (size_t i = 0; i < probes.size(); ++i) {
    const auto expected = ledger.at("embeddings")[i].get<std::vector<double>>();
    const Eigen::VectorXd e = encoder.Forward(probes[i], nullptr).vector();
    if (static_cast<size_t>(e.size()) != expected.size()) return std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < expected.size(); ++k) worst = std::max(worst, std::abs(e[k] - expected[k]));
  }
  return worst;
}

void LoadBackbone(GlobalLocalNet& net, WeightsSource source, const Checkpoint* ckpt, std::uint64_t seed,
                  double probe_tolerance) {
  net.ReinitializeEncoders(seed);
  net.ReinitializeHead(seed);
  if (source == WeightsSource::kRandom) return;
  if (!ckpt) throw CheckpointError("pretrained backbone requested without a checkpoint");

  std::vector<std::string> offending;
  if (ckpt->spec.backbone != net.spec().backbone) offending.push_back("backbone");
  if (ckpt->spec.feature_dim != net.spec().feature_dim) offending.push_back("feature_dim");
  if (ckpt->spec.in_channels != net.spec().in_channels) offending.push_back("in_channels");

  std::vector<ParamGroup> groups = {ParamGroup::kLocalEncoder};
  if (net.uses_global_branch()) groups.insert(groups.begin(), ParamGroup::kGlobalEncoder);
  for (ParamGroup g : groups) {
    std::vector<std::string> problems;
    ckpt->CopyInto(GroupName(g) + "/", net.module(g), problems);
    if (!problems.empty()) {
      std::string detail = GroupName(g) + " (";
      for (size_t i = 0; i < problems.size(); ++i) detail += (i ? "; " : "") + problems[i];
      offending.push_back(detail + ")");
    }
  }
  if (!offending.empty()) {
    std::string msg = "checkpoint does not match encoder spec; offending groups:";
    for (const auto& o : offending) msg += " " + o;
    throw CheckpointError(msg);
  }

  if (ckpt->metadata.contains("probe_ledger")) {
    for (ParamGroup g : groups) {
      const std::string name = GroupName(g);
      if (!ckpt->metadata["probe_ledger"].contains(name)) continue;
      const double dev = ProbeDeviation(net.module(g), ckpt->metadata["probe_ledger"][name]);
      if (!(dev <= probe_tolerance)) {
        throw CheckpointError(name + " probe embeddings deviate by " + std::to_string(dev) +
                              " after load (tolerance " + std::to_string(probe_tolerance) + ")");
      }
    }
  }
}

}  // namespace rahand
