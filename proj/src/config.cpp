#include "rahand/config.hpp"

#include <fstream>
#include <sstream>

#include "rahand/crossval.hpp"
#include "rahand/error.hpp"
#include "rahand/random.hpp"

namespace rahand {

using nlohmann::json;

namespace {

std::string PaddingName(PaddingPolicy p) { return p == PaddingPolicy::kZeroPad ? "zero_pad" : "clamp"; }

PaddingPolicy ParsePadding(const std::string& s) {
  if (s == "zero_pad") return PaddingPolicy::kZeroPad;
  if (s == "clamp") return PaddingPolicy::kClamp;
  throw SchemaError("padding_policy must be zero_pad or clamp, got '" + s + "'");
}

// Reads fields out of one JSON object, remembering the key path for errors.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(Where("") + " must be an object");
  }

  template <typename T>
  void Get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw SchemaError(Where(key) + " has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  Section Child(const char* key) const {
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, Where(key));
  }

  const json* Find(const char* key) const { return j_.contains(key) ? &j_.at(key) : nullptr; }
  std::string Where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
};

// Every key of `given` must exist in `schema`; null in the schema marks an
// optional value and accepts anything.
void CheckKeys(const json& given, const json& schema, const std::string& path) {
  if (!given.is_object()) throw SchemaError((path.empty() ? "config" : path) + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string where = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw SchemaError("unknown key '" + where + "'");
    const json& s = schema.at(it.key());
    if (s.is_object() && !s.empty()) CheckKeys(it.value(), s, where);
  }
}

json Pair(const std::pair<double, double>& p) { return json::array({p.first, p.second}); }

}  // namespace

ExperimentConfig ExperimentConfig::Defaults() {
  ExperimentConfig c;
  c.synth.marker_radius_px = 9;
  c.synth.background_clutter = 0.4;
  c.preprocess.model_input_px = 64;
  c.model.backbone = Backbone::kSmallCnn;
  c.model.feature_dim = 64;
  c.model.ffn_dim = 32;
  c.pretrain.global_crop_px = 64;
  c.finetune.train.learning_rate = 3e-4;
  c.finetune.train.epochs = 150;
  return c;
}

void ExperimentConfig::Validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw ConfigError("run_id must be a plain directory name, got '" + run_id + "'");
  }
  if (data.n_folds < 2) throw ConfigError("data.n_folds must be >= 2");
  if (data.corpus_patients < 1) throw ConfigError("data.corpus_patients must be >= 1");
  if (!(data.corpus_prevalence >= 0 && data.corpus_prevalence <= 1)) {
    throw ConfigError("data.corpus_prevalence must lie in [0, 1]");
  }
  synth.Validate();
  preprocess.Validate();
  model.Validate();
  pretrain.Validate();
  finetune.train.Validate();
  finetune.focal.Validate();
  if (!(eval.threshold > 0 && eval.threshold < 1)) throw ConfigError("eval.threshold must lie in (0, 1)");
  ParseVariant(eval.variant);
  if (eval.variants.empty()) throw ConfigError("eval.variants is empty");
  for (const auto& v : eval.variants) ParseVariant(v);
  if (eval.holdout_fold < -1 || eval.holdout_fold >= data.n_folds) {
    throw ConfigError("eval.holdout_fold must be -1 or a fold index below data.n_folds");
  }
}

std::uint64_t StageSeed(const ExperimentConfig& config, const std::string& stage) {
  return DeriveSeed(config.seed, stage);
}

json ConfigToJson(const ExperimentConfig& c) {
  json prevalence;
  bool uniform = true;
  for (double p : c.synth.prevalence) uniform = uniform && p == c.synth.prevalence[0];
  if (uniform) {
    prevalence = c.synth.prevalence[0];
  } else {
    prevalence = std::vector<double>(c.synth.prevalence.begin(), c.synth.prevalence.end());
  }
  std::vector<std::string> exclusions;
  for (JointLevel l : c.synth.joint_exclusions) exclusions.emplace_back(LevelName(l));

  const auto& d = c.pretrain;
  const auto& t = c.finetune.train;
  const auto& f = c.finetune.focal;
  return {
      {"run_id", c.run_id},
      {"seed", c.seed},
      {"test_mode", c.test_mode},
      {"data",
       {{"manifest", c.data.manifest},
        {"pretrain_corpus", c.data.pretrain_corpus},
        {"corpus_patients", c.data.corpus_patients},
        {"corpus_prevalence", c.data.corpus_prevalence},
        {"checkpoint", c.data.checkpoint},
        {"model", c.data.model},
        {"n_folds", c.data.n_folds}}},
      {"synth",
       {{"n_patients", c.synth.n_patients},
        {"images_per_patient", c.synth.images_per_patient},
        {"image_width", c.synth.image_width},
        {"image_height", c.synth.image_height},
        {"prevalence", prevalence},
        {"marker_intensity", c.synth.marker_intensity},
        {"marker_radius_px", c.synth.marker_radius_px},
        {"background_clutter", c.synth.background_clutter},
        {"landmark_jitter_px", c.synth.landmark_jitter_px},
        {"unlabeled_fraction", c.synth.unlabeled_fraction},
        {"joint_exclusions", exclusions}}},
      {"preprocess",
       {{"patch_size_px", c.preprocess.patch_size_px},
        {"model_input_px", c.preprocess.model_input_px},
        {"padding_policy", PaddingName(c.preprocess.padding_policy)}}},
      {"model",
       {{"backbone", BackboneName(c.model.backbone)},
        {"feature_dim", c.model.feature_dim},
        {"ffn_dim", c.model.ffn_dim},
        {"in_channels", c.model.in_channels}}},
      {"pretrain",
       {{"n_prototypes", d.n_prototypes},
        {"student_temp", d.student_temp},
        {"teacher_temp", d.teacher_temp},
        {"center_momentum", d.center_momentum},
        {"ema_momentum", d.ema_momentum},
        {"n_global_crops", d.n_global_crops},
        {"n_local_crops", d.n_local_crops},
        {"global_crop_scale", Pair(d.global_crop_scale)},
        {"local_crop_scale", Pair(d.local_crop_scale)},
        {"global_crop_px", d.global_crop_px},
        {"local_crop_px", d.local_crop_px},
        {"epochs", d.epochs},
        {"batch_size", d.batch_size},
        {"learning_rate", d.learning_rate},
        {"weight_decay", d.weight_decay},
        {"warmup_steps", d.warmup_steps},
        {"head_hidden_dim", d.head_hidden_dim},
        {"head_bottleneck_dim", d.head_bottleneck_dim},
        {"head_batch_standardize", d.head_batch_standardize},
        {"flip", d.flip},
        {"color_jitter", d.color_jitter},
        {"jitter_brightness", d.jitter_brightness},
        {"jitter_contrast", d.jitter_contrast},
        {"jitter_saturation", d.jitter_saturation},
        {"jitter_probability", d.jitter_probability},
        {"blur", d.blur},
        {"blur_probability", d.blur_probability},
        {"grayscale_probability", d.grayscale_probability},
        {"shared_encoders", d.shared_encoders},
        {"probe_batch", d.probe_batch},
        {"collapse_threshold", d.collapse_threshold}}},
      {"finetune",
       {{"learning_rate", t.learning_rate},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"loss", LossKindName(t.loss)},
        {"freeze", t.freeze},
        {"standardize_features", t.standardize_features},
        {"max_steps", t.max_steps},
        {"gamma", f.gamma},
        {"epsilon", f.epsilon},
        {"alpha", f.alpha ? json(*f.alpha) : json(nullptr)}}},
      {"eval",
       {{"threshold", c.eval.threshold},
        {"variant", c.eval.variant},
        {"variants", c.eval.variants},
        {"holdout_fold", c.eval.holdout_fold}}},
  };
}

ExperimentConfig ConfigFromJson(const json& j) {
  CheckKeys(j, ConfigToJson(ExperimentConfig::Defaults()), "");
  ExperimentConfig c = ExperimentConfig::Defaults();
  const Section root(j, "");
  root.Get("run_id", c.run_id);
  root.Get("seed", c.seed);
  root.Get("test_mode", c.test_mode);

  const Section data = root.Child("data");
  data.Get("manifest", c.data.manifest);
  data.Get("pretrain_corpus", c.data.pretrain_corpus);
  data.Get("corpus_patients", c.data.corpus_patients);
  data.Get("corpus_prevalence", c.data.corpus_prevalence);
  data.Get("checkpoint", c.data.checkpoint);
  data.Get("model", c.data.model);
  data.Get("n_folds", c.data.n_folds);

  const Section synth = root.Child("synth");
  synth.Get("n_patients", c.synth.n_patients);
  synth.Get("images_per_patient", c.synth.images_per_patient);
  synth.Get("image_width", c.synth.image_width);
  synth.Get("image_height", c.synth.image_height);
  if (const json* p = synth.Find("prevalence")) {
    if (p->is_number()) {
      c.synth.prevalence = SynthConfig::UniformPrevalence(p->get<double>());
    } else if (p->is_array() && p->size() == static_cast<size_t>(kNumJoints)) {
      for (int i = 0; i < kNumJoints; ++i) {
        if (!(*p)[i].is_number()) throw SchemaError("synth.prevalence[" + std::to_string(i) + "] is not a number");
        c.synth.prevalence[i] = (*p)[i].get<double>();
      }
    } else {
      throw SchemaError("synth.prevalence must be a number or a list of " + std::to_string(kNumJoints));
    }
  }
  synth.Get("marker_intensity", c.synth.marker_intensity);
  synth.Get("marker_radius_px", c.synth.marker_radius_px);
  synth.Get("background_clutter", c.synth.background_clutter);
  synth.Get("landmark_jitter_px", c.synth.landmark_jitter_px);
  synth.Get("unlabeled_fraction", c.synth.unlabeled_fraction);
  if (synth.Find("joint_exclusions")) {
    std::vector<std::string> names;
    synth.Get("joint_exclusions", names);
    c.synth.joint_exclusions.clear();
    for (const auto& n : names) c.synth.joint_exclusions.insert(ParseLevel(n));
  }

  const Section pre = root.Child("preprocess");
  pre.Get("patch_size_px", c.preprocess.patch_size_px);
  pre.Get("model_input_px", c.preprocess.model_input_px);
  if (pre.Find("padding_policy")) {
    std::string s;
    pre.Get("padding_policy", s);
    c.preprocess.padding_policy = ParsePadding(s);
  }

  const Section model = root.Child("model");
  if (model.Find("backbone")) {
    std::string s;
    model.Get("backbone", s);
    c.model.backbone = ParseBackbone(s);
  }
  model.Get("feature_dim", c.model.feature_dim);
  model.Get("ffn_dim", c.model.ffn_dim);
  model.Get("in_channels", c.model.in_channels);

  const Section pt = root.Child("pretrain");
  auto& d = c.pretrain;
  pt.Get("n_prototypes", d.n_prototypes);
  pt.Get("student_temp", d.student_temp);
  pt.Get("teacher_temp", d.teacher_temp);
  pt.Get("center_momentum", d.center_momentum);
  pt.Get("ema_momentum", d.ema_momentum);
  pt.Get("n_global_crops", d.n_global_crops);
  pt.Get("n_local_crops", d.n_local_crops);
  pt.Get("global_crop_scale", d.global_crop_scale);
  pt.Get("local_crop_scale", d.local_crop_scale);
  pt.Get("global_crop_px", d.global_crop_px);
  pt.Get("local_crop_px", d.local_crop_px);
  pt.Get("epochs", d.epochs);
  pt.Get("batch_size", d.batch_size);
  pt.Get("learning_rate", d.learning_rate);
  pt.Get("weight_decay", d.weight_decay);
  pt.Get("warmup_steps", d.warmup_steps);
  pt.Get("head_hidden_dim", d.head_hidden_dim);
  pt.Get("head_bottleneck_dim", d.head_bottleneck_dim);
  pt.Get("head_batch_standardize", d.head_batch_standardize);
  pt.Get("flip", d.flip);
  pt.Get("color_jitter", d.color_jitter);
  pt.Get("jitter_brightness", d.jitter_brightness);
  pt.Get("jitter_contrast", d.jitter_contrast);
  pt.Get("jitter_saturation", d.jitter_saturation);
  pt.Get("jitter_probability", d.jitter_probability);
  pt.Get("blur", d.blur);
  pt.Get("blur_probability", d.blur_probability);
  pt.Get("grayscale_probability", d.grayscale_probability);
  pt.Get("shared_encoders", d.shared_encoders);
  pt.Get("probe_batch", d.probe_batch);
  pt.Get("collapse_threshold", d.collapse_threshold);

  const Section ft = root.Child("finetune");
  auto& t = c.finetune.train;
  ft.Get("learning_rate", t.learning_rate);
  ft.Get("epochs", t.epochs);
  ft.Get("batch_size", t.batch_size);
  if (ft.Find("loss")) {
    std::string s;
    ft.Get("loss", s);
    t.loss = ParseLossKind(s);
  }
  ft.Get("freeze", t.freeze);
  ft.Get("standardize_features", t.standardize_features);
  ft.Get("max_steps", t.max_steps);
  ft.Get("gamma", c.finetune.focal.gamma);
  ft.Get("epsilon", c.finetune.focal.epsilon);
  if (const json* a = ft.Find("alpha")) {
    if (a->is_null()) {
      c.finetune.focal.alpha.reset();
    } else if (a->is_number()) {
      c.finetune.focal.alpha = a->get<double>();
    } else {
      throw SchemaError("finetune.alpha must be a number or null");
    }
  }

  const Section ev = root.Child("eval");
  ev.Get("threshold", c.eval.threshold);
  ev.Get("variant", c.eval.variant);
  ev.Get("variants", c.eval.variants);
  ev.Get("holdout_fold", c.eval.holdout_fold);
  return c;
}

void ApplyOverride(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &tree;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    path.push_back(part);
  }
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[path[i]];
  }
  if (!node->is_object() && !node->is_null()) {
    throw ConfigError("override key '" + key + "' descends into a non-object");
  }
  (*node)[path.back()] = std::move(value);
}

ExperimentConfig ResolveConfig(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json tree = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot read config '" + file.string() + "'");
    try {
      tree = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw SchemaError("config '" + file.string() + "': " + e.what());
    }
  }
  for (const auto& o : overrides) ApplyOverride(tree, o);
  ExperimentConfig c = ConfigFromJson(tree);
  c.Validate();
  return c;
}

}  // namespace rahand
