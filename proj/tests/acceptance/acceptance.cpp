// Acceptance suite. One line per criterion:
//
//   PASS  7 pretraining non-collapse: embedding std 0.0712 > 0.01 (48.2 s)
//
// Arguments select criteria by number (default: all). Exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <unistd.h>

#include "rahand/config.hpp"
#include "rahand/distill.hpp"
#include "rahand/finetune.hpp"
#include "rahand/focal.hpp"
#include "rahand/folds.hpp"
#include "rahand/metrics.hpp"
#include "rahand/pipeline.hpp"
#include "rahand/preprocess.hpp"
#include "rahand/synth.hpp"

using namespace rahand;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kFocalBceRelTol = 1e-9;
constexpr double kFocalValue = 1.0536e-3;  // -(0.1)^2 ln 0.9
constexpr double kFocalValueTol = 1e-7;
constexpr double kGradRelTol = 1e-3;
constexpr double kPaperRecall = 0.478, kPaperPrecision = 0.374, kPaperF1 = 0.420, kF1Tol = 0.001;
constexpr double kEmaTol = 1e-10;
constexpr double kCollapseFloor = 0.01;
constexpr double kFocalMargin = 0.05;
constexpr double kPretrainMargin = 0.03;
constexpr int kImpulseTolPx = 2;
const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double RelErr(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

fs::path ScratchRoot() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / ("rahand_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

Outcome FocalExactness() {
  Rng rng(101);
  FocalLossConfig g0;
  g0.gamma = 0;
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double p = Uniform01(rng);
    const std::optional<int> y = static_cast<int>(rng() % 2);
    worst = std::max(worst, RelErr(FocalLoss({p}, {y}, g0).value, BinaryCrossEntropy({p}, {y})));
  }
  const double v = FocalLoss({0.9}, {1}, FocalLossConfig{}).value;
  const bool ok = worst < kFocalBceRelTol && std::abs(v - kFocalValue) <= kFocalValueTol;
  return {ok, Fmt("gamma=0 vs BCE worst rel err %.2e; gamma=2,y=1,p=0.9 gives %.7e", worst, v)};
}

Outcome HeadGradients() {
  EncoderSpec spec;
  spec.backbone = Backbone::kSmallCnn;
  spec.feature_dim = 16;
  spec.ffn_dim = 8;
  Rng rng(202);
  double worst = 0;
  for (int s = 0; s < 5; ++s) {
    GlobalLocalNet net(spec, true, 300 + s);
    net.FreezeEncoders();
    PreparedSample sample;
    sample.global_image = nn::Tensor(3, 32, 32);
    for (int i = 0; i < sample.global_image.data.size(); ++i) sample.global_image.data.data()[i] = Normal(rng);
    std::vector<std::optional<int>> labels;
    for (int j = 0; j < 10; ++j) {
      nn::Tensor t(3, 32, 32);
      for (int i = 0; i < t.data.size(); ++i) t.data.data()[i] = Normal(rng);
      sample.local_patches.push_back(t);
      sample.joint_ids.push_back(JointId::FromIndex(j));
      labels.push_back(j % 5 == 4 ? std::nullopt : std::optional<int>(static_cast<int>(rng() % 2)));
    }
    sample.labels = labels;
    const FocalLossConfig focal;
    auto loss = [&] {
      const Eigen::VectorXd z = net.Logits(sample);
      return FocalLossFromLogits(std::vector<double>(z.data(), z.data() + z.size()), labels, focal).value;
    };
    net.ZeroGrad();
    SampleTrace trace;
    const Eigen::VectorXd z = net.ForwardTrain(sample, &trace);
    const LossValue lv = FocalLossFromLogits(std::vector<double>(z.data(), z.data() + z.size()), labels, focal);
    net.Backward(trace, Eigen::Map<const Eigen::VectorXd>(lv.grad.data(), lv.grad.size()));
    for (nn::Param* p : net.TrainableParams()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        double& v = p->value.data()[i];
        const double orig = v;
        v = orig + 1e-6;
        const double up = loss();
        v = orig - 1e-6;
        const double down = loss();
        v = orig;
        const double fd = (up - down) / 2e-6;
        const double an = p->grad.data()[i];
        // Entries where both are at rounding level carry no signal.
        if (std::max(std::abs(fd), std::abs(an)) > 1e-8) worst = std::max(worst, RelErr(an, fd));
      }
    }
  }
  return {worst < kGradRelTol, Fmt("worst relative error %.2e over 5 samples", worst)};
}

Outcome MetricArithmetic() {
  // recall = 478/1000, precision = 478/1278.
  const Metrics m = ComputeMetrics({.tp = 478, .fp = 800, .tn = 9000, .fn = 522});
  std::vector<double> p(100, 0.2);
  std::vector<std::optional<int>> y(100, 0);
  for (int i = 0; i < 100; i += 9) y[i] = 1;
  const Metrics neg = ComputeMetrics(Confusion(p, y));
  const bool ok = std::abs(m.recall - kPaperRecall) < 5e-4 && std::abs(m.precision - kPaperPrecision) < 5e-4 &&
                  std::abs(m.f1 - kPaperF1) <= kF1Tol && neg == Metrics{0, 0, 0, 0};
  return {ok, Fmt("F1 %.4f from recall %.3f, precision %.4f; ", m.f1, m.recall, m.precision) +
                  Fmt("all-negative gives %.3f/%.3f/%.3f", neg.recall, neg.precision, neg.f1) +
                  Fmt("/%.3f", neg.gmean)};
}

Outcome MetricOracle() {
  Rng rng(404);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 80);
    std::vector<double> p;
    std::vector<std::optional<int>> y;
    for (int i = 0; i < n; ++i) {
      p.push_back(trial % 5 == 0 ? 0.5 * static_cast<double>(rng() % 3) : Uniform01(rng));
      const auto r = rng() % 6;
      y.push_back(r == 0 ? std::nullopt : std::optional<int>(r == 1 ? 1 : 0));
    }
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      if (!y[i]) continue;
      const bool pos = p[i] >= 0.5;
      if (*y[i]) pos ? ++tp : ++fn;
      else pos ? ++fp : ++tn;
    }
    const double rec = tp + fn ? double(tp) / (tp + fn) : 0;
    const double pre = tp + fp ? double(tp) / (tp + fp) : 0;
    const double spe = tn + fp ? double(tn) / (tn + fp) : 0;
    const double f1 = pre + rec > 0 ? 2 * pre * rec / (pre + rec) : 0;
    const ConfusionCounts c = Confusion(p, y);
    const Metrics m = ComputeMetrics(c);
    if (!(c == ConfusionCounts{tp, fp, tn, fn}) || m.recall != rec || m.precision != pre || m.f1 != f1 ||
        m.gmean != std::sqrt(rec * spe)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 vectors"};
}

Outcome FreezeContract() {
  SynthConfig sc;
  sc.n_patients = 4;
  sc.prevalence = SynthConfig::UniformPrevalence(0.3);
  const ExperimentConfig d = ExperimentConfig::Defaults();
  std::vector<PreparedSample> train;
  std::vector<const PreparedSample*> ptrs;
  for (int i = 0; i < 8; ++i) {
    const SynthRecord r = RenderRecord(sc, i);
    train.push_back(PrepareSample(r.hand.image, r.hand.mask, r.record, ActiveJoints(sc.joint_exclusions), d.preprocess));
  }
  for (const auto& s : train) ptrs.push_back(&s);
  const NormStats norm = ComputeNormStats(ptrs);
  for (auto& s : train) s = Normalize(s, norm);

  TrainConfig cfg = d.finetune.train;
  cfg.batch_size = 2;
  cfg.max_steps = 100;
  GlobalLocalNet frozen(d.model, true, 7);
  const auto g0 = frozen.Checksum(ParamGroup::kGlobalEncoder), l0 = frozen.Checksum(ParamGroup::kLocalEncoder);
  const FinetuneLog log = FinetuneLoop(frozen, train, cfg, d.finetune.focal);
  const bool kept = frozen.Checksum(ParamGroup::kGlobalEncoder) == g0 &&
                    frozen.Checksum(ParamGroup::kLocalEncoder) == l0;

  cfg.freeze = false;
  GlobalLocalNet control(d.model, true, 7);
  const FinetuneLog clog = FinetuneLoop(control, train, cfg, d.finetune.focal);
  const bool moved = control.Checksum(ParamGroup::kGlobalEncoder) != g0 &&
                     control.Checksum(ParamGroup::kLocalEncoder) != l0;
  return {kept && moved && log.total_steps == 100 && clog.total_steps == 100,
          std::string("frozen encoders ") + (kept ? "unchanged" : "CHANGED") + " after " +
              std::to_string(log.total_steps) + " steps; unfrozen control " + (moved ? "changed" : "UNCHANGED")};
}

Outcome EmaExactness() {
  DistillConfig cfg;
  Rng ra(11), rb(12);
  nn::Sequential teacher = BuildProjectionHead(64, cfg, ra);
  nn::Sequential student = BuildProjectionHead(64, cfg, rb);
  std::vector<Eigen::MatrixXd> theta0;
  for (auto& np : teacher.Params()) theta0.push_back(np.param->value);
  const int n = 50;
  for (int i = 0; i < n; ++i) EmaUpdate(teacher, student, cfg.ema_momentum);
  const double mn = std::pow(cfg.ema_momentum, n);
  auto tp = teacher.Params();
  auto sp = student.Params();
  double worst = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    worst = std::max(worst, (tp[i].param->value - (mn * theta0[i] + (1 - mn) * sp[i].param->value)).cwiseAbs().maxCoeff());
  }
  return {worst < kEmaTol, Fmt("max deviation from closed form after 50 steps %.2e", worst)};
}

Outcome PretrainNonCollapse() {
  ExperimentConfig c = ExperimentConfig::Defaults();
  c.run_id = "c7";
  c.test_mode = true;
  const StageResult r = RunPretrain(c, ScratchRoot());
  const double spread = r.summary["embedding_std"];
  const std::size_t corpus = r.summary["corpus_size"];
  return {corpus == 500 && spread > kCollapseFloor,
          Fmt("teacher embedding std %.4f over the probe batch, corpus %.0f hands, final loss %.4f", spread,
              static_cast<double>(corpus), r.summary["final_loss"].get<double>())};
}

// Gmean of ours, no_pretrain, no_focal per seed; computed once, shared by 8 and 9.
const std::vector<std::array<double, 3>>& AblationGmeans() {
  static const std::vector<std::array<double, 3>> rows = [] {
    std::vector<std::array<double, 3>> out;
    for (std::uint64_t seed : kSeeds) {
      ExperimentConfig c = ExperimentConfig::Defaults();
      c.seed = seed;
      c.test_mode = true;
      c.run_id = "ablate_seed" + std::to_string(seed);
      c.eval.variants = {"ours", "no_pretrain", "no_focal"};
      const StageResult r = RunAblate(c, ScratchRoot());
      const auto& rows = r.summary["rows"];
      out.push_back({rows[0]["gmean"].get<double>(), rows[1]["gmean"].get<double>(), rows[2]["gmean"].get<double>()});
      std::printf("  seed %llu: Gmean ours %.3f, no_pretrain %.3f, no_focal %.3f\n",
                  static_cast<unsigned long long>(seed), out.back()[0], out.back()[1], out.back()[2]);
      std::fflush(stdout);
    }
    return out;
  }();
  return rows;
}

Outcome FocalBenefit() {
  std::vector<double> diffs;
  for (const auto& g : AblationGmeans()) diffs.push_back(g[0] - g[2]);
  const double med = Median(diffs);
  return {med >= kFocalMargin, Fmt("median Gmean(focal) - Gmean(bce) = %.3f (per seed %.3f, %.3f", med, diffs[0], diffs[1]) +
                                   Fmt(", %.3f)", diffs[2])};
}

Outcome PretrainBenefit() {
  std::vector<double> diffs;
  for (const auto& g : AblationGmeans()) diffs.push_back(g[0] - g[1]);
  const double med = Median(diffs);
  return {med >= kPretrainMargin,
          Fmt("median Gmean(pretrained) - Gmean(random) = %.3f (per seed %.3f, %.3f", med, diffs[0], diffs[1]) +
              Fmt(", %.3f)", diffs[2])};
}

Outcome FoldHygiene() {
  Rng rng(1010);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    DatasetManifest m;
    const int patients = 3 + static_cast<int>(rng() % 90);
    for (int p = 0; p < patients; ++p) {
      const std::string id = "pt" + std::to_string(rng() % 100000) + "_" + std::to_string(p);
      for (int k = 0, n = 1 + static_cast<int>(rng() % 4); k < n; ++k) {
        HandImageRecord r;
        r.image_path = id + "_" + std::to_string(k) + ".png";
        r.patient_id = id;
        m.records.push_back(r);
      }
    }
    const int n_folds = 2 + static_cast<int>(rng() % std::min(9, patients - 1));
    const FoldPlan plan = MakeFolds(m, n_folds, rng());
    std::set<std::string> tiled;
    for (int k = 0; k < n_folds; ++k) {
      const auto test = plan.TestPatients(k);
      const std::set<std::string> ts(test.begin(), test.end());
      for (const auto& p : plan.TrainPatients(k)) violations += ts.count(p);
      for (std::size_t i : plan.TrainRecords(m, k)) violations += ts.count(m.records[i].patient_id);
      for (const auto& p : test) violations += !tiled.insert(p).second;
    }
    const auto all = m.Patients();
    violations += tiled != std::set<std::string>(all.begin(), all.end());
  }
  return {violations == 0, std::to_string(violations) + " violations over 200 random manifests"};
}

Outcome Determinism() {
  ExperimentConfig c = ExperimentConfig::Defaults();
  c.seed = 5;
  c.test_mode = true;
  c.run_id = "det_a";
  const StageResult a = RunCrossval(c, ScratchRoot());
  c.run_id = "det_b";
  const StageResult b = RunCrossval(c, ScratchRoot());
  const std::string x = Slurp(a.dir / "aggregate.json"), y = Slurp(b.dir / "aggregate.json");
  const bool same = !x.empty() && x == y && Sha256File(a.dir / "folds.tsv") == Sha256File(b.dir / "folds.tsv");
  return {same, std::string("aggregate.json ") + (same ? "byte-identical" : "DIFFERS") + " across two runs, sha256 " +
                    Sha256File(a.dir / "aggregate.json").substr(0, 16)};
}

Outcome CropGeometry() {
  const SynthConfig sc;
  const SynthRecord rec = RenderRecord(sc, 0);
  CropSpec spec;  // 64 px windows resized to 224
  const auto joints = ActiveJoints({});
  int worst = 0;
  for (JointId j : joints) {
    Image img(sc.image_width, sc.image_height, 3);
    const Point p = rec.record.landmarks[j.index()];
    for (int ch = 0; ch < 3; ++ch) img.at(p.x, p.y, ch) = 255;
    const nn::Tensor t = CropJointPatches(img, rec.record.landmarks, spec, {j}).at(0);
    int by = 0, bx = 0;
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x)
        if (t.at(0, y, x) > t.at(0, by, bx)) by = y, bx = x;
    // Peak and centroid of the upsampled impulse.
    double sw = 0, sy = 0, sx = 0;
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        const double w = t.at(0, y, x);
        sw += w;
        sy += w * y;
        sx += w * x;
      }
    const double cy = sy / sw, cx = sx / sw, centre = (t.height - 1) / 2.0;
    const int off = static_cast<int>(std::ceil(std::max(std::abs(cy - centre), std::abs(cx - centre))));
    worst = std::max({worst, off, std::abs(by - t.height / 2), std::abs(bx - t.width / 2)});
  }
  return {worst <= kImpulseTolPx, "worst offset from patch centre " + std::to_string(worst) + " px over " +
                                      std::to_string(joints.size()) + " landmarks"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"focal-loss exactness", FocalExactness},
      {"head gradient correctness", HeadGradients},
      {"metric arithmetic", MetricArithmetic},
      {"metric oracle equivalence", MetricOracle},
      {"freeze contract", FreezeContract},
      {"EMA exactness", EmaExactness},
      {"pretraining non-collapse", PretrainNonCollapse},
      {"imbalance benefit of focal loss", FocalBenefit},
      {"benefit of pretraining", PretrainBenefit},
      {"fold hygiene", FoldHygiene},
      {"end-to-end determinism", Determinism},
      {"crop geometry", CropGeometry},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(ScratchRoot(), ec);
  return failures;
}
