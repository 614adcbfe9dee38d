#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rahand/config.hpp"
#include "rahand/focal.hpp"
#include "rahand/folds.hpp"
#include "rahand/joints.hpp"
#include "rahand/manifest.hpp"
#include "rahand/metrics.hpp"
#include "rahand/pipeline.hpp"

namespace py = pybind11;
using namespace rahand;

namespace {

// JSON crosses the boundary as text.
py::object ToPy(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
nlohmann::json FromPy(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ExperimentConfig ConfigArg(const py::object& config, const std::vector<std::string>& overrides) {
  if (config.is_none()) return ResolveConfig("", overrides);
  if (py::isinstance<py::dict>(config)) {
    nlohmann::json tree = FromPy(config);
    for (const auto& o : overrides) ApplyOverride(tree, o);
    ExperimentConfig c = ConfigFromJson(tree);
    c.Validate();
    return c;
  }
  return ResolveConfig(config.cast<std::filesystem::path>(), overrides);
}

py::dict MetricsDict(const Metrics& m) {
  py::dict d;
  d["recall"] = m.recall;
  d["precision"] = m.precision;
  d["f1"] = m.f1;
  d["gmean"] = m.gmean;
  return d;
}

}  // namespace

PYBIND11_MODULE(_rahand, m) {
  m.doc() = "Per-joint inflammation detection pipeline";

  static PyObject* error_type = py::exception<Error>(m, "RahandError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("kind") = ErrorKindName(e.kind());
      if (const auto* s = dynamic_cast<const StageError*>(&e)) {
        inst.attr("stage") = s->stage();
        inst.attr("locus") = s->locus();
      }
      PyErr_SetObject(error_type, inst.ptr());
    }
  });

  m.def("joint_names", [] {
    std::vector<std::string> out;
    for (JointId j : AllJoints()) out.push_back(j.Name());
    return out;
  });

  m.def(
      "focal_loss",
      [](const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels, double gamma,
         double epsilon, std::optional<double> alpha) {
        FocalLossConfig cfg;
        cfg.gamma = gamma;
        cfg.epsilon = epsilon;
        cfg.alpha = alpha;
        cfg.Validate();
        const LossValue v = FocalLoss(predictions, labels, cfg);
        return py::make_tuple(v.value, v.grad);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("gamma") = 2.0, py::arg("epsilon") = 1e-7,
      py::arg("alpha") = py::none(), "Mean focal loss over labeled entries and its gradient.");

  m.def(
      "confusion",
      [](const std::vector<double>& predictions, const std::vector<std::optional<int>>& labels, double threshold) {
        const ConfusionCounts c = Confusion(predictions, labels, threshold);
        py::dict d;
        d["tp"] = c.tp;
        d["fp"] = c.fp;
        d["tn"] = c.tn;
        d["fn"] = c.fn;
        return d;
      },
      py::arg("predictions"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def(
      "metrics",
      [](long tp, long fp, long tn, long fn) { return MetricsDict(ComputeMetrics({tp, fp, tn, fn})); },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "make_folds",
      [](const std::vector<std::string>& patients, int n_folds, std::uint64_t seed) {
        const FoldPlan plan = MakeFolds(patients, n_folds, seed);
        std::vector<std::vector<std::string>> out;
        for (int k = 0; k < n_folds; ++k) out.push_back(plan.TestPatients(k));
        return out;
      },
      py::arg("patient_ids"), py::arg("n_folds"), py::arg("seed"), "Test patients of each fold.");

  m.def(
      "load_manifest",
      [](const std::filesystem::path& path) {
        const DatasetManifest mf = LoadManifest(path);
        py::list rows;
        const std::string text = SerializeManifest(mf);
        size_t start = text.find('\n') + 1;
        while (start < text.size()) {
          const size_t end = text.find('\n', start);
          rows.append(ToPy(nlohmann::json::parse(text.substr(start, end - start))));
          start = end + 1;
        }
        return rows;
      },
      py::arg("path"), "Validated manifest records as dicts.");

  m.def(
      "resolve_config",
      [](const py::object& config, const std::vector<std::string>& overrides) {
        return ToPy(ConfigToJson(ConfigArg(config, overrides)));
      },
      py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{});

  using StageFn = StageResult (*)(const ExperimentConfig&, const std::filesystem::path&);
  const std::vector<std::pair<const char*, StageFn>> stages = {
      {"synth", RunSynth},       {"pretrain", RunPretrain}, {"finetune", RunFinetune},
      {"evaluate", RunEvaluate}, {"crossval", RunCrossval}, {"ablate", RunAblate},
  };
  for (const auto& [name, fn] : stages) {
    m.def(
        name,
        [fn = fn](const py::object& config, const std::vector<std::string>& overrides,
                  const std::optional<std::filesystem::path>& run_root) {
          const ExperimentConfig c = ConfigArg(config, overrides);
          StageResult r;
          {
            py::gil_scoped_release release;
            r = fn(c, run_root ? *run_root : DefaultRunRoot());
          }
          py::dict d;
          d["dir"] = r.dir;
          d["summary"] = ToPy(r.summary);
          return d;
        },
        py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        py::arg("run_root") = py::none());
  }

  m.def("sha256_file", &Sha256File, py::arg("path"));
}
