// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the core operations. Long-running calls release the GIL.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "ircount/arch.hpp"
#include "ircount/baseline.hpp"
#include "ircount/cost_model.hpp"
#include "ircount/dataset.hpp"
#include "ircount/error.hpp"
#include "ircount/explorer.hpp"
#include "ircount/metrics.hpp"
#include "ircount/model_file.hpp"
#include "ircount/report.hpp"
#include "ircount/synth.hpp"

namespace py = pybind11;
using namespace ircount;

namespace {

py::dict metrics_dict(const FoldMetrics& m) {
  py::dict d;
  d["bal_acc"] = m.bal_acc;
  d["acc"] = m.acc;
  d["f1"] = m.f1;
  d["mae"] = m.mae;
  d["mse"] = m.mse;
  d["n_test"] = m.n_test;
  return d;
}

py::dict aggregate_dict(const AggregatedMetrics& a) {
  py::dict d;
  for (auto [name, v] : {std::pair{"bal_acc", a.bal_acc}, {"acc", a.acc}, {"f1", a.f1}, {"mae", a.mae}, {"mse", a.mse}})
    d[name] = py::make_tuple(v.mean, v.std);
  return d;
}

py::dict cost_dict(const CostReport& c) {
  py::dict d;
  d["params"] = c.params;
  d["params_folded"] = c.params_folded;
  d["macs"] = c.macs;
  d["size_float"] = c.size_float;
  d["size_int8"] = c.size_int8;
  return d;
}

py::dict record_dict(const ResultRecord& r) {
  py::dict d;
  d["spec"] = r.spec;
  d["family"] = std::string(family_name(r.family));
  d["window"] = r.window;
  d["precision"] = std::string(precision_name(r.precision));
  d["status"] = r.status;
  py::dict folds;
  for (const auto& f : r.folds) folds[py::int_(f.test_session)] = metrics_dict(f.metrics);
  d["folds"] = folds;
  d["agg"] = aggregate_dict(r.agg);
  d["cost"] = cost_dict(r.cost);
  d["model_seed"] = r.model_seed;
  d["float_only"] = r.float_only;
  d["config_digest"] = r.config_digest;
  return d;
}

std::vector<Family> families_from(const std::vector<std::string>& names) {
  if (names.empty()) return all_families();
  std::vector<Family> out;
  for (const auto& n : names) out.push_back(parse_family(n));
  return out;
}

std::vector<SessionRecord> load(const std::filesystem::path& path, bool keep_low_confidence) {
  LoadOptions opt;
  opt.filter_low_confidence = !keep_low_confidence;
  return load_sessions(path, opt);
}

}  // namespace

PYBIND11_MODULE(_ircount, m) {
  m.doc() = "People counting on 8x8 thermal frames: models, costs, training, exploration, baseline.";
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  // Architectures and costs.
  m.def("canonical_arch", [](const std::string& s) { return parse_arch(s).str(); }, py::arg("arch"),
        "Canonical form of an architecture string; raises Error when invalid.");
  m.def("cost", [](const std::string& s) { return cost_dict(cost_report(parse_arch(s))); }, py::arg("arch"),
        "Parameter, MAC and size counts.");
  m.def(
      "enumerate_family",
      [](const std::string& family, const std::vector<std::string>& extractors) {
        std::vector<ModelSpec> ex;
        for (const auto& e : extractors) ex.push_back(parse_arch(e));
        std::vector<std::string> out;
        for (const auto& s : enumerate_family(parse_family(family), ex)) out.push_back(s.str());
        return out;
      },
      py::arg("family"), py::arg("extractors") = std::vector<std::string>{},
      "Grid of one family. mv, cat, lstm and tcn take sf specs whose conv prefix is reused.");

  // Metrics.
  m.def(
      "evaluate",
      [](const std::vector<int>& preds, const std::vector<int>& labels, int k) {
        return metrics_dict(evaluate_predictions(preds, labels, k));
      },
      py::arg("preds"), py::arg("labels"), py::arg("num_classes") = kDefaultClasses);
  m.def(
      "aggregate_folds",
      [](const std::vector<double>& values, const std::vector<double>& weights) {
        const Aggregate a = aggregate_folds(values, weights);
        return py::make_tuple(a.mean, a.std);
      },
      py::arg("values"), py::arg("weights"), "Weighted mean and population standard deviation.");
  m.def(
      "pareto_front",
      [](const std::vector<double>& cost, const std::vector<double>& acc, std::vector<std::string> keys) {
        if (cost.size() != acc.size()) throw Error("cost and accuracy lengths differ");
        if (keys.empty())
          for (std::size_t i = 0; i < cost.size(); ++i) keys.push_back(std::to_string(i));
        if (keys.size() != cost.size()) throw Error("keys length differs");
        std::vector<ParetoPoint> pts;
        for (std::size_t i = 0; i < cost.size(); ++i) pts.push_back({cost[i], acc[i], keys[i]});
        return pareto_front(pts);
      },
      py::arg("cost"), py::arg("accuracy"), py::arg("keys") = std::vector<std::string>{},
      "Indices of the non-dominated points by increasing cost.");

  // Data.
  m.def(
      "write_synthetic",
      [](const std::filesystem::path& path, double scale, std::uint64_t seed) {
        SynthConfig cfg;
        cfg.scale = scale;
        cfg.seed = seed;
        py::gil_scoped_release nogil;
        save_sessions(path, generate_synthetic(cfg));
      },
      py::arg("path"), py::arg("scale") = 1.0, py::arg("seed") = 1);
  m.def(
      "load_sessions",
      [](const std::filesystem::path& path, bool keep_low_confidence) {
        const auto sessions = load(path, keep_low_confidence);
        py::list out;
        for (const auto& s : sessions) {
          py::array_t<float> frames({py::ssize_t(s.size()), py::ssize_t(8), py::ssize_t(8)});
          auto f = frames.mutable_unchecked<3>();
          for (std::size_t i = 0; i < s.size(); ++i)
            for (int r = 0; r < 8; ++r)
              for (int c = 0; c < 8; ++c) f(py::ssize_t(i), r, c) = s.frames[i].values()[std::size_t(r * 8 + c)];
          py::dict d;
          d["session_id"] = s.session_id;
          d["frames"] = frames;
          d["labels"] = s.labels;
          d["frame_idx"] = s.frame_idx;
          out.append(d);
        }
        return out;
      },
      py::arg("path"), py::arg("keep_low_confidence") = false,
      "Sessions as dicts with frames (n, 8, 8) in degrees Celsius and labels.");

  // Baseline.
  m.def(
      "run_baseline",
      [](const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
        BaselineConfig cfg;
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        cfg.validate();
        const auto sessions = load(path, false);
        std::vector<FoldMetrics> folds;
        py::dict per_fold;
        {
          py::gil_scoped_release nogil;
          for (const auto& f : make_folds(sessions)) {
            const auto& s = find_session(sessions, f.test_session);
            folds.push_back(evaluate_predictions(run_baseline(s, cfg), s.labels, kDefaultClasses));
          }
        }
        const auto fs = make_folds(sessions);
        for (std::size_t i = 0; i < fs.size(); ++i) per_fold[py::int_(fs[i].test_session)] = metrics_dict(folds[i]);
        py::dict d;
        d["folds"] = per_fold;
        d["agg"] = aggregate_dict(aggregate(folds));
        return d;
      },
      py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Per-fold and aggregated metrics of the blob-counting baseline.");

  // Training and exploration.
  m.def(
      "train_fold",
      [](const std::filesystem::path& path, const std::string& arch, int fold, std::uint64_t seed, bool qat,
         int max_epochs) {
        const ModelSpec spec = parse_arch(arch);
        const auto sessions = load(path, false);
        std::optional<Fold> chosen;
        for (const auto& f : make_folds(sessions))
          if (f.test_session == fold) chosen = f;
        if (!chosen) throw Error("no fold with test session " + std::to_string(fold));
        ExploreConfig cfg;
        cfg.quantize = qat;
        if (max_epochs > 0) cfg.float_cfg.max_epochs = cfg.qat_cfg.max_epochs = max_epochs;
        FoldOutcome o;
        {
          py::gil_scoped_release nogil;
          o = run_fold(sessions, *chosen, spec, model_seed(seed, spec), cfg);
        }
        py::dict d;
        d["float"] = metrics_dict(o.float_metrics);
        d["int8"] = o.int8_metrics ? py::object(metrics_dict(*o.int8_metrics)) : py::none();
        d["seconds"] = o.seconds;
        return d;
      },
      py::arg("path"), py::arg("arch"), py::arg("fold"), py::arg("seed") = 0, py::arg("qat") = false,
      py::arg("max_epochs") = 0, "Trains one spec on one fold; returns float and int8 metrics.");
  m.def(
      "explore",
      [](const std::filesystem::path& path, const std::vector<std::string>& families,
         const std::filesystem::path& out, std::uint64_t seed, bool quantize, int jobs, int max_epochs,
         std::size_t max_specs, const std::vector<int>& folds, bool sf_pooled) {
        ExploreConfig cfg;
        cfg.families = families_from(families);
        cfg.grid.two_conv_requires_pool = sf_pooled;
        cfg.master_seed = seed;
        cfg.quantize = quantize;
        cfg.jobs = jobs;
        cfg.results_path = out;
        cfg.max_specs_per_family = max_specs;
        cfg.folds = folds;
        if (max_epochs > 0) cfg.float_cfg.max_epochs = cfg.qat_cfg.max_epochs = max_epochs;
        const auto sessions = load(path, false);
        std::vector<ResultRecord> records;
        {
          py::gil_scoped_release nogil;
          records = run_grid(sessions, cfg);
        }
        py::list l;
        for (const auto& r : records) l.append(record_dict(r));
        return l;
      },
      py::arg("path"), py::arg("families") = std::vector<std::string>{}, py::arg("out") = "results.csv",
      py::arg("seed") = 0, py::arg("quantize") = true, py::arg("jobs") = 1, py::arg("max_epochs") = 0,
      py::arg("max_specs") = 0, py::arg("folds") = std::vector<int>{}, py::arg("sf_pooled") = false,
      "Staged grid exploration; resumes from and appends to `out`.");
  m.def(
      "read_results",
      [](const std::filesystem::path& path) {
        py::list l;
        for (const auto& r : read_results_file(path)) l.append(record_dict(r));
        return l;
      },
      py::arg("path"));
  m.def(
      "write_report",
      [](const std::filesystem::path& results, const std::filesystem::path& out_dir, const std::string& axis) {
        const ReportFiles f = write_report(read_results_file(results), parse_axis(axis), out_dir);
        py::dict d;
        d["markdown"] = f.markdown;
        d["csv"] = f.csv;
        d["svg"] = f.svg;
        return d;
      },
      py::arg("results"), py::arg("out_dir"), py::arg("axis") = "macs");
  m.def(
      "config_digest", [](const std::string& s) { return config_digest(s); }, py::arg("text"));
}
