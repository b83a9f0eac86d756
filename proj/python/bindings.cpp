#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "metabalance/datagen.hpp"
#include "metabalance/errors.hpp"
#include "metabalance/experiment.hpp"
#include "metabalance/losses.hpp"
#include "metabalance/metrics.hpp"

namespace py = pybind11;
using namespace metabalance;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array &a) {
  if (a.ndim() != 2)
    throw ShapeError("expected a 2-d array");
  const auto *p = a.data();
  return Matrix(a.shape(0), a.shape(1), std::vector<double>(p, p + a.size()));
}

Array to_array(const Matrix &m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

// JSON crosses the boundary as text; Python's json module does the rest.
py::object to_python(const nlohmann::json &j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object &o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict dataset_dict(const Dataset &ds) {
  py::dict d;
  d["features"] = to_array(ds.features);
  d["labels"] = to_array(ds.labels);
  d["prototypes"] = to_array(ds.class_prototypes);
  d["scene_of"] = ds.scene_of;
  d["scene_size"] = ds.scene_size;
  return d;
}

std::vector<EpisodeScores> episodes_from(const py::list &pairs) {
  // list of {"scene_id", "pair_id", "scores", "gt"} records, grouped by scene
  std::ostringstream dump;
  for (const auto &rec : pairs)
    dump << from_python(py::reinterpret_borrow<py::object>(rec)).dump() << '\n';
  return read_prediction_dump(dump.str());
}

} // namespace

PYBIND11_MODULE(_metabalance, m) {
  m.doc() = "Meta-learned class reweighting for imbalanced multi-label training";

  // Registered base first: later registrations are tried first.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ArgumentError>(m, "ArgumentError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<GenerationError>(m, "GenerationError", base);
  py::register_exception<MissingClassError>(m, "MissingClassError", base);

  m.def(
      "generate",
      [](std::size_t num_classes, std::size_t feature_dim, std::size_t num_instances,
         std::optional<double> target_ir, double zipf_s, double cooccur_p, std::uint64_t seed) {
        GenConfig g;
        g.num_classes = num_classes;
        g.feature_dim = feature_dim;
        g.num_instances = num_instances;
        g.target_ir = target_ir;
        g.zipf_s = zipf_s;
        g.cooccur_p = cooccur_p;
        g.seed = seed;
        return dataset_dict(generate(g));
      },
      py::arg("num_classes") = 20, py::arg("feature_dim") = 32, py::arg("num_instances") = 5000,
      py::arg("target_ir") = py::none(), py::arg("zipf_s") = 1.0, py::arg("cooccur_p") = 0.0,
      py::arg("seed") = 0);

  m.def("load_dataset", [](const std::filesystem::path &dir) { return dataset_dict(load_dataset(dir)); });

  m.def("imbalance_ratio", [](const Array &labels) { return imbalance_ratio(to_matrix(labels)); });
  m.def("imbalance_ratio_counts",
        [](const std::vector<std::size_t> &counts) { return imbalance_ratio(counts); });

  m.def("bce_per_class", [](const Array &y, const Array &yhat) {
    return to_array(bce_per_class(to_matrix(y), to_matrix(yhat)));
  });
  m.def("weighted_train_loss", [](const Array &w, const Array &l) {
    return weighted_train_loss(to_matrix(w), to_matrix(l));
  });
  m.def("inv_freq_meta_loss", [](const Array &l, const Array &y) {
    return inv_freq_meta_loss(to_matrix(l), class_stats(to_matrix(y)));
  });

  m.def(
      "apply_constraint",
      [](const std::vector<double> &scores, const std::string &strategy, double threshold) {
        std::vector<std::pair<std::size_t, double>> out;
        for (const Candidate &c : apply_constraint(scores, parse_constraint(strategy), threshold))
          out.emplace_back(c.class_id, c.score);
        return out;
      },
      py::arg("scores"), py::arg("strategy"), py::arg("threshold") = 0.9);

  m.def(
      "recall_at_k",
      [](const py::list &pairs, const std::vector<std::size_t> &k_values, const std::string &strategy) {
        return to_python(to_json(recall_at_k(episodes_from(pairs), k_values, parse_constraint(strategy))));
      },
      py::arg("pairs"), py::arg("k_values"), py::arg("strategy") = "with_constraint");

  m.def(
      "generate_dataset",
      [](const py::object &config, const std::filesystem::path &out_dir) {
        return cmd_gen(from_python(config), out_dir).imbalance_ratio;
      },
      py::arg("config"), py::arg("out_dir"));

  m.def(
      "train",
      [](const py::object &config) {
        ExperimentConfig cfg = parse_experiment_config(from_python(config));
        std::ostringstream log;
        std::vector<RunOutcome> runs;
        {
          py::gil_scoped_release release;
          runs = cmd_train(cfg, log);
        }
        py::list out;
        for (const RunOutcome &r : runs) {
          py::dict d;
          d["strategy"] = to_string(r.strategy);
          d["seed"] = r.seed;
          d["dir"] = r.dir;
          d["diverged"] = r.diverged;
          d["metrics"] = to_python(r.metrics.to_json());
          out.append(d);
        }
        return out;
      },
      py::arg("config"));

  m.def(
      "compare",
      [](const std::vector<std::filesystem::path> &run_dirs, const std::filesystem::path &out_dir) {
        return to_python(cmd_compare(run_dirs, out_dir).to_json());
      },
      py::arg("run_dirs"), py::arg("out_dir"));
}
