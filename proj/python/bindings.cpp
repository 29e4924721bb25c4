#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fedlora/accounting.hpp"
#include "fedlora/config.hpp"
#include "fedlora/error.hpp"
#include "fedlora/experiment.hpp"
#include "fedlora/federation.hpp"

namespace py = pybind11;
using namespace fedlora;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kShape, "expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

ConfigValues to_values(const std::map<std::string, std::string>& in) { return {in.begin(), in.end()}; }

py::tuple run(const std::map<std::string, std::string>& values) {
  const ExperimentConfig config = resolve_config(to_values(values));
  ExperimentResult result;
  {
    py::gil_scoped_release release;
    result = run_experiment(config);
  }
  std::ostringstream metrics;
  write_metrics_header(metrics);
  for (const auto& r : result.rounds) write_metrics_row(metrics, r, config.seed);
  return py::make_tuple(metrics.str(), summary_json(config, result));
}

std::uint64_t count(std::size_t feature_dim, std::size_t embed_dim, std::size_t image_blocks, std::size_t text_blocks,
                    std::size_t classes, const std::string& mode, const std::string& lora_targets,
                    std::size_t lora_rank, std::size_t aa_width) {
  AdaptationMode m;
  m.kind = parse_adaptation_kind(mode);
  m.lora.targets = parse_lora_targets(lora_targets);
  m.lora.rank = lora_rank;
  m.adapter_width = aa_width;
  return count_params(ModelShape{feature_dim, embed_dim, image_blocks, text_blocks, classes}, m);
}

py::dict aggregate_py(const std::vector<std::map<std::string, Array>>& payloads, const std::vector<std::size_t>& sizes) {
  std::vector<TransferPayload> in;
  for (const auto& p : payloads) {
    TransferPayload t;
    for (const auto& [name, value] : p) t.entries.emplace_back(name, to_matrix(value));
    in.push_back(std::move(t));
  }
  const TransferPayload out = aggregate(in, sizes);
  py::dict d;
  for (const auto& [name, value] : out.entries) d[py::str(name)] = to_array(value);
  return d;
}

}  // namespace

PYBIND11_MODULE(_fedlora, m) {
  m.doc() = "Bindings for the fedlora simulator core";

  static py::exception<Error> error_type(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error_type.ptr(),
                      py::make_tuple(std::string(error_code_name(e.code())), std::string(e.what())).ptr());
    }
  });

  m.def("canonical_config", [](const std::map<std::string, std::string>& v) {
    return canonical_config(resolve_config(to_values(v)));
  });
  m.def("config_hash", [](const std::map<std::string, std::string>& v) {
    return config_hash(resolve_config(to_values(v)));
  });
  m.def("run", &run, "Run one experiment; returns (metrics_csv, summary_json)");
  m.def("count_params", &count, py::arg("feature_dim"), py::arg("embed_dim"), py::arg("image_blocks"),
        py::arg("text_blocks"), py::arg("classes"), py::arg("mode"), py::arg("lora_targets") = "text",
        py::arg("lora_rank") = 2, py::arg("aa_width") = 16);
  m.def("payload_bytes", &payload_bytes, py::arg("params"), py::arg("bytes_per_param") = kDefaultBytesPerParam);
  m.def("format_megabytes", &format_megabytes);
  m.def("comm_cost_per_round", &comm_cost_per_round, py::arg("num_clients"), py::arg("sample_rate"),
        py::arg("payload_bytes"));
  m.def("verify_tables", [] {
    std::vector<py::tuple> rows;
    for (const auto& r : reproduce_size_tables()) rows.push_back(py::make_tuple(r.table, r.label, r.expected, r.computed, r.match));
    return rows;
  });
  m.def(
      "synth_dataset",
      [](std::size_t classes, std::size_t feature_dim, std::size_t per_class, double separation, double shift,
         std::uint64_t variant, std::uint64_t seed) {
        const Dataset d = synth_dataset(SynthSpec{classes, feature_dim, per_class, separation, shift, variant, seed});
        py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(d.size()));
        std::copy(d.labels.begin(), d.labels.end(), labels.mutable_data());
        return py::make_tuple(to_array(d.features), labels);
      },
      py::arg("classes"), py::arg("feature_dim"), py::arg("per_class"), py::arg("separation") = 5.0,
      py::arg("shift") = 0.0, py::arg("variant") = 0, py::arg("seed") = 0);
  m.def("aggregate", &aggregate_py, py::arg("payloads"), py::arg("sizes"));
}
