#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kdc2/cli.hpp"
#include "kdc2/datasets.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/objectives.hpp"
#include "kdc2/oracle_suite.hpp"
#include "kdc2/params.hpp"
#include "kdc2/signal.hpp"
#include "kdc2/views.hpp"

namespace py = pybind11;
using namespace kdc2;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& arrays) {
  std::vector<Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

Montage montage_for(const std::string& name, const std::vector<std::string>& channels) {
  return channels.empty() ? default_montage(name) : resolve_montage(name, channels);
}

Neighborhood parse_neighborhood(int n) {
  if (n == 4) return Neighborhood::four;
  if (n == 8) return Neighborhood::eight;
  throw ValidationError("neighborhood must be 4 or 8, got " + std::to_string(n));
}

}  // namespace

PYBIND11_MODULE(_kdc2, m) {
  m.doc() = "Knowledge-driven cross-view contrastive EEG pipeline";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<DimensionError> dimension(m, "DimensionError", base.ptr());
  static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
  static py::exception<ContractError> contract(m, "ContractError", base.ptr());
  static py::exception<OracleError> oracle(m, "OracleError", base.ptr());
  static py::exception<MontageError> montage(m, "MontageError", base.ptr());
  static py::exception<LookupError> lookup(m, "LookupError", base.ptr());
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  static py::exception<ParseError> parse(m, "ParseError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      py::object err = py::reinterpret_borrow<py::object>(parse.ptr())(e.what());
      err.attr("offset") = e.offset();
      PyErr_SetObject(parse.ptr(), err.ptr());
    } catch (const DimensionError& e) {
      dimension(e.what());
    } catch (const NumericError& e) {
      numeric(e.what());
    } catch (const ContractError& e) {
      contract(e.what());
    } catch (const OracleError& e) {
      oracle(e.what());
    } catch (const MontageError& e) {
      montage(e.what());
    } catch (const LookupError& e) {
      lookup(e.what());
    } catch (const ValidationError& e) {
      validation(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("differential_entropy", [](const std::vector<double>& x) { return differential_entropy(x); }, py::arg("x"),
        "0.5 * ln(2 pi e var) of a 1-D signal.");

  m.def(
      "preliminary_features",
      [](const Array& samples, double sample_rate_hz) {
        if (samples.ndim() != 2) throw DimensionError("preliminary_features: samples must be [channels, time]");
        EegSlice slice{to_tensor(samples), sample_rate_hz, 0};
        return to_array(preliminary_features(slice).values);
      },
      py::arg("samples"), py::arg("sample_rate_hz"), "Band DE features [channels, 5] of one slice.");

  m.def("default_montage_names", &default_montage_names);
  m.def("montage_channels", [](const std::string& name) { return default_montage(name).channel_names(); },
        py::arg("name"));

  m.def(
      "laplacian",
      [](const std::string& montage, const std::vector<std::string>& channels, int neighborhood) {
        return to_array(build_topology_graph(montage_for(montage, channels), parse_neighborhood(neighborhood)).laplacian);
      },
      py::arg("montage"), py::arg("channels") = std::vector<std::string>{}, py::arg("neighborhood") = 4,
      "Symmetric normalized adjacency with self loops, D^-1/2 (A + I) D^-1/2.");

  m.def(
      "scalp_view",
      [](const Array& features, const std::string& montage, const std::vector<std::string>& channels) {
        return to_array(build_scalp_view(PreliminaryFeatures{to_tensor(features)}, montage_for(montage, channels)).tensor);
      },
      py::arg("features"), py::arg("montage"), py::arg("channels") = std::vector<std::string>{},
      "Places a [channels, 5] feature matrix on the 9x9 grid.");

  m.def(
      "cross_correlation",
      [](const std::vector<Array>& reps, bool center) {
        ObjectiveOptions o;
        o.center = center;
        return to_array(cross_correlation(to_tensors(reps), o));
      },
      py::arg("reps"), py::arg("center") = false);
  m.def("barlow_twins_loss", [](const Array& c) { return barlow_twins_loss(to_tensor(c)); }, py::arg("correlation"));
  m.def(
      "cross_view_infonce",
      [](const std::vector<Array>& scalp, const std::vector<Array>& topo, double tau) {
        return cross_view_infonce(to_tensors(scalp), to_tensors(topo), tau);
      },
      py::arg("scalp"), py::arg("topo"), py::arg("tau") = 0.1);
  m.def("pretrain_loss", py::overload_cast<double, double, double, double>(&pretrain_loss), py::arg("inner"),
        py::arg("cross"), py::arg("log_sigma_s") = 0.0, py::arg("log_sigma_t") = 0.0);

  m.def(
      "synth_generate",
      [](std::size_t n_classes, std::size_t channels, std::size_t samples_per_class, double snr,
         double sample_rate_hz, double window_s, std::uint64_t seed) {
        SynthSpec spec;
        spec.n_classes = n_classes;
        spec.channels = channels;
        spec.samples_per_class = samples_per_class;
        spec.snr = snr;
        spec.sample_rate_hz = sample_rate_hz;
        spec.window_s = window_s;
        spec.seed = seed;
        const LabeledDataset ds = synth_generate(spec);
        const std::size_t n = ds.size(), c = ds.slices[0].channels(), t = ds.slices[0].length();
        Array samples(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(c),
                                               static_cast<py::ssize_t>(t)});
        double* dst = samples.mutable_data();
        for (const auto& s : ds.slices) dst = std::copy(s.samples.values().begin(), s.samples.values().end(), dst);
        py::dict out;
        out["samples"] = samples;
        out["labels"] = ds.labels;
        out["channel_names"] = ds.channel_names;
        out["class_names"] = ds.class_names;
        return out;
      },
      py::arg("n_classes") = 3, py::arg("channels") = 16, py::arg("samples_per_class") = 300, py::arg("snr") = 3.0,
      py::arg("sample_rate_hz") = 200.0, py::arg("window_s") = 1.0, py::arg("seed") = 0,
      "Balanced synthetic dataset: samples [N, c, t], labels, channel and class names.");

  m.def(
      "encode_recording",
      [](const Array& samples, const std::vector<std::string>& channel_names, double sample_rate_hz) {
        Recording r{channel_names, sample_rate_hz, to_tensor(samples)};
        return py::bytes(encode_recording(r));
      },
      py::arg("samples"), py::arg("channel_names"), py::arg("sample_rate_hz"));
  m.def(
      "decode_recording",
      [](const py::bytes& bytes) {
        const Recording r = decode_recording(std::string(bytes));
        py::dict out;
        out["samples"] = to_array(r.samples);
        out["channel_names"] = r.channel_names;
        out["sample_rate_hz"] = r.sample_rate_hz;
        return out;
      },
      py::arg("data"));

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        py::dict out;
        const ParameterSet params = load_checkpoint(path);
        for (const auto& [name, t] : params.entries()) out[py::str(name)] = to_array(t);
        return out;
      },
      py::arg("path"), "Parameters by name; insertion order is file order.");
  m.def(
      "save_checkpoint",
      [](const std::string& path, const py::dict& params) {
        ParameterSet p;
        for (const auto& [k, v] : params) p.set(py::cast<std::string>(k), to_tensor(py::cast<Array>(v)));
        save_checkpoint(path, p);
      },
      py::arg("path"), py::arg("params"));

  m.def(
      "run_oracle_suite",
      [](std::size_t instances, std::uint64_t seed) {
        OracleSuiteOptions o;
        o.instances = instances;
        o.seed = seed;
        py::list out;
        for (const auto& r : run_oracle_suite(o)) {
          py::dict d;
          d["name"] = r.name;
          d["instances"] = r.instances;
          d["resampled"] = r.resampled;
          d["gradients_checked"] = r.gradients_checked;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("instances") = 20, py::arg("seed") = 0);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process. Returns (exit_code, stdout, stderr).");
}
