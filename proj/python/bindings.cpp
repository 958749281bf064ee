#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "bioanon/anonymizer.hpp"
#include "bioanon/error.hpp"
#include "bioanon/harness.hpp"
#include "bioanon/image_anon.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace bioanon;
using nlohmann::json;

namespace {

using GaitArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ImageArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

GaitSequence to_sequence(const GaitArray& a) {
  if (a.ndim() != 2 || a.shape(0) != kGaitFrames || a.shape(1) != kGaitColumns)
    throw py::value_error("gait sequence must have shape (100, 156)");
  GaitSequence seq;
  std::copy(a.data(), a.data() + a.size(), seq.frames.data());
  return seq;
}

GaitArray from_sequence(const GaitSequence& seq) {
  GaitArray out({static_cast<py::ssize_t>(seq.frames.rows()),
                 static_cast<py::ssize_t>(seq.frames.cols())});
  std::copy(seq.frames.data(), seq.frames.data() + seq.frames.size(), out.mutable_data());
  return out;
}

FaceImage to_image(const ImageArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("image must have shape (h, w, 3)");
  FaceImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

ImageArray from_image(const FaceImage& img) {
  ImageArray out({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width),
                  static_cast<py::ssize_t>(3)});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

AnonymizerContext context_for(const std::optional<fs::path>& background) {
  AnonymizerContext ctx;
  if (background)
    ctx.k_same_background = std::make_shared<const KSameBackground>(
        KSameBackground::from_dataset(load_dataset(*background)));
  return ctx;
}

py::dict result_dict(const EvaluationResult& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["modality"] = to_string(r.modality);
  d["anonymizer"] = r.anonymizer;
  d["anonymizer_params"] = r.anonymizer_params;
  d["recognizer"] = r.recognizer;
  d["protocol"] = r.protocol;
  d["anon_fraction"] = r.anon_fraction ? py::object(py::float_(*r.anon_fraction)) : py::none();
  d["selection"] = r.selection;
  d["n_identities"] = r.n_identities;
  d["repeat"] = r.repeat;
  d["seed"] = r.seed;
  d["accuracy"] = r.accuracy;
  d["chance_level"] = r.chance_level;
  d["n_test_samples"] = r.n_test_samples;
  return d;
}

py::dict error_dict(const CellError& e) {
  py::dict d;
  d["anonymizer"] = e.anonymizer;
  d["recognizer"] = e.recognizer;
  d["protocol"] = e.protocol;
  d["selection"] = e.selection;
  d["n_identities"] = e.n_identities;
  d["repeat"] = e.repeat;
  d["kind"] = std::string(to_string(e.kind));
  d["message"] = e.message;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Evaluation framework for biometric anonymization (native core)";

  static py::exception<Error> error_type(m, "BioanonError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "generate_gait",
      [](int identities, int sequences, Seed seed, const fs::path& out) {
        generate_synthetic_gait(identities, sequences, seed, out);
        return out / "manifest.json";
      },
      py::arg("identities"), py::arg("sequences"), py::arg("seed"), py::arg("out"));
  m.def(
      "generate_faces",
      [](int identities, int images, Seed seed, const fs::path& out) {
        generate_synthetic_faces(identities, images, seed, out);
        return out / "manifest.json";
      },
      py::arg("identities"), py::arg("images"), py::arg("seed"), py::arg("out"));

  m.def(
      "synthesize_gait",
      [](int identities, int sequences, Seed seed) {
        Dataset ds = synthesize_gait(identities, sequences, seed);
        py::list out;
        for (std::size_t i = 0; i < ds.samples.size(); ++i)
          for (const auto& s : ds.samples[i])
            out.append(py::make_tuple(ds.manifest.identities[i].id,
                                      from_sequence(std::get<GaitSequence>(s))));
        return out;
      },
      py::arg("identities"), py::arg("sequences"), py::arg("seed"),
      "In-memory gait dataset as a list of (identity, array[100, 156]) pairs.");

  m.def(
      "anonymize_gait",
      [](const GaitArray& seq, const std::string& spec, Seed seed) {
        const AnonymizerSpec s = anonymizer_from_json(json::parse(spec));
        return from_sequence(std::get<GaitSequence>(apply_anonymizer(s, to_sequence(seq), seed)));
      },
      py::arg("sequence"), py::arg("spec_json"), py::arg("seed") = 0);
  m.def(
      "anonymize_image",
      [](const ImageArray& img, const std::string& spec, Seed seed,
         const std::optional<fs::path>& background) {
        const AnonymizerSpec s = anonymizer_from_json(json::parse(spec));
        return from_image(
            std::get<FaceImage>(apply_anonymizer(s, to_image(img), seed, context_for(background))));
      },
      py::arg("image"), py::arg("spec_json"), py::arg("seed") = 0,
      py::arg("background") = py::none());
  m.def(
      "anonymize_dataset",
      [](const fs::path& dataset, const std::string& spec, Seed seed, const fs::path& out,
         const std::optional<fs::path>& background) {
        const AnonymizerSpec s = anonymizer_from_json(json::parse(spec));
        py::gil_scoped_release release;
        write_dataset(out, anonymize_dataset(load_dataset(dataset), s, seed, context_for(background)));
        return out / "manifest.json";
      },
      py::arg("dataset"), py::arg("spec_json"), py::arg("seed"), py::arg("out"),
      py::arg("background") = py::none());

  m.def("halving_grid", &halving_grid, py::arg("n_identities"));

  m.def(
      "resolve_config",
      [](const std::string& config, const fs::path& base_dir) {
        const RunConfig c = config_from_json(json::parse(config), base_dir);
        validate_config(c);
        return std::make_pair(config_to_json(c).dump(), run_id(c));
      },
      py::arg("config_json"), py::arg("base_dir") = fs::path(),
      "Resolved configuration JSON and its run id.");

  m.def(
      "select",
      [](const std::string& config, const fs::path& base_dir, std::size_t repeat) {
        RunConfig c = config_from_json(json::parse(config), base_dir);
        c.output.clear();
        py::gil_scoped_release release;
        Experiment ex(c);
        for (const Cell& cell : ex.cells())
          if (cell.repeat == repeat) return ex.select(cell);
        throw Error(ErrorKind::InvalidArgument, "repeat index out of range");
      },
      py::arg("config_json"), py::arg("base_dir") = fs::path(), py::arg("repeat") = 0,
      "Identities chosen by the first selection strategy and N of the config.");

  m.def(
      "run_experiment",
      [](const std::string& config, const fs::path& base_dir) {
        const RunConfig c = config_from_json(json::parse(config), base_dir);
        GridOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = run_experiment(c);
        }
        py::dict d;
        py::list results, errors;
        for (const auto& r : outcome.results) results.append(result_dict(r));
        for (const auto& e : outcome.errors) errors.append(error_dict(e));
        d["results"] = results;
        d["errors"] = errors;
        d["n_cells"] = outcome.n_cells;
        return d;
      },
      py::arg("config_json"), py::arg("base_dir") = fs::path());
}
