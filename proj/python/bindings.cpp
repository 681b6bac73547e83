#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cseg/checkpoint.hpp"
#include "cseg/cli.hpp"
#include "cseg/commands.hpp"
#include "cseg/error.hpp"
#include "cseg/metrics.hpp"
#include "cseg/parallel.hpp"
#include "cseg/polygon.hpp"

namespace py = pybind11;
using namespace cseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
    return Tensor(Shape(dims), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
    std::vector<py::ssize_t> dims;
    for (std::size_t i = 0; i < t.rank(); ++i) dims.push_back(static_cast<py::ssize_t>(t.dim(i)));
    FloatArray out(dims);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

py::dict report_dict(const MetricReport& r) {
    py::dict d;
    d["soft_dice"] = r.soft_dice;
    d["hard_dice"] = r.hard_dice;
    d["pixel_accuracy"] = r.pixel_accuracy;
    d["threshold"] = r.threshold;
    d["epsilon"] = r.epsilon;
    return d;
}

py::list history_list(const History& h) {
    py::list out;
    for (const auto& r : h.records) {
        py::dict d;
        d["epoch"] = r.epoch;
        d["train_loss"] = r.train_loss;
        d["val_soft_dice"] = r.val_soft_dice;
        d["val_pixel_acc"] = r.val_pixel_acc;
        d["seconds"] = r.seconds;
        out.append(d);
    }
    return out;
}

// Rings are sequences of (x, y) pairs; the first ring of each polygon is its outer boundary.
std::vector<PolygonLabel> to_polygons(const std::vector<std::vector<std::vector<std::pair<double, double>>>>& polys) {
    std::vector<PolygonLabel> out;
    for (const auto& rings : polys) {
        PolygonLabel p;
        for (const auto& ring : rings) {
            Ring r;
            for (auto [x, y] : ring) r.push_back({x, y});
            p.rings.push_back(std::move(r));
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "U-Net crop segmentation core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());

    m.def("set_reference_mode", &set_reference_mode, py::arg("on"));
    m.def("set_num_threads", &set_num_threads, py::arg("n"));

    py::class_<UNetConfig>(m, "UNetConfig")
        .def_readonly("input_size", &UNetConfig::input_size)
        .def_readonly("max_filters", &UNetConfig::max_filters)
        .def_readonly("depth", &UNetConfig::depth)
        .def_readonly("use_se", &UNetConfig::use_se)
        .def_readonly("in_channels", &UNetConfig::in_channels)
        .def_property_readonly("name", &UNetConfig::name)
        .def_property_readonly("base_filters", &UNetConfig::base_filters)
        .def("stage_width", &UNetConfig::stage_width, py::arg("stage"))
        .def("encoder_widths", &UNetConfig::encoder_widths)
        .def("to_text", &UNetConfig::to_text)
        .def("__eq__", [](const UNetConfig& a, const UNetConfig& b) { return a == b; })
        .def("__repr__", [](const UNetConfig& c) { return "UNetConfig('" + c.name() + "')"; });
    m.def("parse_config_name", &parse_config_name, py::arg("name"));
    m.def("parse_config_text", &parse_config_text, py::arg("text"));
    m.def("results_table_names", &results_table_names);

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& name, std::uint64_t seed) { return build_model(name, seed); }),
             py::arg("name"), py::arg("seed") = 0)
        .def_property_readonly("config", &Model::config)
        .def("param_count", &Model::param_count)
        .def("se_sites", &Model::se_sites)
        .def(
            "predict",
            [](const Model& model, const FloatArray& batch) {
                const Tensor x = to_tensor(batch);
                Tensor y;
                {
                    py::gil_scoped_release release;
                    y = model.predict(x);
                }
                return to_array(y);
            },
            py::arg("batch"), "Probabilities [B,1,IS,IS] for a normalized batch [B,C,IS,IS].")
        .def(
            "save", [](const Model& model, const std::filesystem::path& path) { save_checkpoint(path, model); },
            py::arg("path"));

    m.def(
        "load_model", [](const std::filesystem::path& path) { return load_checkpoint(path).model; }, py::arg("path"));

    m.def(
        "soft_dice", [](const FloatArray& p, const FloatArray& t, double eps) { return soft_dice(to_tensor(p), to_tensor(t), eps); },
        py::arg("pred"), py::arg("target"), py::arg("epsilon") = kDefaultDiceEpsilon);
    m.def(
        "binarize", [](const FloatArray& p, double thr) { return to_array(binarize(to_tensor(p), thr)); }, py::arg("pred"),
        py::arg("threshold") = kDefaultThreshold);
    m.def(
        "pixel_accuracy", [](const FloatArray& p, const FloatArray& t) { return pixel_accuracy(to_tensor(p), to_tensor(t)); },
        py::arg("pred_binary"), py::arg("target"));
    m.def(
        "rasterize",
        [](const std::vector<std::vector<std::vector<std::pair<double, double>>>>& polys, std::size_t width,
           std::size_t height) { return to_array(rasterize(to_polygons(polys), width, height)); },
        py::arg("polygons"), py::arg("width"), py::arg("height"));

    m.def(
        "synth",
        [](const std::filesystem::path& out, std::size_t n, std::size_t size, std::uint64_t seed, std::size_t channels,
           double val_fraction) { return cmd_synth(out, n, size, seed, channels, val_fraction).manifest; },
        py::arg("out_dir"), py::arg("n_scenes"), py::arg("size") = 192, py::arg("seed") = 0, py::arg("channels") = 3,
        py::arg("val_fraction") = 0.25, "Writes a synthetic dataset and returns the manifest path.");
    m.def(
        "train",
        [](const std::filesystem::path& config, bool resume) {
            RunConfig rc = load_run_config(config);
            apply_runtime(rc);
            TrainOutputs out;
            {
                py::gil_scoped_release release;
                out = cmd_train(rc, resume);
            }
            py::dict d;
            d["best_checkpoint"] = out.best_checkpoint;
            d["last_checkpoint"] = out.last_checkpoint;
            d["history_file"] = out.history_file;
            d["history"] = history_list(out.history);
            return d;
        },
        py::arg("config"), py::arg("resume") = false);
    m.def(
        "evaluate",
        [](const std::filesystem::path& ckpt, const std::filesystem::path& manifest, const std::string& split,
           const std::filesystem::path& out, double eps, double thr) {
            return report_dict(cmd_eval(ckpt, manifest, split, out, eps, thr).report);
        },
        py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "val", py::arg("out_dir") = "eval",
        py::arg("epsilon") = kDefaultDiceEpsilon, py::arg("threshold") = kDefaultThreshold);
    m.def(
        "predict",
        [](const std::filesystem::path& ckpt, const std::filesystem::path& image, const std::filesystem::path& out,
           std::size_t stride, double thr) { return to_array(cmd_predict(ckpt, image, out, stride, std::nullopt, thr).probabilities); },
        py::arg("checkpoint"), py::arg("image"), py::arg("out_dir"), py::arg("stride") = 0,
        py::arg("threshold") = kDefaultThreshold, "Sliding-window probabilities [1,H,W]; also writes the output files.");
    m.def(
        "gradcheck",
        [](const std::string& scope) {
            GradcheckReport r;
            const auto s = parse_gradcheck_scope(scope);
            {
                py::gil_scoped_release release;
                r = cmd_gradcheck(s);
            }
            return py::make_tuple(r.passed(), r.table());
        },
        py::arg("scope") = "layer", "Returns (passed, csv table).");
    m.def(
        "benchmark",
        [](const std::vector<std::string>& names, const std::filesystem::path& config) {
            RunConfig rc = load_run_config(config);
            apply_runtime(rc);
            std::vector<BenchmarkRow> rows;
            {
                py::gil_scoped_release release;
                rows = cmd_benchmark(names, rc);
            }
            std::string csv = benchmark_header() + "\n";
            for (const auto& r : rows) csv += format_benchmark_row(r) + "\n";
            return csv;
        },
        py::arg("names"), py::arg("config"), "Trains each architecture and returns the benchmark CSV.");
    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "cseg");
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            return run_cli(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Runs the command-line front end and returns its exit code.");
}
