#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "specgeo/errors.hpp"
#include "specgeo/formats.hpp"
#include "specgeo/recurrent_head.hpp"
#include "specgeo/rmt_kd.hpp"
#include "specgeo/rmt_laws.hpp"
#include "specgeo/spectral_features.hpp"
#include "specgeo/stream_window.hpp"

namespace py = pybind11;
using namespace specgeo;

namespace {

EigenSpectrum spectrum_from(std::vector<double> eigenvalues, std::size_t n, std::size_t d) {
    if (n == 0 && d == 0) return make_spectrum(std::move(eigenvalues));
    return make_spectrum(std::move(eigenvalues), n, d);
}

py::dict mp_dict(const MpParams& p) {
    py::dict out;
    out["sigma2"] = p.sigma2();
    out["q"] = p.q();
    out["lambda_minus"] = p.lambda_minus();
    out["lambda_plus"] = p.lambda_plus();
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "specgeo native core";

    auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", data_error.ptr());

    m.attr("FEATURE_COUNT") = kFeatureCount;
    m.attr("FEATURE_SCHEMA_VERSION") = kFeatureSchemaVersion;

    // ---- laws
    m.def("mp_support", &mp_support, py::arg("sigma2"), py::arg("q"));
    m.def(
        "mp_density", [](double lambda, double sigma2, double q) { return mp_density(lambda, MpParams(sigma2, q)); },
        py::arg("lam"), py::arg("sigma2"), py::arg("q"));
    m.def(
        "mp_cdf", [](double lambda, double sigma2, double q) { return mp_cdf(lambda, MpParams(sigma2, q)); },
        py::arg("lam"), py::arg("sigma2"), py::arg("q"));
    m.def(
        "mp_quantile", [](double p, double sigma2, double q) { return mp_quantile(p, MpParams(sigma2, q)); },
        py::arg("p"), py::arg("sigma2"), py::arg("q"));
    m.def("bbp_threshold", &bbp_threshold, py::arg("sigma2"), py::arg("c"));
    m.def("bbp_outlier_location", &bbp_outlier_location, py::arg("ell"), py::arg("sigma2"), py::arg("c"));
    m.def(
        "tw_standardize",
        [](double lambda1, double sigma2, double q, std::size_t n) {
            return tw_standardize(lambda1, MpParams(sigma2, q), n);
        },
        py::arg("lambda1"), py::arg("sigma2"), py::arg("q"), py::arg("n_samples"));
    m.def("tw_tail_probability", py::overload_cast<double>(&tw_tail_probability), py::arg("s"));

    m.def(
        "fit_mp",
        [](std::vector<double> eigenvalues, std::size_t n, std::size_t d, double tau, std::size_t bins) {
            const auto spec = spectrum_from(std::move(eigenvalues), n, d);
            const double q = static_cast<double>(spec.d_features) / static_cast<double>(spec.n_samples);
            return mp_dict(fit_sigma2(spec, q, estimate_sigma2_quantile(spec, tau), bins));
        },
        py::arg("eigenvalues"), py::arg("n_samples"), py::arg("d_features"), py::arg("tau") = 0.5,
        py::arg("bins") = 64);
    m.def(
        "select_outliers",
        [](std::vector<double> eigenvalues, std::size_t n, std::size_t d, double sigma2) {
            const auto spec = spectrum_from(std::move(eigenvalues), n, d);
            const double q = static_cast<double>(spec.d_features) / static_cast<double>(spec.n_samples);
            return select_outliers(spec, MpParams(sigma2, q));
        },
        py::arg("eigenvalues"), py::arg("n_samples"), py::arg("d_features"), py::arg("sigma2"));

    // ---- descriptors
    m.def("feature_names", [] {
        std::vector<std::string> names;
        for (const auto& info : feature_registry()) names.emplace_back(info.name);
        return names;
    });
    m.def(
        "eigenspectrum", [](const RowMatrix& window) { return eigenspectrum(ActivationWindow(window)).values; },
        py::arg("window"));
    m.def(
        "descriptor",
        [](const RowMatrix& window, std::size_t fit_bins, bool center) {
            DescriptorOptions opt;
            opt.fit_bins = fit_bins;
            opt.center = center;
            const auto v = descriptor_vector(ActivationWindow(window), opt);
            return std::vector<double>(v.values.begin(), v.values.end());
        },
        py::arg("window"), py::arg("fit_bins") = 64, py::arg("center") = false);
    m.def(
        "descriptor_series",
        [](const RowMatrix& rows, std::size_t window, std::size_t stride, std::size_t fit_bins, bool center) {
            WindowConfig cfg;
            cfg.capacity = window;
            cfg.stride = stride;
            cfg.descriptor.fit_bins = fit_bins;
            cfg.descriptor.center = center;
            DescriptorSeries series;
            {
                py::gil_scoped_release release;
                series = descriptor_series(rows, cfg);
            }
            std::vector<std::size_t> steps;
            for (const auto& v : series.vectors) steps.push_back(v.window_index);
            return py::make_tuple(steps, series_matrix(series));
        },
        py::arg("rows"), py::arg("window") = 32, py::arg("stride") = 1, py::arg("fit_bins") = 64,
        py::arg("center") = false);
    m.def("expected_window_count", &expected_window_count, py::arg("steps"), py::arg("window"), py::arg("stride"));

    // ---- containers and frames
    m.def(
        "encode_container",
        [](const RowMatrixF& rows, bool structured) {
            ActivationContainer c;
            c.rows = rows;
            c.flags = structured ? kFlagStructured : 0;
            return py::bytes(encode_container(c));
        },
        py::arg("rows"), py::arg("structured") = false);
    m.def(
        "decode_container",
        [](const py::bytes& data) {
            const auto c = decode_container(std::string(data));
            return py::make_tuple(c.rows, c.structured());
        },
        py::arg("data"));
    m.def(
        "read_container",
        [](const std::filesystem::path& path) {
            const auto c = read_container(path);
            return py::make_tuple(c.rows, c.structured());
        },
        py::arg("path"));
    m.def(
        "write_container",
        [](const std::filesystem::path& path, const RowMatrixF& rows, bool structured) {
            ActivationContainer c;
            c.rows = rows;
            c.flags = structured ? kFlagStructured : 0;
            write_container(path, c);
        },
        py::arg("path"), py::arg("rows"), py::arg("structured") = false);
    m.def(
        "encode_frame", [](const std::vector<float>& row) { return py::bytes(encode_frame(row)); }, py::arg("row"));

    // ---- detection head
    py::class_<HeadModel>(m, "Head")
        .def_static(
            "load", [](const std::filesystem::path& path) { return load_head(path); }, py::arg("path"))
        .def_property_readonly("cell", [](const HeadModel& h) { return std::string(to_string(h.params.kind)); })
        .def_property_readonly("hidden", [](const HeadModel& h) { return h.params.hidden; })
        .def_property_readonly("parameter_count", [](const HeadModel& h) { return h.params.parameter_count(); })
        .def("probabilities", &HeadModel::probabilities, py::arg("features"))
        .def("score", &HeadModel::score, py::arg("features"));
    m.def("auroc", [](std::vector<double> scores, std::vector<int> labels) { return auroc(scores, labels); },
          py::arg("scores"), py::arg("labels"));
}
