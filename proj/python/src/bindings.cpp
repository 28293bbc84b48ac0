#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "cprloop/characterize.hpp"
#include "cprloop/haptics.hpp"
#include "cprloop/metrics.hpp"
#include "cprloop/pipeline.hpp"
#include "cprloop/preprocess.hpp"
#include "cprloop/sensorsim.hpp"
#include "cprloop/session_log.hpp"
#include "cprloop/wire.hpp"

namespace py = pybind11;
using namespace cprloop;

namespace {

using CountArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

CountGrid grid_from(const CountArray& a) {
    if (a.ndim() != 2 || a.shape(0) != kRows || a.shape(1) != kCols)
        throw Error(Errc::DimensionMismatch, "expected a 13x14 uint16 array");
    CountGrid g(kRows, kCols);
    std::memcpy(g.data.data(), a.data(), g.data.size() * sizeof(std::uint16_t));
    return g;
}

CountArray array_from(const CountGrid& g) {
    CountArray a({g.rows, g.cols});
    std::memcpy(a.mutable_data(), g.data.data(), g.data.size() * sizeof(std::uint16_t));
    return a;
}

std::vector<LoopPoint> points_from(const DoubleArray& a) {
    if (a.ndim() != 2 || a.shape(1) != 2) throw Error(Errc::DimensionMismatch, "expected an (n, 2) array of force, response");
    std::vector<LoopPoint> out;
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < r.shape(0); ++i) out.push_back({r(i, 0), r(i, 1)});
    return out;
}

Eigen::MatrixXd matrix_from(const DoubleArray& a) {
    if (a.ndim() != 2) throw Error(Errc::DimensionMismatch, "expected a 2-D array");
    auto r = a.unchecked<2>();
    Eigen::MatrixXd m(r.shape(0), r.shape(1));
    for (py::ssize_t i = 0; i < r.shape(0); ++i)
        for (py::ssize_t j = 0; j < r.shape(1); ++j) m(i, j) = r(i, j);
    return m;
}

py::dict pattern_dict(const HapticPattern& p) {
    py::list units;
    for (auto u : p.units) units.append(std::string(to_string(u)));
    py::dict d;
    d["pulse_count"] = p.pulse_count;
    d["pwm"] = p.pwm;
    d["units"] = units;
    d["alternating"] = p.alternating;
    return d;
}

}  // namespace

PYBIND11_MODULE(_cprloop, m) {
    m.doc() = "tactile CPR feedback loop";

    static py::exception<Error> error(m, "Error", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error, e.what());
        }
    });

    m.def("snr_from_ratio", &snr_from_ratio, py::arg("ratio"));
    m.def("classify_rate", [](double dt_ms) { return std::string(to_string(classify_rate(dt_ms))); }, py::arg("dt_ms"));
    m.def("force_band", [](double weight_kg) {
        auto b = force_band(weight_kg);
        return std::make_pair(b.f1, b.f2);
    }, py::arg("weight_kg"));
    m.def("classify_force", [](double newton, double weight_kg) {
        return std::string(to_string(classify_force(newton, force_band(weight_kg))));
    }, py::arg("newton"), py::arg("weight_kg"));

    m.def("encode_feedback", [](const std::string& rate, const std::string& force, const std::string& pose) {
        return pattern_dict(encode_feedback(parse_rate(rate), parse_force(force), parse_pose(pose)));
    }, py::arg("rate"), py::arg("force"), py::arg("pose"));
    m.def("haptic_table", [] {
        std::vector<std::string> rows;
        for (const auto& s : all_joint_states()) rows.push_back(format_table_row(s, encode_feedback(s.rate, s.force, s.pose)));
        return rows;
    });

    m.def("encode_packet", [](std::uint32_t seq, std::uint64_t t_us, const CountArray& palm, const CountArray& dorsum) {
        DualSample s;
        s.seq = seq;
        s.palm = {Side::Palm, grid_from(palm), t_us};
        s.dorsum = {Side::Dorsum, grid_from(dorsum), t_us};
        auto b = wire::encode_packet(s);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
    }, py::arg("seq"), py::arg("t_us"), py::arg("palm"), py::arg("dorsum"));
    m.def("decode_packet", [](const py::bytes& data) {
        std::string raw = data;
        auto s = wire::decode_packet(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
        py::dict d;
        d["seq"] = s.seq;
        d["t_us"] = s.palm.timestamp_us;
        d["palm"] = array_from(s.palm.counts);
        d["dorsum"] = array_from(s.dorsum.counts);
        return d;
    }, py::arg("data"));

    m.def("fit_pca", [](const DoubleArray& x, double threshold) {
        auto p = fit_pca(matrix_from(x), threshold);
        py::dict d;
        d["k"] = p.k();
        d["retained_ratio"] = p.retained_ratio();
        d["explained_ratio"] = p.explained_ratio;
        return d;
    }, py::arg("x"), py::arg("threshold") = 0.95);

    m.def("hysteresis_ratio", [](const DoubleArray& loading, const DoubleArray& unloading) {
        return hysteresis_ratio(LoopTrace{points_from(loading), points_from(unloading)});
    }, py::arg("loading"), py::arg("unloading"));
    m.def("cycle_drift", [](const std::vector<double>& amplitudes) { return cycle_drift(amplitudes); },
          py::arg("amplitudes"));

    m.def("simulate", [](const std::string& script_json, const std::string& out_path, const std::string& subject,
                         double weight_kg, std::uint64_t seed) {
        py::gil_scoped_release release;
        auto r = sim::simulate_session(sim::script_from_json(script_json), make_subject(subject, weight_kg), seed);
        write_session_log(out_path, r.log);
        return std::make_pair(r.samples.size(), r.crests.size());
    }, py::arg("script_json"), py::arg("out_path"), py::arg("subject") = "s01", py::arg("weight_kg") = 80.0,
       py::arg("seed") = 0);

    m.def("calibrate", [](const std::string& log_path, const std::string& model_dir, const std::string& subject,
                          double weight_kg, const std::string& method) {
        py::gil_scoped_release release;
        auto profile = make_subject(subject, weight_kg);
        auto ds = calibrate(read_session_log(log_path), profile);
        save_models(model_dir, train_subject_models(ds, profile, parse_method(method)));
        return std::make_pair(ds.force_count(), ds.pose_count());
    }, py::arg("log_path"), py::arg("model_dir"), py::arg("subject") = "s01", py::arg("weight_kg") = 80.0,
       py::arg("method") = "lda");

    m.def("replay_report", [](const std::string& log_path, const std::string& model_dir, const std::string& subject,
                              double weight_kg) {
        py::gil_scoped_release release;
        PipelineConfig cfg;
        cfg.subject = make_subject(subject, weight_kg);
        cfg.ingest_overflow = Overflow::Block;
        auto res = run_loop(vector_source(wire::samples_from_log(read_session_log(log_path))), cfg, load_models(model_dir));
        return res.report.to_json();
    }, py::arg("log_path"), py::arg("model_dir"), py::arg("subject") = "s01", py::arg("weight_kg") = 80.0);
}
