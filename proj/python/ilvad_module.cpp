#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ilvad/enhancement.hpp"
#include "ilvad/report.hpp"
#include "ilvad/saliency.hpp"
#include "ilvad/toy_decoder.hpp"
#include "ilvad/trace_io.hpp"

namespace py = pybind11;
using namespace ilvad;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

StepAttention step_from_array(std::size_t step_index, const Array& rows) {
    if (rows.ndim() != 3) throw std::invalid_argument("attention must have shape (layers, heads, keys)");
    const auto L = static_cast<std::size_t>(rows.shape(0));
    const auto H = static_cast<std::size_t>(rows.shape(1));
    const auto K = static_cast<std::size_t>(rows.shape(2));
    std::vector<double> values(rows.data(), rows.data() + rows.size());
    return StepAttention(step_index, L, H, K, std::move(values));
}

Array step_to_array(const StepAttention& step) {
    Array out({step.n_layers(), step.n_heads(), step.n_keys()});
    std::copy(step.values().begin(), step.values().end(), out.mutable_data());
    return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
    const std::string s = b;
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Inter-layer visual attention discrepancy over attention traces";

    // Borrowed from the module, which outlives every translation.
    static PyObject* trace_error =
        py::exception<io::TraceError>(m, "TraceError", PyExc_ValueError).ptr();
    static PyObject* format_error =
        py::exception<report::FormatError>(m, "FormatError", PyExc_ValueError).ptr();
    static PyObject* ilvad_error = py::exception<Error>(m, "IlvadError", PyExc_RuntimeError).ptr();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const io::TraceError& e) {
            py::object exc = py::handle(trace_error)(e.what());
            exc.attr("code") = io::to_string(e.code());
            exc.attr("offset") = e.offset();
            PyErr_SetObject(trace_error, exc.ptr());
        } catch (const report::FormatError& e) {
            py::object exc = py::handle(format_error)(e.what());
            exc.attr("offset") = e.offset();
            PyErr_SetObject(format_error, exc.ptr());
        } catch (const Error& e) {
            PyErr_SetString(ilvad_error, e.what());
        }
    });

    py::class_<TokenLayout>(m, "TokenLayout")
        .def(py::init<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>(),
             py::arg("n_system"), py::arg("n_visual"), py::arg("n_query"), py::arg("grid_rows"),
             py::arg("grid_cols"))
        .def_property_readonly("n_system", &TokenLayout::n_system)
        .def_property_readonly("n_visual", &TokenLayout::n_visual)
        .def_property_readonly("n_query", &TokenLayout::n_query)
        .def_property_readonly("grid_rows", &TokenLayout::grid_rows)
        .def_property_readonly("grid_cols", &TokenLayout::grid_cols)
        .def_property_readonly("n_input", &TokenLayout::n_input)
        .def("keys_at_step", &TokenLayout::keys_at_step)
        .def(py::self == py::self)
        .def("__repr__", [](const TokenLayout& l) {
            std::ostringstream s;
            s << "TokenLayout(n_system=" << l.n_system() << ", n_visual=" << l.n_visual()
              << ", n_query=" << l.n_query() << ", grid=" << l.grid_rows() << "x" << l.grid_cols()
              << ")";
            return s.str();
        });

    py::class_<StepAttention>(m, "StepAttention")
        .def(py::init(&step_from_array), py::arg("step_index"), py::arg("attention"))
        .def_property_readonly("step_index", &StepAttention::step_index)
        .def_property_readonly("attention", &step_to_array)
        .def(py::self == py::self);

    py::class_<AttentionTrace>(m, "AttentionTrace")
        .def(py::init<TokenLayout, std::size_t, std::size_t, std::vector<StepAttention>,
                      std::optional<std::vector<std::uint32_t>>>(),
             py::arg("layout"), py::arg("n_layers"), py::arg("n_heads"), py::arg("steps"),
             py::arg("token_ids") = py::none())
        .def_property_readonly("layout", &AttentionTrace::layout)
        .def_property_readonly("n_layers", &AttentionTrace::n_layers)
        .def_property_readonly("n_heads", &AttentionTrace::n_heads)
        .def_property_readonly("n_steps", &AttentionTrace::n_steps)
        .def_property_readonly("steps", &AttentionTrace::steps)
        .def_property_readonly("token_ids", &AttentionTrace::token_ids)
        .def(py::self == py::self);

    py::class_<SaliencyMap>(m, "SaliencyMap")
        .def(py::init<std::vector<std::uint32_t>, std::vector<double>>(), py::arg("raw_counts"),
             py::arg("normalized"))
        .def_property_readonly("raw_counts", &SaliencyMap::raw_counts)
        .def_property_readonly("normalized", &SaliencyMap::normalized)
        .def("__len__", &SaliencyMap::size)
        .def(py::self == py::self);

    py::class_<EnhancementConfig>(m, "EnhancementConfig")
        .def(py::init([](std::size_t window_T, double tau, double alpha, double beta, double rho,
                         bool enable_visual, bool enable_text) {
                 EnhancementConfig c{window_T, tau, alpha, beta, rho, enable_visual, enable_text};
                 c.validate();
                 return c;
             }),
             py::arg("window_T") = 10, py::arg("tau") = 5.0, py::arg("alpha") = 5.0,
             py::arg("beta") = 1.0, py::arg("rho") = 0.5, py::arg("enable_visual") = true,
             py::arg("enable_text") = true)
        .def_readwrite("window_T", &EnhancementConfig::window_T)
        .def_readwrite("tau", &EnhancementConfig::tau)
        .def_readwrite("alpha", &EnhancementConfig::alpha)
        .def_readwrite("beta", &EnhancementConfig::beta)
        .def_readwrite("rho", &EnhancementConfig::rho)
        .def_readwrite("enable_visual", &EnhancementConfig::enable_visual)
        .def_readwrite("enable_text", &EnhancementConfig::enable_text);

    py::class_<EvidenceWeights>(m, "EvidenceWeights")
        .def(py::init([](std::vector<double> raw) { return normalize_weights(raw); }),
             py::arg("raw") = std::vector<double>{})
        .def_readonly("raw", &EvidenceWeights::raw)
        .def_readonly("normalized", &EvidenceWeights::normalized);

    py::class_<Violation>(m, "Violation")
        .def_property_readonly("kind", [](const Violation& v) { return to_string(v.kind); })
        .def_readonly("step", &Violation::step)
        .def_readonly("layer", &Violation::layer)
        .def_readonly("head", &Violation::head)
        .def_readonly("message", &Violation::message)
        .def("__repr__", [](const Violation& v) { return "Violation(" + v.message + ")"; });

    m.def("validate_trace", &validate_trace, py::arg("trace"),
          py::arg("tolerance") = kIngestTolerance);
    m.def("build_saliency", &build_saliency, py::arg("trace"),
          py::arg("config") = EnhancementConfig{});
    m.def("normalize_saliency",
          [](std::vector<std::uint32_t> raw) { return normalize_saliency(raw); }, py::arg("raw"));
    m.def(
        "apply_step",
        [](const StepAttention& step, const TokenLayout& layout, const SaliencyMap& saliency,
           const EvidenceWeights& running, const EnhancementConfig& config) {
            auto r = apply_step(step, layout, saliency, running, config);
            return py::make_tuple(std::move(r.step), std::move(r.weights));
        },
        py::arg("step"), py::arg("layout"), py::arg("saliency"), py::arg("running"),
        py::arg("config") = EnhancementConfig{});
    m.def("apply_trace", &apply_trace, py::arg("trace"), py::arg("saliency"),
          py::arg("config") = EnhancementConfig{});

    m.def("encode_trace", [](const AttentionTrace& t) { return to_bytes(io::encode_trace(t)); });
    m.def(
        "decode_trace",
        [](const py::bytes& b, double tol) { return io::decode_trace(from_bytes(b), tol); },
        py::arg("data"), py::arg("tolerance") = kIngestTolerance);
    m.def("write_trace", &io::write_trace_file, py::arg("trace"), py::arg("path"));
    m.def("read_trace", &io::read_trace_file, py::arg("path"),
          py::arg("tolerance") = kIngestTolerance);

    m.def("format_saliency", &report::format_saliency);
    m.def("parse_saliency", [](const std::string& text) { return report::parse_saliency(text); });
    m.def(
        "render_pgm",
        [](const SaliencyMap& s, std::size_t rows, std::size_t cols) {
            return to_bytes(report::render_pgm(s, rows, cols));
        },
        py::arg("saliency"), py::arg("grid_rows"), py::arg("grid_cols"));
    m.def(
        "compare_traces",
        [](const AttentionTrace& base, const AttentionTrace& enh, const SaliencyMap& s, double rho) {
            const auto c = report::compare_traces(base, enh, s, rho);
            py::dict out;
            out["baseline"] = c.baseline;
            out["ilvad"] = c.ilvad;
            out["baseline_mean"] = c.baseline_mean;
            out["ilvad_mean"] = c.ilvad_mean;
            return out;
        },
        py::arg("baseline"), py::arg("ilvad"), py::arg("saliency"), py::arg("rho") = 0.5);

    m.def(
        "generate",
        [](std::uint64_t seed, std::size_t grid_rows, std::size_t grid_cols,
           std::vector<std::size_t> planted, std::size_t steps, const std::string& mode,
           const EnhancementConfig& config, std::size_t layers, std::size_t heads,
           std::size_t d_model, std::size_t vocab) {
            if (mode != "baseline" && mode != "ilvad") {
                throw std::invalid_argument("mode must be 'baseline' or 'ilvad'");
            }
            toy::ToyModelConfig mc;
            mc.seed = seed;
            mc.n_layers = layers;
            mc.n_heads = heads;
            mc.d_model = d_model;
            mc.vocab_size = vocab;
            const auto model = toy::init_model(mc);
            auto image = toy::make_synthetic_image(model, grid_rows, grid_cols, planted, seed);
            const auto prompt = toy::default_prompt(model, std::move(image));
            auto r = toy::generate(model, prompt, steps,
                                   mode == "ilvad" ? toy::Mode::ilvad : toy::Mode::baseline,
                                   config);
            return py::make_tuple(std::move(r.tokens), std::move(r.trace), std::move(r.saliency));
        },
        "Toy decoder run with the same seeding as the command line tool.", py::arg("seed"),
        py::arg("grid_rows"), py::arg("grid_cols"), py::arg("planted"), py::arg("steps"),
        py::arg("mode") = "baseline", py::arg("config") = EnhancementConfig{},
        py::arg("layers") = 4, py::arg("heads") = 4, py::arg("d_model") = 32,
        py::arg("vocab") = 32);
}
