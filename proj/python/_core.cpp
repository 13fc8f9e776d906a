#include "cbfsyn/config.hpp"
#include "cbfsyn/pipeline.hpp"
#include "cbfsyn/qp.hpp"
#include "cbfsyn/serialization.hpp"
#include "cbfsyn/simulator.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace cbfsyn;

namespace {

int run_command(const std::string& command, const std::filesystem::path& config,
                const std::filesystem::path& out, int threads, std::optional<std::uint64_t> seed,
                bool dry_run, bool verbose) {
    PipelineConfig cfg = load_pipeline_config(config);
    if (seed) override_seed(cfg, *seed);
    RunOptions opts;
    opts.out_dir = out;
    opts.threads = threads;
    opts.dry_run = dry_run;
    std::ostringstream log;
    opts.log = &log;
    int code = kExitUsage;
    {
        py::gil_scoped_release release;
        if (command == "sample") code = cmd_sample(cfg, opts);
        else if (command == "boundary") code = cmd_boundary(cfg, opts);
        else if (command == "fit") code = cmd_fit(cfg, opts);
        else if (command == "simulate") code = cmd_simulate(cfg, opts);
        else if (command == "pipeline") code = cmd_pipeline(cfg, opts);
        else throw std::invalid_argument("unknown command '" + command + "'");
    }
    if (verbose) py::print(log.str(), py::arg("end") = "");
    return code;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Control barrier function synthesis from hard constraints";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);

    py::class_<CbfCandidate>(m, "Candidate")
        .def(py::init([](Vec scale, Vec shift, double offset) {
                 CbfCandidate c{std::move(scale), std::move(shift), offset};
                 c.validate();
                 return c;
             }),
             py::arg("scale"), py::arg("shift"), py::arg("offset") = 0.0)
        .def_static("identity", &CbfCandidate::identity, py::arg("dim"))
        .def_readwrite("scale", &CbfCandidate::scale)
        .def_readwrite("shift", &CbfCandidate::shift)
        .def_readwrite("offset", &CbfCandidate::offset)
        .def("__repr__", [](const CbfCandidate& c) {
            return "Candidate(scale=" + py::repr(py::cast(c.scale)).cast<std::string>() +
                   ", shift=" + py::repr(py::cast(c.shift)).cast<std::string>() +
                   ", offset=" + format_real(c.offset) + ")";
        });

    py::class_<FitResult>(m, "FitResult")
        .def_property_readonly("mode", [](const FitResult& r) { return std::string(to_string(r.mode)); })
        .def_readonly("feasible", &FitResult::feasible)
        .def_readonly("candidates", &FitResult::candidates)
        .def_readonly("objective", &FitResult::objective_value)
        .def_readonly("warnings", &FitResult::warnings);

    m.def("load_fit", [](const std::filesystem::path& path) { return parse_fit_result(read_text_file(path)); },
          py::arg("path"), "Reads a fit_<mode>.json artifact.");

    py::class_<SystemInstance>(m, "System")
        .def(py::init([](const std::string& name, const ParamTable& params) {
                 return SystemRegistry::global().create(name, params);
             }),
             py::arg("name") = "double_integrator", py::arg("params") = ParamTable{})
        .def_property_readonly("state_dim", [](const SystemInstance& s) { return s.model.n; })
        .def_property_readonly("input_dim", [](const SystemInstance& s) { return s.model.m; })
        .def_property_readonly("input_lower", [](const SystemInstance& s) { return Vec(s.input_box.lower()); })
        .def_property_readonly("input_upper", [](const SystemInstance& s) { return Vec(s.input_box.upper()); })
        .def_readonly("params", &SystemInstance::params)
        .def("z", [](const SystemInstance& s, const Vec& x) { return eval_z(s.model.hcf, x); }, py::arg("x"))
        .def("h", [](const SystemInstance& s, const CbfCandidate& c, const Vec& x) { return eval_h(c, s.model.hcf, x); },
             py::arg("candidate"), py::arg("x"))
        .def("min_h",
             [](const SystemInstance& s, const std::vector<CbfCandidate>& c, const Vec& x) {
                 return min_h(c, s.model.hcf, x);
             },
             py::arg("candidates"), py::arg("x"))
        .def("step", [](const SystemInstance& s, const Vec& x, const Vec& u, double dt) { return rk4_step(s.model, x, u, dt); },
             py::arg("x"), py::arg("u"), py::arg("dt"))
        .def(
            "filter",
            [](const SystemInstance& s, const Vec& x, const Vec& u_nom, const std::vector<CbfCandidate>& cands,
               const std::vector<double>& alphas, double dt, std::optional<double> relaxation,
               bool step_correction) {
                FilterConfig fc;
                fc.alphas = alphas.size() == 1 && cands.size() > 1 ? std::vector<double>(cands.size(), alphas[0])
                                                                     : alphas;
                fc.input_box = s.input_box;
                fc.relaxation = relaxation;
                fc.step_correction = step_correction;
                const FilterResult r = safety_filter(x, u_nom, cands, s.model, fc, dt);
                return py::make_tuple(r.input, std::string(to_string(r.status)));
            },
            py::arg("x"), py::arg("u_nominal"), py::arg("candidates"), py::arg("alphas") = std::vector<double>{5.0},
            py::arg("dt") = 0.0, py::arg("relaxation") = py::none(), py::arg("step_correction") = true,
            "Closest admissible input to u_nominal; returns (input, status).");

    py::class_<QpSolution>(m, "QpSolution")
        .def_property_readonly("status", [](const QpSolution& s) { return std::string(to_string(s.status)); })
        .def_readonly("argmin", &QpSolution::argmin)
        .def_readonly("objective", &QpSolution::objective)
        .def_readonly("farkas_gap", &QpSolution::farkas_gap);

    m.def(
        "solve_qp",
        [](Mat hessian, Vec linear, Mat rows, Vec rhs, Vec lower, Vec upper) {
            QpProblem p;
            p.hessian = std::move(hessian);
            p.linear = std::move(linear);
            p.ineq_rows = rows.size() == 0 ? Mat(0, p.linear.size()) : std::move(rows);
            p.ineq_rhs = std::move(rhs);
            p.box = BoxSet(std::move(lower), std::move(upper));
            return solve_box_qp(p);
        },
        py::arg("hessian"), py::arg("linear"), py::arg("rows"), py::arg("rhs"), py::arg("lower"), py::arg("upper"),
        "min 0.5 u'Hu + q'u subject to rows u >= rhs and lower <= u <= upper.");

    m.def("run", &run_command, py::arg("command"), py::arg("config"), py::arg("out"), py::arg("threads") = 1,
          py::arg("seed") = py::none(), py::arg("dry_run") = false, py::arg("verbose") = false,
          "Runs a CLI stage (sample, boundary, fit, simulate or pipeline) and returns its exit code.");

    m.def("fnv1a_hex", [](const py::bytes& b) { return fnv1a_hex(std::string(b)); }, py::arg("data"));
    m.def("format_real", &format_real, py::arg("value"));
}
