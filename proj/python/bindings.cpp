#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lmabo/acquisition.hpp"
#include "lmabo/analysis.hpp"
#include "lmabo/benchmarks.hpp"
#include "lmabo/errors.hpp"
#include "lmabo/harness.hpp"
#include "lmabo/llm_bridge.hpp"
#include "lmabo/strategist.hpp"

namespace py = pybind11;
using namespace lmabo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

py::dict problem_dict(const bench::Problem& p) {
    py::dict d;
    d["name"] = p.name;
    d["dim"] = p.dim;
    d["lower"] = p.bounds.lower;
    d["upper"] = p.bounds.upper;
    d["known_optimum"] = p.known_optimum;
    return d;
}

py::dict record_dict(const harness::RunRecord& r) {
    py::dict d;
    d["run_id"] = r.header.run_id;
    d["problem"] = r.header.problem;
    d["strategist"] = r.header.strategist;
    d["seed"] = r.header.seed;
    d["budget"] = r.header.budget;
    d["n_init"] = r.header.n_init;
    d["complete"] = r.complete();
    d["abort_reason"] = r.abort_reason;
    d["incumbents"] = r.incumbents();
    std::vector<std::string> kinds;
    std::vector<double> values;
    for (const auto& it : r.iterations) {
        kinds.emplace_back(acq::abbreviation(it.kind));
        values.push_back(it.y);
    }
    d["kinds"] = kinds;
    d["values"] = values;
    return d;
}

}  // namespace

PYBIND11_MODULE(_lmabo, m) {
    m.doc() = "Core bindings: benchmark problems, GP surrogate, acquisition optimization, runs and analysis";

    static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
    static py::exception<NotFoundError> not_found(m, "NotFoundError", PyExc_LookupError);
    static py::exception<DataError> data_error(m, "DataError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const NotFoundError& e) {
            py::set_error(not_found, e.what());
        } catch (const DataError& e) {
            py::set_error(data_error, e.what());
        } catch (const ArgumentError& e) {
            py::set_error(PyExc_ValueError, e.what());
        }
    });

    m.def("problems", [] {
        py::list out;
        for (const auto& p : bench::problem_registry()) out.append(problem_dict(p));
        return out;
    }, "Registry problems as dicts of name, dim, lower, upper and known_optimum.");

    m.def("evaluate", [](const std::string& name, const VectorXd& x) {
        return bench::evaluate(bench::find_problem(name), x);
    }, py::arg("problem"), py::arg("x"), "Noise-free objective value of a registry problem.");

    py::class_<gp::GPModel>(m, "GPModel")
        .def("predict", [](const gp::GPModel& model, const MatrixXd& points) {
            const auto pred = gp::posterior(model, points, true);
            return py::make_tuple(pred.mean, pred.variance);
        }, py::arg("points"), "Posterior mean and variance in objective units; points are rows.")
        .def_property_readonly("lengthscales", [](const gp::GPModel& g) { return g.params().lengthscales; })
        .def_property_readonly("outputscale", [](const gp::GPModel& g) { return g.params().outputscale; })
        .def_property_readonly("noise_variance", [](const gp::GPModel& g) { return g.params().noise_variance; });

    m.def("fit_gp", [](const MatrixXd& points, const VectorXd& values, const VectorXd& lower, const VectorXd& upper,
                       std::uint64_t seed, int restarts) {
        gp::Dataset data{points, values, {lower, upper}};
        gp::FitConfig config;
        config.seed = seed;
        config.n_restarts = restarts;
        py::gil_scoped_release release;
        return gp::fit(data, config);
    }, py::arg("points"), py::arg("values"), py::arg("lower"), py::arg("upper"), py::arg("seed") = 0,
          py::arg("restarts") = 8, "MAP fit of a Matern-5/2 GP to minimization data.");

    m.def("optimize_acquisition", [](const gp::GPModel& model, const std::string& kind, std::uint64_t seed,
                                     double kappa) {
        const acq::Kind k = acq::parse_kind(kind);
        const auto context = acq::AcqContext::make(model, seed, kappa);
        py::gil_scoped_release release;
        return acq::optimize_acquisition(k, context).point;
    }, py::arg("model"), py::arg("kind"), py::arg("seed") = 0, py::arg("kappa") = 2.0,
          "Maximizer of the named acquisition function, in original units.");

    m.def("parse_decision", [](const std::string& text) {
        const auto d = llm::parse_decision(text);
        return py::make_tuple(std::string(acq::abbreviation(d.kind)), d.justification, d.fallback_used);
    }, py::arg("text"), "(abbreviation, justification, fallback_used) for a model reply.");

    m.def("strategist_labels", &strat::strategist_labels);

    m.def("run", [](const std::string& problem, const std::string& strategist, std::uint64_t seed,
                    std::optional<int> budget, std::optional<int> init, const std::string& output_dir,
                    int fit_restarts, const std::string& backend) {
        harness::RunConfig c;
        c.problem = problem;
        c.strategist = strategist;
        c.seed = seed;
        c.budget = budget;
        c.init = init;
        c.output_dir = output_dir;
        c.fit_restarts = fit_restarts;
        c.strategist_options.backend = backend;
        harness::RunRecord r;
        {
            py::gil_scoped_release release;
            r = harness::run(c);
        }
        return record_dict(r);
    }, py::arg("problem"), py::arg("strategist"), py::arg("seed"), py::arg("budget") = py::none(),
          py::arg("init") = py::none(), py::arg("output_dir") = "runs", py::arg("fit_restarts") = 8,
          py::arg("backend") = "http", "Executes or resumes one run and returns its summary.");

    m.def("analyze", [](const std::string& records_dir, const std::string& reference, const std::string& out_dir) {
        const auto report = analysis::analyze(analysis::load_records(records_dir), reference);
        analysis::emit_report(report, out_dir);
        py::dict summary;
        for (const auto& s : report.summary) {
            py::dict d;
            d["mean_rp"] = s.mean_rp;
            d["mean_rank"] = s.mean_rank;
            d["cv"] = s.cv;
            d["p_adjusted"] = s.p_adjusted;
            summary[py::str(s.method)] = d;
        }
        return summary;
    }, py::arg("records_dir"), py::arg("reference") = "EI", py::arg("out_dir") = "report",
          "Writes the report files and returns per-method summary statistics.");
}
