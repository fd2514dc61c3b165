#include <cmath>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bubblesched/experiments.hpp"

namespace py = pybind11;
using namespace bubblesched;

namespace {

Duration from_ms(double ms)
{
    if (!std::isfinite(ms) || ms < 0) {
        throw ConfigError("durations must be finite and non-negative");
    }
    return Duration{std::llround(ms * 1e6)};
}

double to_ms(Duration d)
{
    return static_cast<double>(d.count()) / 1e6;
}

RunResult run(const std::string& topology, const std::string& workload, const std::string& strategy,
              double horizon_ms, double quantum_ms, double timeslice_ms, std::optional<std::string> burst_level,
              double regen_ms, std::uint64_t seed)
{
    SimConfig c;
    c.topology = TopologySpec::parse(topology);
    c.workload = WorkloadSpec::parse(workload);
    auto kind = parse_strategy_kind(strategy);
    if (!kind) {
        throw ConfigError("unknown strategy '" + strategy + "'");
    }
    c.strategy.kind = *kind;
    c.strategy.timeslice = from_ms(timeslice_ms);
    c.strategy.regen = from_ms(regen_ms);
    if (burst_level) {
        auto level = parse_level_kind(*burst_level);
        if (!level) {
            throw ConfigError("unknown burst level '" + *burst_level + "'");
        }
        c.strategy.burst_level = level;
    }
    c.quantum = from_ms(quantum_ms);
    c.horizon = from_ms(horizon_ms);
    c.seed = seed;
    py::gil_scoped_release release;
    return run_simulation(c);
}

py::list violations_of(const CheckReport& r)
{
    py::list out;
    for (const auto& v : r.violations) {
        out.append(py::make_tuple(v.index, std::string(to_string(v.kind)), v.message));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<TraceError>(m, "TraceError", base.ptr());
    py::register_exception<ApiError>(m, "ApiError", base.ptr());

    py::class_<RunResult>(m, "RunResult")
        .def_property_readonly("trace", [](const RunResult& r) { return r.trace.to_string(); })
        .def_property_readonly("end_time_ms", [](const RunResult& r) { return to_ms(r.end_time); })
        .def_readonly("per_cpu_busy", &RunResult::per_cpu_busy)
        .def_property_readonly("per_thread_cpu_ms",
                               [](const RunResult& r) {
                                   std::map<std::string, double> out;
                                   for (const auto& [id, d] : r.per_thread_cpu) {
                                       out[r.thread_names.at(id)] = to_ms(d);
                                   }
                                   return out;
                               })
        .def_property_readonly("jobs",
                               [](const RunResult& r) {
                                   py::list out;
                                   for (const auto& j : r.jobs) {
                                       py::dict d;
                                       d["index"] = j.index;
                                       d["threads"] = j.threads;
                                       d["arrival_ms"] = to_ms(j.arrival);
                                       d["completion_ms"] =
                                           j.completion ? py::cast(to_ms(*j.completion)) : py::none();
                                       d["useful_work_ms"] = to_ms(j.useful_work);
                                       out.append(d);
                                   }
                                   return out;
                               })
        .def_property_readonly("effective_parallelism", &RunResult::effective_parallelism);

    m.def("run", &run, py::arg("topology"), py::arg("workload"), py::arg("strategy") = "none", py::kw_only(),
          py::arg("horizon_ms"), py::arg("quantum_ms") = 0.1, py::arg("timeslice_ms") = 0.2,
          py::arg("burst_level") = std::nullopt, py::arg("regen_ms") = 50.0, py::arg("seed") = 0,
          "Run one simulation from topology and workload text.");

    m.def(
        "check",
        [](const std::string& trace) { return violations_of(check(TraceLog::parse(trace))); }, py::arg("trace"),
        "Invariant violations of a trace as (index, kind, message) tuples.");

    m.def(
        "replay_cpu_ms",
        [](const std::string& trace) {
            ReplayState s = replay(TraceLog::parse(trace));
            std::map<std::string, double> out;
            for (const auto& [t, d] : s.cpu_time) {
                auto name = s.names.find(t);
                out[name != s.names.end() ? name->second : to_string(t)] = to_ms(d);
            }
            return out;
        },
        py::arg("trace"), "Per-thread CPU time reconstructed by replay.");

    m.def(
        "top",
        [](const std::string& trace, double window_ms) {
            py::list out;
            for (const auto& r : top_report(TraceLog::parse(trace), from_ms(window_ms))) {
                out.append(py::make_tuple(r.name, r.pr, r.cpu_pct, std::string(1, r.state), r.cpu));
            }
            return out;
        },
        py::arg("trace"), py::arg("window_ms"), "Rows of (name, pr, cpu%, state, cpu).");

    m.def(
        "gang_fairness",
        [] {
            GangFairnessReport r = gang_fairness();
            return py::dict(py::arg("max_deviation") = r.max_deviation, py::arg("daemon_idle") = r.daemon_idle,
                            py::arg("passed") = r.pass);
        },
        "Gang fairness experiment summary.");

    m.def(
        "fig1_burst",
        [] {
            BurstReport r = fig1_burst();
            return py::dict(py::arg("periods") = r.periods, py::arg("affinity_breaks") = r.affinity_breaks,
                            py::arg("min_utilisation") = r.min_utilisation, py::arg("pair_nodes") = r.pair_nodes,
                            py::arg("passed") = r.pass);
        },
        "Burst convergence experiment summary.");

    m.def(
        "steal_drain",
        [] {
            StealReport r = steal_drain();
            return py::dict(py::arg("idle_fraction") = r.idle_fraction,
                            py::arg("stolen_threads") = r.stolen_threads,
                            py::arg("chain_mismatches") = r.chain_mismatches, py::arg("passed") = r.pass);
        },
        "Work stealing experiment summary.");
}
