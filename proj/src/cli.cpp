#include "bubblesched/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bubblesched/experiments.hpp"
#include "bubblesched/simcore.hpp"
#include "bubblesched/trace.hpp"

namespace bubblesched {

namespace {

std::string read_text(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string pct(double fraction)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", fraction * 100.0);
    return buf;
}

void print_state(const ReplayState& st, std::ostream& out)
{
    out << "time " << format_millis(st.time) << " events " << st.applied << '\n';
    for (const auto& [cpu, t] : st.running) {
        out << "cpu" << cpu << " runs " << to_string(t) << '\n';
    }
    for (const auto& [holder, list] : st.holders) {
        if (list.empty()) {
            continue;
        }
        out << to_string(holder) << ':';
        for (const auto& e : list) {
            out << ' ' << to_string(e);
        }
        out << '\n';
    }
    for (const auto& [t, d] : st.cpu_time) {
        auto name = st.names.find(t);
        out << "cpu_time " << to_string(t) << ' ' << (name != st.names.end() ? name->second : "-") << ' '
            << format_millis(d) << '\n';
    }
}

void print_violations(const CheckReport& report, std::ostream& out)
{
    for (const auto& v : report.violations) {
        out << "violation " << v.index << ' ' << to_string(v.kind) << ": " << v.message << '\n';
    }
}

struct RunFlags {
    std::string topology;
    std::string workload;
    std::string strategy = "none";
    std::string timeslice = "0.2";
    std::string burst_level;
    std::string regen = "50";
    std::string quantum = "0.1";
    std::string horizon;
    std::string trace;
    std::uint64_t seed = 0;
};

int cmd_run(const RunFlags& f, std::ostream& out, std::ostream& err)
{
    SimConfig cfg;
    cfg.topology = TopologySpec::parse(read_text(f.topology));
    cfg.workload = WorkloadSpec::parse(read_text(f.workload));
    auto kind = parse_strategy_kind(f.strategy);
    if (!kind) {
        throw ConfigError("unknown strategy '" + f.strategy + "'");
    }
    cfg.strategy.kind = *kind;
    cfg.strategy.timeslice = parse_millis(f.timeslice);
    cfg.strategy.regen = parse_millis(f.regen);
    if (!f.burst_level.empty()) {
        auto level = parse_level_kind(f.burst_level);
        if (!level) {
            throw ConfigError("unknown burst level '" + f.burst_level + "'");
        }
        cfg.strategy.burst_level = level;
    }
    cfg.quantum = parse_millis(f.quantum);
    cfg.horizon = parse_millis(f.horizon);
    cfg.seed = f.seed;

    RunResult res = run_simulation(cfg);
    res.trace.write_file(f.trace);

    out << "strategy " << to_string(cfg.strategy.kind) << '\n';
    out << "end " << format_millis(res.end_time) << " ms\n";
    for (std::size_t c = 0; c < res.per_cpu_busy.size(); ++c) {
        out << "cpu" << c << " busy " << pct(res.per_cpu_busy[c]) << '\n';
    }
    for (const auto& job : res.jobs) {
        out << "job " << job.index << " threads " << job.threads << " arrival " << format_millis(job.arrival);
        if (auto m = job.makespan()) {
            out << " completion " << format_millis(*job.completion) << " makespan " << format_millis(*m);
        } else {
            out << " completion - makespan -";
        }
        out << '\n';
    }
    if (auto p = res.effective_parallelism()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f", *p);
        out << "effective_parallelism " << buf << '\n';
    }
    out << "trace " << f.trace << " events " << res.trace.size() << '\n';

    CheckReport report = check(res.trace);
    if (!report.ok()) {
        print_violations(report, err);
        err << "check: " << report.violations.size() << " violation(s)\n";
        return exit_failure;
    }
    out << "check ok\n";
    return exit_ok;
}

int cmd_top(const std::string& trace, const std::string& interval, std::ostream& out)
{
    TraceLog log = TraceLog::read_file(trace);
    Duration window = interval.empty() ? log.last_time() : parse_millis(interval);
    out << format_top(top_report(log, window));
    return exit_ok;
}

int cmd_replay(const std::string& trace, const std::string& at, bool step, std::ostream& out, std::ostream& err)
{
    TraceLog log = TraceLog::read_file(trace);
    Replayer r(log, Replayer::Mode::strict, trace_topology(log));
    try {
        if (step) {
            while (!r.at_end()) {
                const TraceEvent& ev = log.events()[r.applied()];
                out << r.applied() << '\t' << format_millis(ev.time) << '\t' << to_string(ev.kind) << '\t'
                    << to_string(ev.subject) << '\t' << to_string(ev.location) << '\t' << ev.detail << '\n';
                r.step();
            }
        } else if (!at.empty()) {
            r.run_until(parse_millis(at));
        } else {
            r.run_to_end();
        }
    } catch (const TraceError& e) {
        print_state(r.state(), out);
        err << "replay: " << e.what() << '\n';
        return exit_failure;
    }
    print_state(r.state(), out);
    out << (r.at_end() ? "end of log\n" : "more events follow\n");
    return exit_ok;
}

int cmd_check(const std::string& trace, const std::string& topology, std::ostream& out)
{
    TraceLog log = TraceLog::read_file(trace);
    CheckReport report = topology.empty()
                             ? check(log)
                             : check(log, Topology::build(TopologySpec::parse(read_text(topology))));
    print_violations(report, out);
    if (!report.ok()) {
        out << "check: " << report.violations.size() << " violation(s) in " << report.events << " events\n";
        return exit_failure;
    }
    out << "check ok: " << report.events << " events\n";
    return exit_ok;
}

int cmd_demo(const std::string& name, std::ostream& out)
{
    char buf[160];
    if (name == "fig1-burst") {
        BurstReport r = fig1_burst();
        out << "burst demo: nested bubbles on 2 nodes x 2 cores, burst level numa_node, regen 50 ms\n";
        for (std::size_t p = 0; p < r.pair_nodes.size(); ++p) {
            out << "pair " << p << " runs on node " << r.pair_nodes[p] << '\n';
        }
        std::snprintf(buf, sizeof buf, "periods %zu, affinity breaks %zu, min utilisation %.1f%%\n", r.periods,
                      r.affinity_breaks, r.min_utilisation * 100.0);
        out << buf << (r.pass ? "PASS" : "FAIL") << '\n';
        return r.pass ? exit_ok : exit_failure;
    }
    if (name == "gang-fairness") {
        GangFairnessReport r = gang_fairness();
        out << format_top(r.rows);
        std::snprintf(buf, sizeof buf, "ideal %.2f / %.2f / %.2f, max deviation %.2f pp\n", r.ideal.at(0),
                      r.ideal.at(1), r.ideal.at(2), r.max_deviation);
        out << buf << (r.pass ? "PASS" : "FAIL") << '\n';
        return r.pass ? exit_ok : exit_failure;
    }
    if (name == "steal-drain") {
        StealReport r = steal_drain();
        std::snprintf(buf, sizeof buf, "idle after warmup %.2f%%, stolen threads %zu, home chain mismatches %zu\n",
                      r.idle_fraction * 100.0, r.stolen_threads, r.chain_mismatches);
        out << buf << (r.pass ? "PASS" : "FAIL") << '\n';
        return r.pass ? exit_ok : exit_failure;
    }
    throw ConfigError("unknown demo '" + name + "' (fig1-burst, gang-fairness, steal-drain)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Bubble scheduling simulator"};
    app.name("bubblesched");
    app.require_subcommand(1, 1);

    RunFlags rf;
    auto* run = app.add_subcommand("run", "Run a simulation and write its trace");
    run->add_option("--topology", rf.topology, "Topology file")->required();
    run->add_option("--workload", rf.workload, "Workload file")->required();
    run->add_option("--strategy", rf.strategy, "none|burst|gang|gang-per-node|steal")->capture_default_str();
    run->add_option("--timeslice", rf.timeslice, "Gang timeslice (ms)")->capture_default_str();
    run->add_option("--burst-level", rf.burst_level, "Burst level kind");
    run->add_option("--regen", rf.regen, "Burst regeneration period (ms)")->capture_default_str();
    run->add_option("--quantum", rf.quantum, "Quantum (ms)")->capture_default_str();
    run->add_option("--horizon", rf.horizon, "Horizon (ms)")->required();
    run->add_option("--trace", rf.trace, "Trace output file")->required();
    run->add_option("--seed", rf.seed, "Workload seed")->capture_default_str();

    std::string trace;
    std::string interval;
    auto* top = app.add_subcommand("top", "Per-thread CPU statistics over the end of a trace");
    top->add_option("--trace", trace, "Trace file")->required();
    top->add_option("--interval", interval, "Window (ms); default the whole trace");

    std::string at;
    bool step = false;
    auto* rep = app.add_subcommand("replay", "Replay a trace");
    rep->add_option("--trace", trace, "Trace file")->required();
    auto* at_opt = rep->add_option("--at", at, "Stop after the events at this time (ms)");
    rep->add_flag("--step", step, "Print every event while replaying")->excludes(at_opt);

    std::string topology;
    auto* chk = app.add_subcommand("check", "Check a trace's invariants");
    chk->add_option("--trace", trace, "Trace file")->required();
    chk->add_option("--topology", topology, "Topology file (default: trace header)");

    std::string demo;
    auto* dem = app.add_subcommand("demo", "Run a canned experiment");
    dem->add_option("name", demo, "fig1-burst|gang-fairness|steal-drain")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "bubblesched: " << e.what() << '\n';
        return exit_usage;
    }

    try {
        if (run->parsed()) {
            return cmd_run(rf, out, err);
        }
        if (top->parsed()) {
            return cmd_top(trace, interval, out);
        }
        if (rep->parsed()) {
            return cmd_replay(trace, at, step, out, err);
        }
        if (chk->parsed()) {
            return cmd_check(trace, topology, out);
        }
        return cmd_demo(demo, out);
    } catch (const ConfigError& e) {
        err << "bubblesched: " << e.what() << '\n';
        return exit_config;
    } catch (const TraceError& e) {
        err << "bubblesched: " << e.what() << '\n';
        return exit_config;
    } catch (const Error& e) {
        err << "bubblesched: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace bubblesched
