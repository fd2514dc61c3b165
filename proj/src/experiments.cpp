#include "bubblesched/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace bubblesched {

TopologySpec bi_dual_core()
{
    return TopologySpec::parse("machine 1\nnuma_node 2\ncore 2\nnuma_factor 1.4\n");
}

WorkloadSpec fig1_workload()
{
    return WorkloadSpec::parse("custom\n"
                               "bubble\n"
                               "  bubble\n    thread busy\n    thread busy\n  end\n"
                               "  bubble\n    thread busy\n    thread busy\n  end\n"
                               "  thread busy\n"
                               "end\n");
}

GangFairnessReport gang_fairness(Duration horizon, double tolerance_pp)
{
    SimConfig cfg;
    cfg.topology = bi_dual_core();
    cfg.workload = WorkloadSpec{BusyGangs{{5, 6, 7}}};
    cfg.strategy.kind = StrategyConfig::Kind::gang;
    cfg.horizon = horizon;
    RunResult res = run_simulation(cfg);

    GangFairnessReport report;
    report.rows = top_report(res.trace, horizon);
    const auto& sizes = std::get<BusyGangs>(cfg.workload.kind).sizes;
    const double cpus = 4.0;
    for (int s : sizes) {
        report.ideal.push_back(100.0 * cpus / (static_cast<double>(sizes.size()) * s));
    }
    report.daemon_idle = false;
    std::size_t thread_rows = 0;
    for (const auto& row : report.rows) {
        if (row.pr == daemon_priority) {
            report.daemon_idle = row.cpu_pct == 0.0;
            continue;
        }
        ++thread_rows;
        const auto gang = static_cast<std::size_t>(std::stoi(row.name.substr(0, row.name.find('-'))));
        report.max_deviation = std::max(report.max_deviation, std::abs(row.cpu_pct - report.ideal.at(gang)));
    }
    report.pass = report.daemon_idle && thread_rows == 18 && report.max_deviation <= tolerance_pp;
    return report;
}

BurstReport analyse_burst(const TraceLog& trace, const Topology& topology, Duration regen)
{
    BurstReport report;
    // Pair bubbles are those that are home to exactly two threads.
    std::map<TraceRef, TraceRef> home;
    std::map<TraceRef, std::vector<TraceRef>> members;
    for (const auto& ev : trace.events()) {
        if (ev.kind == EventKind::ThreadBirth) {
            if (auto h = detail_value(ev.detail, "home")) {
                home[ev.subject] = parse_trace_ref(*h);
                members[home[ev.subject]].push_back(ev.subject);
            }
        }
    }
    std::vector<TraceRef> pairs;
    for (const auto& [b, ts] : members) {
        if (ts.size() == 2) {
            pairs.push_back(b);
        }
    }
    const Duration end = trace.last_time();
    const auto numa_rqs = topology.runqueues_at(LevelKind::numa_node);
    auto numa_index = [&](CpuId cpu) -> std::uint32_t {
        auto node = topology.ancestor_at(cpu, LevelKind::numa_node);
        if (!node) {
            return 0;
        }
        auto it = std::find(numa_rqs.begin(), numa_rqs.end(), topology.node(*node).runqueue);
        return static_cast<std::uint32_t>(it - numa_rqs.begin());
    };
    report.min_utilisation = 1.0;
    report.pair_nodes.assign(pairs.size(), -1);
    for (Duration lo = regen; lo + regen <= end; lo += regen) {
        const Duration hi = lo + regen;
        ++report.periods;
        std::vector<std::set<std::uint32_t>> nodes(pairs.size());
        for (const auto& ev : trace.events()) {
            if (ev.kind != EventKind::ContextSwitchIn || ev.time <= lo || ev.time > hi) {
                continue;
            }
            auto h = home.find(ev.subject);
            if (h == home.end()) {
                continue;
            }
            for (std::size_t p = 0; p < pairs.size(); ++p) {
                if (h->second == pairs[p]) {
                    nodes[p].insert(numa_index(CpuId{ev.location.index}));
                }
            }
        }
        bool broken = false;
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            if (nodes[p].size() != 1) {
                broken = true;
            } else {
                report.pair_nodes[p] = static_cast<int>(*nodes[p].begin());
            }
        }
        report.affinity_breaks += broken ? 1 : 0;
        auto busy = busy_fractions(trace, topology.cpu_count(), lo, hi);
        double mean = std::accumulate(busy.begin(), busy.end(), 0.0) / static_cast<double>(busy.size());
        report.min_utilisation = std::min(report.min_utilisation, mean);
    }
    report.pass = report.periods > 0 && pairs.size() == 2 && report.affinity_breaks == 0 &&
                  report.min_utilisation >= 0.95;
    return report;
}

BurstReport fig1_burst(Duration horizon, Duration regen)
{
    SimConfig cfg;
    cfg.topology = bi_dual_core();
    cfg.workload = fig1_workload();
    cfg.strategy.kind = StrategyConfig::Kind::burst;
    cfg.strategy.burst_level = LevelKind::numa_node;
    cfg.strategy.regen = regen;
    cfg.horizon = horizon;
    RunResult res = run_simulation(cfg);
    return analyse_burst(res.trace, Topology::build(cfg.topology), regen);
}

StealReport steal_drain(Duration horizon, int warmup_quanta)
{
    SimConfig cfg;
    cfg.topology = bi_dual_core();
    cfg.workload = WorkloadSpec{BusyGangs{{8}}};
    cfg.strategy.kind = StrategyConfig::Kind::steal;
    cfg.horizon = horizon;
    RunResult res = run_simulation(cfg);

    StealReport report;
    const Duration warm = cfg.quantum * warmup_quanta;
    auto busy = busy_fractions(res.trace, 4, warm, res.end_time);
    double mean = std::accumulate(busy.begin(), busy.end(), 0.0) / static_cast<double>(busy.size());
    report.idle_fraction = 1.0 - mean;
    auto [checked, bad] = steal_home_chains(res.trace);
    report.stolen_threads = checked;
    report.chain_mismatches = bad;
    report.pass = report.idle_fraction < 0.05 && checked > 0 && bad == 0;
    return report;
}

std::vector<double> parallelism_sweep(JobStream stream, StrategyConfig::Kind strategy, int max_jobs,
                                      Duration horizon, std::uint64_t seed)
{
    std::vector<double> out;
    for (int n = 1; n <= max_jobs; ++n) {
        SimConfig cfg;
        cfg.topology = bi_dual_core();
        stream.jobs = n;
        cfg.workload = WorkloadSpec{stream};
        cfg.strategy.kind = strategy;
        cfg.horizon = horizon;
        cfg.seed = seed;
        RunResult res = run_simulation(cfg);
        out.push_back(res.effective_parallelism().value_or(0.0));
    }
    return out;
}

double population_variance(const std::vector<double>& xs)
{
    if (xs.empty()) {
        return 0.0;
    }
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) {
        acc += (x - mean) * (x - mean);
    }
    return acc / static_cast<double>(xs.size());
}

}  // namespace bubblesched
