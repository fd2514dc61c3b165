#pragma once

#include <string>
#include <vector>

#include "bubblesched/simcore.hpp"
#include "bubblesched/trace.hpp"

namespace bubblesched {

/// Two NUMA nodes of two cores each, NUMA factor 1.4.
TopologySpec bi_dual_core();

/// Two bubbles of two busy threads plus one busy thread, in one outer bubble.
WorkloadSpec fig1_workload();

struct GangFairnessReport {
    std::vector<TopRow> rows;
    /// Ideal per-thread share of each gang, in percent.
    std::vector<double> ideal;
    /// Largest |share - ideal| over all thread rows, in percentage points.
    double max_deviation = 0.0;
    bool daemon_idle = false;
    bool pass = false;
};

/// Busy gangs 5/6/7 on bi_dual_core under the gang strategy.
GangFairnessReport gang_fairness(Duration horizon = std::chrono::milliseconds(600), double tolerance_pp = 1.5);

struct BurstReport {
    std::size_t periods = 0;
    /// Periods in which some pair's threads ran on more than one node.
    std::size_t affinity_breaks = 0;
    double min_utilisation = 0.0;
    bool pass = false;
    /// NUMA node index (0-based) each pair ran on in the last period, or -1.
    std::vector<int> pair_nodes;
};

/// The nested bubble hierarchy on bi_dual_core under burst at numa_node.
BurstReport fig1_burst(Duration horizon = std::chrono::milliseconds(500),
                       Duration regen = std::chrono::milliseconds(50));

/// Affinity and utilisation analysis of a fig1 burst trace.
BurstReport analyse_burst(const TraceLog& trace, const Topology& topology, Duration regen);

struct StealReport {
    double idle_fraction = 0.0;
    std::size_t stolen_threads = 0;
    std::size_t chain_mismatches = 0;
    bool pass = false;
};

/// Eight busy threads starting on cpu 0 under work stealing.
StealReport steal_drain(Duration horizon = std::chrono::milliseconds(100), int warmup_quanta = 10);

/// Effective parallelism for job counts 1..max_jobs of `stream` (its `jobs`
/// field is overridden) on bi_dual_core.
std::vector<double> parallelism_sweep(JobStream stream, StrategyConfig::Kind strategy, int max_jobs,
                                      Duration horizon, std::uint64_t seed = 1);

double population_variance(const std::vector<double>& xs);

}  // namespace bubblesched
