#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "bubblesched/ground_sched.hpp"
#include "bubblesched/strategies.hpp"

namespace bubblesched {

// Workloads -----------------------------------------------------------------

struct ProgramOp {
    enum class Kind : std::uint8_t { compute, sleep, spawn, barrier, busy, exit };

    Kind kind = Kind::exit;
    Duration duration{};
    /// Program spawned by a `spawn` op.
    std::string program;

    friend bool operator==(const ProgramOp&, const ProgramOp&) = default;
};

using Program = std::vector<ProgramOp>;

struct BusyGangs {
    std::vector<int> sizes;

    friend bool operator==(const BusyGangs&, const BusyGangs&) = default;
};

struct JobStream {
    int jobs = 1;
    int threads = 1;
    Duration work{};
    std::optional<Duration> sync;
    /// Arrival offsets drawn uniformly in [0, jitter], rounded to the quantum.
    Duration jitter{};
    /// Each compute chunk is scaled by a factor drawn in [1, 1 + noise].
    double noise = 0.0;

    friend bool operator==(const JobStream&, const JobStream&) = default;
};

struct CustomItem {
    enum class Kind : std::uint8_t { bubble, thread };

    Kind kind = Kind::thread;
    Program program;
    std::vector<CustomItem> children;

    friend bool operator==(const CustomItem&, const CustomItem&) = default;
};

struct CustomWorkload {
    std::map<std::string, Program> programs;
    /// Each top-level item is one job.
    std::vector<CustomItem> items;

    friend bool operator==(const CustomWorkload&, const CustomWorkload&) = default;
};

struct WorkloadSpec {
    std::variant<BusyGangs, JobStream, CustomWorkload> kind;

    /// Line-oriented workload file; see docs/formats.md. Throws ConfigError.
    static WorkloadSpec parse(std::string_view text);
    void validate() const;

    friend bool operator==(const WorkloadSpec&, const WorkloadSpec&) = default;
};

// Configuration and results --------------------------------------------------

struct StrategyConfig {
    enum class Kind : std::uint8_t { none, burst, gang, gang_per_node, steal };

    Kind kind = Kind::none;
    Duration timeslice = std::chrono::microseconds(200);
    /// Defaults to the first level below the machine.
    std::optional<LevelKind> burst_level;
    Duration regen = std::chrono::milliseconds(50);
};

std::string_view to_string(StrategyConfig::Kind kind);
std::optional<StrategyConfig::Kind> parse_strategy_kind(std::string_view text);

struct SimConfig {
    TopologySpec topology;
    WorkloadSpec workload;
    StrategyConfig strategy;
    Duration quantum = std::chrono::microseconds(100);
    Duration horizon{};
    std::uint64_t seed = 0;

    void validate() const;
};

struct JobRecord {
    int index = 0;
    TraceRef root;
    Duration arrival{};
    std::optional<Duration> completion;
    /// Work the job's threads had to do at local speed (compute ops only).
    Duration useful_work{};
    std::size_t threads = 0;

    std::optional<Duration> makespan() const
    {
        return completion ? std::optional<Duration>(*completion - arrival) : std::nullopt;
    }
};

struct RunResult {
    TraceLog trace;
    std::map<EntityId, Duration> per_thread_cpu;
    std::map<EntityId, std::string> thread_names;
    /// Busy fraction in [0, 1] per CPU over [0, end_time].
    std::vector<double> per_cpu_busy;
    std::vector<Duration> per_cpu_busy_time;
    std::vector<JobRecord> jobs;
    Duration end_time{};
    Snapshot final_state;

    /// Total useful work over the span from first arrival to last completion;
    /// nullopt while some job is unfinished.
    std::optional<double> effective_parallelism() const;
};

/// One deterministic simulation. Owns its topology, entities and trace, so
/// any number can run side by side.
class Simulation {
public:
    explicit Simulation(SimConfig config);
    ~Simulation();
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    /// Runs to the horizon (or until every thread is dead).
    RunResult run();

    /// Processes one quantum boundary. Returns false once the run is over.
    bool step();

    /// Per-CPU part of a boundary: continue, preempt or schedule.
    void cpu_step(CpuId cpu);

    /// Progress multiplier for `thread` running on `cpu` (NUMA cost model).
    double synthetic_job_cost(EntityId thread, CpuId cpu) const;

    Duration now() const { return now_; }
    const SimConfig& config() const { return config_; }
    const Topology& topology() const { return *topology_; }
    EntityStore& store() { return *store_; }
    GroundScheduler& scheduler() { return *sched_; }
    const TraceLog& trace() const { return trace_; }

    /// Final-state snapshot in trace terms.
    Snapshot snapshot() const;

private:
    struct ThreadRun;
    struct JobState;

    void instantiate_job(std::size_t job);
    EntityId make_thread(std::optional<EntityId> home, int job, const Program& program,
                         std::optional<EntityId> creator);
    void build_custom_item(const CustomItem& item, std::optional<EntityId> home, int job,
                           std::vector<EntityId>& tops);
    void account_quantum();
    void advance_program(CpuId cpu, EntityId thread);
    void finish_thread(CpuId cpu, EntityId thread);
    void retire_bubbles(EntityId thread);
    void finish_run();
    bool all_done() const;

    SimConfig config_;
    std::shared_ptr<const Topology> topology_;
    TraceLog trace_;
    std::unique_ptr<EntityStore> store_;
    std::unique_ptr<GroundScheduler> sched_;
    std::mt19937_64 rng_;
    Duration now_{};
    bool started_ = false;
    bool finished_ = false;
    std::map<EntityId, ThreadRun> runs_;
    std::vector<JobState> jobs_;
    std::vector<Duration> busy_;
    std::size_t live_threads_ = 0;
    /// Timed wake-ups as (due, sequence, thread).
    std::vector<std::tuple<Duration, std::uint64_t, EntityId>> wakes_;
    std::uint64_t wake_seq_ = 0;
};

RunResult run_simulation(const SimConfig& config);

}  // namespace bubblesched
