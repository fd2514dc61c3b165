#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bubblesched/entity.hpp"

namespace bubblesched {

struct SchedDecision {
    enum class Kind : std::uint8_t { run_thread, retry, idle };

    Kind kind = Kind::idle;
    EntityId thread;

    static SchedDecision run(EntityId t) { return {Kind::run_thread, t}; }
    static SchedDecision retry() { return {Kind::retry, {}}; }
    static SchedDecision idle() { return {Kind::idle, {}}; }

    bool is_run() const { return kind == Kind::run_thread; }
    bool is_retry() const { return kind == Kind::retry; }
    bool is_idle() const { return kind == Kind::idle; }

    friend bool operator==(const SchedDecision&, const SchedDecision&) = default;
};

class GroundScheduler;

struct Daemon {
    std::string name;
    Duration period{};
    /// Runqueue the daemon manages; traced as the DaemonStep location.
    std::optional<RunqueueId> scope;
    std::function<void(GroundScheduler&, ActorId self)> body;
};

/// A bubble scheduler: the hooks plugged into the ground scheduler. Every
/// member is optional.
struct Strategy {
    std::string name;

    /// Called when a scan meets a bubble on a runqueue. Idle means "nothing
    /// here, keep scanning"; Retry means placement changed, rescan.
    std::function<SchedDecision(GroundScheduler&, EntityId bubble, CpuId cpu)> bubble_schedule;

    /// Called when an armed bubble's timeslice expires.
    std::function<void(GroundScheduler&, EntityId bubble)> bubble_tick;
    /// Arms bubble_tick for every top-level bubble.
    std::optional<Duration> bubble_timeslice;

    /// Processor idleness: called when a CPU's own scan found nothing.
    std::function<SchedDecision(GroundScheduler&, CpuId cpu)> on_idle;

    /// Thread wake-up slot. No reference strategy uses it.
    std::function<void(GroundScheduler&, EntityId thread)> on_wake;

    /// Runs once at installation (e.g. to create private runqueues).
    std::function<void(GroundScheduler&)> on_install;

    /// Where a new top-level entity starts. Default: the machine runqueue.
    std::function<HolderRef(GroundScheduler&, EntityId top)> initial_placement;

    std::vector<Daemon> daemons;
};

/// The hierarchical self-scheduler. Idle CPUs scan the runqueues that span
/// them from leaf to root and run the first thread they find; bubbles met on
/// the way go through the strategy's bubble_schedule hook.
class GroundScheduler {
public:
    GroundScheduler(EntityStore& store, Duration quantum);

    EntityStore& store() { return store_; }
    const EntityStore& store() const { return store_; }
    const Topology& topology() const { return store_.topology(); }
    Duration quantum() const { return quantum_; }
    Duration now() const { return store_.clock(); }

    /// Registers hooks and daemons. Throws ApiError when a strategy is
    /// already installed or the simulation has started, ConfigError when a
    /// period or timeslice is not a positive multiple of the quantum.
    void install_strategy(Strategy strategy);
    bool has_strategy() const { return strategy_.has_value(); }
    const Strategy* strategy() const { return strategy_ ? &*strategy_ : nullptr; }
    void mark_started() { started_ = true; }

    /// Places a new top-level entity per the strategy and arms its tick.
    void place_top_level(EntityId e);

    /// The scan. May run hooks that move entities; never takes the thread.
    SchedDecision schedule_next(CpuId cpu);

    /// Oldest ready thread inside `bubble`; Retry with the bubble recorded in
    /// `visited` when it holds none.
    SchedDecision default_bubble_schedule(EntityId bubble, CpuId cpu, std::set<EntityId>& visited) const;

    /// schedule_next, then the idle hook, then takes the chosen thread off its
    /// holder and switches it in. Returns the thread now running, if any.
    std::optional<EntityId> dispatch(CpuId cpu);

    /// Takes `thread` off its holder and runs it on `cpu`.
    void run_thread(CpuId cpu, EntityId thread);

    /// Returns `cpu`'s running thread to the tail of the holder it came from.
    void preempt(CpuId cpu);

    /// Stops `cpu`'s running thread without re-enqueueing it (sleep, death,
    /// end of run); traces the switch-out with `reason`.
    EntityId switch_out(CpuId cpu, ThreadState new_state, std::string_view reason);

    /// Sleeping thread becomes ready at the tail of its return holder.
    void wake(EntityId thread);

    /// Adds one quantum of CPU time to every running thread.
    void charge_running();

    /// Timer work at a quantum boundary: expired bubble timeslices fire
    /// bubble_tick, then daemons whose period elapsed run, in install order.
    void on_tick(Duration now);

    std::optional<EntityId> running_on(CpuId cpu) const { return running_[cpu.value()]; }
    std::size_t rescans() const { return rescans_; }

private:
    SchedDecision scan_runqueue(RunqueueId rq, CpuId cpu, std::set<EntityId>& visited,
                                bool& restart);
    std::optional<EntityId> oldest_ready(HolderRef holder, const std::set<EntityId>& visited) const;

    EntityStore& store_;
    Duration quantum_;
    std::optional<Strategy> strategy_;
    bool started_ = false;
    std::vector<std::optional<EntityId>> running_;
    struct ArmedTick {
        EntityId bubble;
        Duration due;
    };
    std::vector<ArmedTick> ticks_;
    std::size_t rescans_ = 0;
};

}  // namespace bubblesched
