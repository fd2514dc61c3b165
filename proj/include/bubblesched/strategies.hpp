#pragma once

#include <optional>
#include <vector>

#include "bubblesched/ground_sched.hpp"

namespace bubblesched {

// Burst scheduling --------------------------------------------------------

struct BurstConfig {
    LevelKind burst_level = LevelKind::numa_node;
    Duration regen_period{};
};

/// Level index at which `bubble` releases its content: the configured burst
/// level for bubbles holding only threads, one level higher per extra level
/// of bubble nesting below it, never above the machine.
std::size_t burst_level_index(const EntityStore& store, EntityId bubble, std::size_t configured);

/// Pulls `bubble` one level toward `cpu` and bursts it when it reaches its
/// burst level. Returns Retry, or Idle when the bubble holds no ready thread.
SchedDecision burst_schedule(GroundScheduler& sched, const BurstConfig& cfg, EntityId bubble, CpuId cpu);

/// Regeneration: puts the original content back into `bubble` (recursively)
/// and the bubble back on the machine runqueue.
void burst_tick(GroundScheduler& sched, EntityId bubble);

Strategy make_burst_strategy(const Topology& topology, BurstConfig cfg);

// Gang scheduling ---------------------------------------------------------

struct GangConfig {
    Duration timeslice{};
    RunqueueId scope_rq;
};

/// One daemon step: put every entity of `scope` aside on `pool`, then bring
/// the pool's head entity back to `scope`. Both locks are held throughout.
void gang_daemon_step(GroundScheduler& sched, ActorId self, RunqueueId scope, RunqueueId pool);

/// One gang daemon over the machine runqueue.
Strategy make_gang_strategy(const Topology& topology, Duration timeslice);

/// One gang daemon per NUMA-node runqueue, all sharing one pool. Throws
/// ConfigError if the topology has no numa_node level.
Strategy make_gang_per_node_strategy(const Topology& topology, Duration timeslice);

/// Generic form: one daemon per scope, shared pool.
Strategy make_gang_strategy(std::vector<GangConfig> scopes);

// Work stealing -----------------------------------------------------------

struct StealConfig {};

/// Entity to steal from `victim`: descend through single candidates, and
/// among several take the last one, descending further only into bubbles
/// that themselves hold sub-bubbles. Nullopt when nothing is ready there.
std::optional<EntityId> choose_steal_target(const EntityStore& store, HolderRef victim);

/// Searches sibling subtrees bottom-up (local first, then more globally) and
/// moves one stolen entity to `cpu`'s leaf runqueue. Retry if something was
/// stolen, Idle otherwise.
SchedDecision steal_work(GroundScheduler& sched, CpuId cpu);

/// Work stealing; the hierarchy starts on CPU 0's runqueue.
Strategy make_steal_strategy(const Topology& topology, StealConfig cfg = {});

}  // namespace bubblesched
