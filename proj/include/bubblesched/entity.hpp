#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "bubblesched/common.hpp"
#include "bubblesched/topology.hpp"
#include "bubblesched/trace_log.hpp"

namespace bubblesched {

enum class ThreadState : std::uint8_t { ready, running, sleeping, dead };

std::string_view to_string(ThreadState state);

/// Workload-declared thread attributes.
struct ThreadAttrs {
    std::string name;
    std::optional<Duration> expected_cpu;
    std::uint64_t memory_usage = 0;
    double cache_miss_rate = 0.0;
};

struct ThreadInfo {
    ThreadState state = ThreadState::ready;
    Duration accumulated_cpu{};
    std::optional<Duration> expected_cpu;
    std::uint64_t memory_usage = 0;
    double cache_miss_rate = 0.0;
    std::optional<CpuId> running_on;
    std::optional<CpuId> last_cpu;
    /// Holder the thread goes back to when preempted or woken.
    std::optional<HolderRef> return_holder;
};

/// A single lock with a FIFO queue of blocked actors.
struct HolderLock {
    std::optional<ActorId> owner;
    std::deque<ActorId> waiters;
};

struct BubbleInfo {
    /// Physical contents (this bubble as a holder), FIFO.
    std::vector<EntityId> contents;
    /// Home members in creation order; the snapshot regeneration restores.
    std::vector<EntityId> members;
    HolderLock lock;
};

struct Entity {
    EntityId id;
    EntityKind kind = EntityKind::thread;
    std::string name;
    bool alive = true;
    std::optional<HolderRef> holder;
    std::optional<EntityId> home;
    /// Global put counter value of the last put; orders "oldest first".
    std::uint64_t enqueue_seq = 0;
    std::variant<ThreadInfo, BubbleInfo> data;

    bool is_thread() const { return kind == EntityKind::thread; }
    bool is_bubble() const { return kind == EntityKind::bubble; }
};

struct Runqueue {
    RunqueueId id;
    std::string name;
    /// Private runqueues (e.g. a gang scheduler's put-aside queue) belong to
    /// no topology node and are never scanned by CPUs.
    bool is_private = false;
    std::vector<EntityId> entities;
    HolderLock lock;
};

struct BubbleStats {
    std::size_t total_threads = 0;
    std::size_t running_threads = 0;
    Duration expected_cpu{};
    Duration current_cpu{};
    std::uint64_t memory_usage = 0;
    /// Mean weighted by accumulated CPU time; 0 without runtime.
    double cache_miss_rate = 0.0;

    friend bool operator==(const BubbleStats&, const BubbleStats&) = default;
};

/// Lock-order rank: runqueue depth-first index, then bubble nesting depth on
/// that runqueue, then entity id. Detached bubbles and private runqueues rank
/// after every topology runqueue.
using LockRank = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;

/// Owns every thread, bubble and runqueue of one simulation, and implements
/// the entity/holder primitives (get/put, locking, statistics).
///
/// Moves require the acting actor to hold the relevant holder locks. Lock
/// acquisition order is checked against LockRank unless disabled.
class EntityStore {
public:
    explicit EntityStore(std::shared_ptr<const Topology> topology, TraceLog* trace = nullptr);

    const Topology& topology() const { return *topology_; }
    std::shared_ptr<const Topology> shared_topology() const { return topology_; }

    void set_clock(Duration now) { now_ = now; }
    Duration clock() const { return now_; }
    TraceLog* trace() { return trace_; }
    void emit(EventKind kind, TraceRef subject, TraceRef location, std::string detail = {});

    // -- creation ------------------------------------------------------------

    /// New empty bubble, inserted into `home`'s contents when given.
    EntityId create_bubble(std::optional<EntityId> home = std::nullopt, std::string name = {});

    /// New ready thread placed at the tail of `home`. Without a home the
    /// thread is detached and the caller places it.
    EntityId create_thread(std::optional<EntityId> home, ThreadAttrs attrs);

    /// Thread created by `creator`, inheriting its home bubble.
    EntityId spawn_thread(EntityId creator, ThreadAttrs attrs);

    /// Destroys a detached bubble whose members are all dead or destroyed.
    void destroy_bubble(EntityId bubble);

    RunqueueId add_private_runqueue(std::string name);

    // -- inspection ----------------------------------------------------------

    std::size_t entity_count() const { return entities_.size(); }
    std::size_t runqueue_count() const { return runqueues_.size(); }
    const Entity& entity(EntityId id) const;
    const ThreadInfo& thread(EntityId id) const;
    const BubbleInfo& bubble(EntityId id) const;
    const Runqueue& runqueue(RunqueueId id) const;
    std::span<const EntityId> holder_entities(HolderRef holder) const;
    bool runqueue_empty(RunqueueId rq) const { return runqueue(rq).entities.empty(); }
    bool is_alive(EntityId id) const { return entity(id).alive; }

    /// Walks physical holders up to the runqueue that ultimately holds `e`.
    std::optional<RunqueueId> physical_runqueue(EntityId e) const;
    /// Home bubble chain, innermost first.
    std::vector<EntityId> home_chain(EntityId e) const;
    /// Number of ready threads physically inside `e` (1/0 for a thread).
    std::size_t ready_count(EntityId e) const;
    bool has_ready_thread(HolderRef holder) const;

    BubbleStats bubble_stats(EntityId bubble) const;

    // -- movement ------------------------------------------------------------

    /// Detaches `e` from its holder. The actor must hold that holder's lock.
    void get_entity(ActorId actor, EntityId e);

    /// Appends detached `e` to `holder`. The actor must hold `holder`'s lock.
    /// Traces a placement (or `kind` when given, e.g. ThreadWake).
    void put_entity(ActorId actor, EntityId e, HolderRef holder,
                    std::optional<EventKind> kind = std::nullopt, std::string extra_detail = {});

    /// get + put, tracing one placement event whose `from=` is the old holder.
    void move_entity(ActorId actor, EntityId e, HolderRef to, std::string extra_detail = {});

    /// Detaches `e` and traces a placement to nowhere (`-`).
    void remove_entity(ActorId actor, EntityId e);

    // -- thread life cycle (used by the ground scheduler) ---------------------

    void mark_running(EntityId thread, CpuId cpu, HolderRef taken_from);
    /// running -> ready/sleeping/dead; the thread stays detached.
    void mark_stopped(EntityId thread, ThreadState state);
    void mark_woken(EntityId thread);
    void charge(EntityId thread, Duration amount);
    void set_return_holder(EntityId thread, HolderRef holder);

    // -- locking -------------------------------------------------------------

    /// Acquires `holder`'s lock for `actor`. Returns false if another actor
    /// holds it; `actor` is then queued and becomes owner on hand-off.
    bool holder_lock(ActorId actor, HolderRef holder);
    /// Releases and hands the lock to the first waiter, if any.
    void holder_unlock(ActorId actor, HolderRef holder);
    std::optional<ActorId> lock_owner(HolderRef holder) const;
    std::size_t lock_waiters(HolderRef holder) const;
    LockRank lock_rank(HolderRef holder) const;

    /// Holders covered by a coarse lock of `rq`'s subtree, in rank order.
    std::vector<HolderRef> subtree_lock_set(RunqueueId rq) const;
    /// All-or-nothing: returns false (acquiring nothing) if any lock of the
    /// set is held by another actor.
    bool lock_subtree(ActorId actor, RunqueueId rq);
    void unlock_subtree(ActorId actor, RunqueueId rq);

    void set_lock_order_checking(bool enabled) { check_lock_order_ = enabled; }
    void set_lock_precondition_checking(bool enabled) { check_lock_held_ = enabled; }

private:
    Entity& mut(EntityId id);
    ThreadInfo& mut_thread(EntityId id);
    BubbleInfo& mut_bubble(EntityId id);
    HolderLock& lock_of(HolderRef holder);
    const HolderLock& lock_of(HolderRef holder) const;
    std::vector<EntityId>& list_of(HolderRef holder);
    void require_holder_valid(HolderRef holder) const;
    void require_lock(ActorId actor, HolderRef holder, const char* what) const;
    void note_acquired(ActorId actor, HolderRef holder);
    void note_released(ActorId actor, HolderRef holder);
    void collect_bubbles(HolderRef holder, std::vector<HolderRef>& out) const;
    bool contains_physically(EntityId ancestor, HolderRef holder) const;
    void accumulate(EntityId e, BubbleStats& stats, double& weighted_miss) const;
    void put_impl(ActorId actor, EntityId e, HolderRef holder, std::optional<EventKind> kind, TraceRef from,
                  std::string extra_detail);
    void acquire(ActorId actor, HolderRef holder);

    std::shared_ptr<const Topology> topology_;
    TraceLog* trace_;
    Duration now_{};
    std::vector<Entity> entities_;
    std::vector<Runqueue> runqueues_;
    std::uint64_t next_seq_ = 1;
    bool check_lock_order_ = true;
    bool check_lock_held_ = true;
    /// Per-actor held locks with the rank recorded at acquisition.
    std::vector<std::pair<ActorId, std::vector<std::pair<HolderRef, LockRank>>>> held_;
    /// Sets taken by lock_subtree, released as taken.
    std::vector<std::tuple<ActorId, RunqueueId, std::vector<HolderRef>>> subtree_held_;
};

/// RAII lock over a set of holders, acquired in rank order. Inside the
/// synchronous simulation loop no lock is ever held across a boundary, so
/// contention here is a logic error and throws LockError.
class LockSet {
public:
    LockSet(EntityStore& store, ActorId actor, std::vector<HolderRef> holders);
    ~LockSet();
    LockSet(const LockSet&) = delete;
    LockSet& operator=(const LockSet&) = delete;

private:
    EntityStore& store_;
    ActorId actor_;
    std::vector<HolderRef> held_;
};

}  // namespace bubblesched
