#include "bubblesched/entity.hpp"

#include <algorithm>
#include <limits>

namespace bubblesched {

namespace {

std::string token(HolderRef h)
{
    return to_string(TraceRef::holder(h));
}

constexpr std::uint32_t detached_rank = std::numeric_limits<std::uint32_t>::max();

}  // namespace

std::string_view to_string(ThreadState state)
{
    switch (state) {
    case ThreadState::ready:
        return "ready";
    case ThreadState::running:
        return "running";
    case ThreadState::sleeping:
        return "sleeping";
    case ThreadState::dead:
        return "dead";
    }
    return "?";
}

EntityStore::EntityStore(std::shared_ptr<const Topology> topology, TraceLog* trace)
    : topology_(std::move(topology)), trace_(trace)
{
    if (!topology_) {
        throw ApiError("entity store needs a topology");
    }
    for (std::size_t i = 0; i < topology_->node_count(); ++i) {
        const LevelNode& n = topology_->node(NodeId{static_cast<std::uint32_t>(i)});
        Runqueue rq;
        rq.id = n.runqueue;
        rq.name = std::string(to_string(n.kind)) + std::to_string(i);
        runqueues_.push_back(std::move(rq));
    }
}

void EntityStore::emit(EventKind kind, TraceRef subject, TraceRef location, std::string detail)
{
    if (trace_) {
        trace_->record(TraceEvent{now_, kind, subject, location, std::move(detail)});
    }
}

// -- creation ----------------------------------------------------------------

EntityId EntityStore::create_bubble(std::optional<EntityId> home, std::string name)
{
    if (home) {
        const Entity& h = entity(*home);
        if (!h.is_bubble() || !h.alive) {
            throw ApiError("home of a new bubble must be a live bubble");
        }
    }
    EntityId id{static_cast<std::uint32_t>(entities_.size())};
    Entity b;
    b.id = id;
    b.kind = EntityKind::bubble;
    b.name = name.empty() ? "b" + std::to_string(id.value()) : std::move(name);
    b.data = BubbleInfo{};
    entities_.push_back(std::move(b));
    if (home) {
        Entity& self = mut(id);
        self.home = home;
        self.holder = HolderRef::bubble(*home);
        self.enqueue_seq = next_seq_++;
        mut_bubble(*home).members.push_back(id);
        mut_bubble(*home).contents.push_back(id);
        emit(EventKind::BubblePlacement, TraceRef::bubble(id), TraceRef::bubble(*home),
             "from=- home=b" + std::to_string(home->value()));
    }
    return id;
}

EntityId EntityStore::create_thread(std::optional<EntityId> home, ThreadAttrs attrs)
{
    if (home) {
        const Entity& h = entity(*home);
        if (!h.is_bubble() || !h.alive) {
            throw ApiError("home of a new thread must be a live bubble");
        }
    }
    EntityId id{static_cast<std::uint32_t>(entities_.size())};
    Entity t;
    t.id = id;
    t.kind = EntityKind::thread;
    t.name = attrs.name.empty() ? "t" + std::to_string(id.value()) : std::move(attrs.name);
    ThreadInfo info;
    info.expected_cpu = attrs.expected_cpu;
    info.memory_usage = attrs.memory_usage;
    info.cache_miss_rate = attrs.cache_miss_rate;
    t.data = info;
    entities_.push_back(std::move(t));

    Entity& self = mut(id);
    std::string detail;
    if (home) {
        self.home = home;
        self.holder = HolderRef::bubble(*home);
        self.enqueue_seq = next_seq_++;
        mut_bubble(*home).members.push_back(id);
        mut_bubble(*home).contents.push_back(id);
        detail = "home=b" + std::to_string(home->value()) + " ";
    }
    emit(EventKind::ThreadBirth, TraceRef::thread(id), home ? TraceRef::bubble(*home) : TraceRef::none(),
         detail + "name=" + self.name);
    return id;
}

EntityId EntityStore::spawn_thread(EntityId creator, ThreadAttrs attrs)
{
    const Entity& c = entity(creator);
    if (!c.is_thread() || !c.alive) {
        throw ApiError("spawn_thread: creator must be a live thread");
    }
    return create_thread(c.home, std::move(attrs));
}

void EntityStore::destroy_bubble(EntityId bubble)
{
    Entity& b = mut(bubble);
    if (!b.is_bubble() || !b.alive) {
        throw ApiError("destroy_bubble: not a live bubble");
    }
    if (b.holder) {
        throw ApiError("destroy_bubble: bubble is still placed");
    }
    const BubbleInfo& info = std::get<BubbleInfo>(b.data);
    if (!info.contents.empty()) {
        throw ApiError("destroy_bubble: bubble is not empty");
    }
    for (EntityId m : info.members) {
        if (entities_[m.value()].alive) {
            throw ApiError("destroy_bubble: member " + entities_[m.value()].name + " is still alive");
        }
    }
    b.alive = false;
}

RunqueueId EntityStore::add_private_runqueue(std::string name)
{
    Runqueue rq;
    rq.id = RunqueueId{static_cast<std::uint32_t>(runqueues_.size())};
    rq.name = std::move(name);
    rq.is_private = true;
    runqueues_.push_back(std::move(rq));
    return runqueues_.back().id;
}

// -- inspection --------------------------------------------------------------

const Entity& EntityStore::entity(EntityId id) const
{
    if (id.value() >= entities_.size()) {
        throw ApiError("unknown entity " + std::to_string(id.value()));
    }
    return entities_[id.value()];
}

Entity& EntityStore::mut(EntityId id)
{
    return const_cast<Entity&>(std::as_const(*this).entity(id));
}

const ThreadInfo& EntityStore::thread(EntityId id) const
{
    const Entity& e = entity(id);
    if (!e.is_thread()) {
        throw ApiError("entity " + std::to_string(id.value()) + " is not a thread");
    }
    return std::get<ThreadInfo>(e.data);
}

ThreadInfo& EntityStore::mut_thread(EntityId id)
{
    return const_cast<ThreadInfo&>(std::as_const(*this).thread(id));
}

const BubbleInfo& EntityStore::bubble(EntityId id) const
{
    const Entity& e = entity(id);
    if (!e.is_bubble()) {
        throw ApiError("entity " + std::to_string(id.value()) + " is not a bubble");
    }
    return std::get<BubbleInfo>(e.data);
}

BubbleInfo& EntityStore::mut_bubble(EntityId id)
{
    return const_cast<BubbleInfo&>(std::as_const(*this).bubble(id));
}

const Runqueue& EntityStore::runqueue(RunqueueId id) const
{
    if (id.value() >= runqueues_.size()) {
        throw ApiError("unknown runqueue rq" + std::to_string(id.value()));
    }
    return runqueues_[id.value()];
}

void EntityStore::require_holder_valid(HolderRef holder) const
{
    if (holder.is_runqueue()) {
        runqueue(holder.as_runqueue());
        return;
    }
    const Entity& b = entity(holder.as_bubble());
    if (!b.is_bubble()) {
        throw ApiError(token(holder) + " is not a holder");
    }
    if (!b.alive) {
        throw ApiError(token(holder) + " has been destroyed");
    }
}

std::span<const EntityId> EntityStore::holder_entities(HolderRef holder) const
{
    if (holder.is_runqueue()) {
        return runqueue(holder.as_runqueue()).entities;
    }
    return bubble(holder.as_bubble()).contents;
}

std::vector<EntityId>& EntityStore::list_of(HolderRef holder)
{
    if (holder.is_runqueue()) {
        return const_cast<Runqueue&>(runqueue(holder.as_runqueue())).entities;
    }
    return mut_bubble(holder.as_bubble()).contents;
}

HolderLock& EntityStore::lock_of(HolderRef holder)
{
    return const_cast<HolderLock&>(std::as_const(*this).lock_of(holder));
}

const HolderLock& EntityStore::lock_of(HolderRef holder) const
{
    if (holder.is_runqueue()) {
        return runqueue(holder.as_runqueue()).lock;
    }
    return bubble(holder.as_bubble()).lock;
}

std::optional<RunqueueId> EntityStore::physical_runqueue(EntityId e) const
{
    std::optional<HolderRef> h = entity(e).holder;
    while (h) {
        if (h->is_runqueue()) {
            return h->as_runqueue();
        }
        h = entities_[h->index()].holder;
    }
    return std::nullopt;
}

std::vector<EntityId> EntityStore::home_chain(EntityId e) const
{
    std::vector<EntityId> chain;
    std::optional<EntityId> h = entity(e).home;
    while (h) {
        chain.push_back(*h);
        h = entities_[h->value()].home;
    }
    return chain;
}

std::size_t EntityStore::ready_count(EntityId e) const
{
    const Entity& ent = entity(e);
    if (ent.is_thread()) {
        return std::get<ThreadInfo>(ent.data).state == ThreadState::ready ? 1 : 0;
    }
    std::size_t n = 0;
    for (EntityId c : std::get<BubbleInfo>(ent.data).contents) {
        n += ready_count(c);
    }
    return n;
}

bool EntityStore::has_ready_thread(HolderRef holder) const
{
    for (EntityId e : holder_entities(holder)) {
        if (ready_count(e) > 0) {
            return true;
        }
    }
    return false;
}

void EntityStore::accumulate(EntityId e, BubbleStats& stats, double& weighted_miss) const
{
    const Entity& ent = entities_[e.value()];
    if (!ent.alive) {
        return;
    }
    if (ent.is_thread()) {
        const auto& t = std::get<ThreadInfo>(ent.data);
        stats.total_threads += 1;
        stats.running_threads += t.state == ThreadState::running ? 1 : 0;
        stats.expected_cpu += t.expected_cpu.value_or(Duration{0});
        stats.current_cpu += t.accumulated_cpu;
        stats.memory_usage += t.memory_usage;
        weighted_miss += t.cache_miss_rate * static_cast<double>(t.accumulated_cpu.count());
        return;
    }
    for (EntityId m : std::get<BubbleInfo>(ent.data).members) {
        accumulate(m, stats, weighted_miss);
    }
}

BubbleStats EntityStore::bubble_stats(EntityId b) const
{
    const Entity& ent = entity(b);
    if (!ent.is_bubble() || !ent.alive) {
        throw ApiError("bubble_stats: not a live bubble");
    }
    BubbleStats stats;
    double weighted_miss = 0.0;
    accumulate(b, stats, weighted_miss);
    if (stats.current_cpu.count() > 0) {
        stats.cache_miss_rate = weighted_miss / static_cast<double>(stats.current_cpu.count());
    }
    return stats;
}

// -- movement ----------------------------------------------------------------

void EntityStore::require_lock(ActorId actor, HolderRef holder, const char* what) const
{
    if (!check_lock_held_) {
        return;
    }
    const auto& owner = lock_of(holder).owner;
    if (!owner || *owner != actor) {
        throw LockError(std::string(what) + ": " + to_string(actor) + " does not hold the lock of " + token(holder));
    }
}

void EntityStore::get_entity(ActorId actor, EntityId e)
{
    Entity& ent = mut(e);
    if (!ent.holder) {
        throw ApiError("get_entity: " + ent.name + " is not in any holder");
    }
    require_lock(actor, *ent.holder, "get_entity");
    auto& list = list_of(*ent.holder);
    auto it = std::find(list.begin(), list.end(), e);
    if (it == list.end()) {
        throw ApiError("get_entity: holder list out of sync for " + ent.name);
    }
    list.erase(it);
    ent.holder.reset();
}

bool EntityStore::contains_physically(EntityId ancestor, HolderRef holder) const
{
    std::optional<HolderRef> h = holder;
    while (h && h->is_bubble()) {
        if (h->as_bubble() == ancestor) {
            return true;
        }
        h = entities_[h->index()].holder;
    }
    return false;
}

void EntityStore::put_impl(ActorId actor, EntityId e, HolderRef holder, std::optional<EventKind> kind, TraceRef from,
                           std::string extra_detail)
{
    Entity& ent = mut(e);
    if (!ent.alive) {
        throw ApiError("put_entity: " + ent.name + " is dead");
    }
    if (ent.holder) {
        throw ApiError("put_entity: " + ent.name + " is already in " + token(*ent.holder));
    }
    require_holder_valid(holder);
    if (ent.is_thread() && std::get<ThreadInfo>(ent.data).state != ThreadState::ready) {
        throw ApiError("put_entity: thread " + ent.name + " is not ready");
    }
    if (ent.is_bubble() && contains_physically(e, holder)) {
        throw ApiError("put_entity: putting " + ent.name + " into " + token(holder) + " would form a cycle");
    }
    require_lock(actor, holder, "put_entity");
    list_of(holder).push_back(e);
    Entity& placed = mut(e);
    placed.holder = holder;
    placed.enqueue_seq = next_seq_++;
    EventKind k = kind.value_or(placed.is_thread() ? EventKind::ThreadPlacement : EventKind::BubblePlacement);
    std::string detail = "from=" + to_string(from);
    if (!extra_detail.empty()) {
        detail += ' ';
        detail += extra_detail;
    }
    emit(k, TraceRef::entity(placed.kind, e), TraceRef::holder(holder), std::move(detail));
}

void EntityStore::put_entity(ActorId actor, EntityId e, HolderRef holder, std::optional<EventKind> kind,
                             std::string extra_detail)
{
    put_impl(actor, e, holder, kind, TraceRef::none(), std::move(extra_detail));
}

void EntityStore::move_entity(ActorId actor, EntityId e, HolderRef to, std::string extra_detail)
{
    const Entity& ent = entity(e);
    if (!ent.holder) {
        throw ApiError("move_entity: " + ent.name + " is not in any holder");
    }
    HolderRef from = *ent.holder;
    get_entity(actor, e);
    put_impl(actor, e, to, std::nullopt, TraceRef::holder(from), std::move(extra_detail));
}

void EntityStore::remove_entity(ActorId actor, EntityId e)
{
    const Entity& ent = entity(e);
    if (!ent.holder) {
        throw ApiError("remove_entity: " + ent.name + " is not in any holder");
    }
    HolderRef from = *ent.holder;
    get_entity(actor, e);
    const Entity& removed = entity(e);
    emit(removed.is_thread() ? EventKind::ThreadPlacement : EventKind::BubblePlacement,
         TraceRef::entity(removed.kind, e), TraceRef::none(), "from=" + token(from));
}

// -- thread life cycle -------------------------------------------------------

void EntityStore::mark_running(EntityId thread, CpuId cpu, HolderRef taken_from)
{
    const Entity& ent = entity(thread);
    if (ent.holder) {
        throw ApiError("mark_running: " + ent.name + " is still in a holder");
    }
    ThreadInfo& t = mut_thread(thread);
    if (t.state != ThreadState::ready) {
        throw ApiError("mark_running: " + ent.name + " is not ready");
    }
    t.state = ThreadState::running;
    t.running_on = cpu;
    t.last_cpu = cpu;
    t.return_holder = taken_from;
}

void EntityStore::mark_stopped(EntityId thread, ThreadState state)
{
    ThreadInfo& t = mut_thread(thread);
    if (t.state != ThreadState::running) {
        throw ApiError("mark_stopped: " + entity(thread).name + " is not running");
    }
    if (state == ThreadState::running) {
        throw ApiError("mark_stopped: target state must not be running");
    }
    t.state = state;
    t.running_on.reset();
    if (state == ThreadState::dead) {
        mut(thread).alive = false;
    }
}

void EntityStore::mark_woken(EntityId thread)
{
    ThreadInfo& t = mut_thread(thread);
    if (t.state != ThreadState::sleeping) {
        throw ApiError("mark_woken: " + entity(thread).name + " is not sleeping");
    }
    t.state = ThreadState::ready;
}

void EntityStore::charge(EntityId thread, Duration amount)
{
    if (amount < Duration{0}) {
        throw ApiError("charge: negative amount");
    }
    mut_thread(thread).accumulated_cpu += amount;
}

void EntityStore::set_return_holder(EntityId thread, HolderRef holder)
{
    require_holder_valid(holder);
    mut_thread(thread).return_holder = holder;
}

// -- locking -----------------------------------------------------------------

LockRank EntityStore::lock_rank(HolderRef holder) const
{
    require_holder_valid(holder);
    if (holder.is_runqueue()) {
        return {holder.index(), 0, 0};
    }
    std::uint32_t depth = 0;
    std::optional<HolderRef> h = holder;
    while (h && h->is_bubble()) {
        ++depth;
        h = entities_[h->index()].holder;
    }
    std::uint32_t rq = h ? h->index() : detached_rank;
    return {rq, depth, holder.index()};
}

void EntityStore::note_acquired(ActorId actor, HolderRef holder)
{
    LockRank rank = lock_rank(holder);
    auto it = std::find_if(held_.begin(), held_.end(), [&](const auto& p) { return p.first == actor; });
    if (it == held_.end()) {
        held_.emplace_back(actor, std::vector<std::pair<HolderRef, LockRank>>{});
        it = std::prev(held_.end());
    }
    it->second.emplace_back(holder, rank);
    emit(EventKind::LockAcquire, TraceRef::holder(holder), TraceRef::actor(actor));
}

void EntityStore::note_released(ActorId actor, HolderRef holder)
{
    auto it = std::find_if(held_.begin(), held_.end(), [&](const auto& p) { return p.first == actor; });
    if (it != held_.end()) {
        auto& locks = it->second;
        locks.erase(std::remove_if(locks.begin(), locks.end(), [&](const auto& l) { return l.first == holder; }),
                    locks.end());
    }
    emit(EventKind::LockRelease, TraceRef::holder(holder), TraceRef::actor(actor));
}

void EntityStore::acquire(ActorId actor, HolderRef holder)
{
    if (check_lock_order_) {
        LockRank rank = lock_rank(holder);
        auto it = std::find_if(held_.begin(), held_.end(), [&](const auto& p) { return p.first == actor; });
        if (it != held_.end()) {
            for (const auto& [h, r] : it->second) {
                if (r >= rank) {
                    throw LockError("lock order violation: " + to_string(actor) + " holds " + token(h) +
                                    " while locking " + token(holder));
                }
            }
        }
    }
    lock_of(holder).owner = actor;
    note_acquired(actor, holder);
}

bool EntityStore::holder_lock(ActorId actor, HolderRef holder)
{
    require_holder_valid(holder);
    HolderLock& lock = lock_of(holder);
    if (lock.owner == actor) {
        throw LockError("recursive lock of " + token(holder) + " by " + to_string(actor));
    }
    if (std::find(lock.waiters.begin(), lock.waiters.end(), actor) != lock.waiters.end()) {
        throw LockError(to_string(actor) + " is already waiting for " + token(holder));
    }
    if (lock.owner) {
        lock.waiters.push_back(actor);
        return false;
    }
    acquire(actor, holder);
    return true;
}

void EntityStore::holder_unlock(ActorId actor, HolderRef holder)
{
    require_holder_valid(holder);
    HolderLock& lock = lock_of(holder);
    if (lock.owner != actor) {
        throw LockError("unlock of " + token(holder) + " by non-owner " + to_string(actor));
    }
    lock.owner.reset();
    note_released(actor, holder);
    if (!lock.waiters.empty()) {
        ActorId next = lock.waiters.front();
        lock.waiters.pop_front();
        lock.owner = next;
        note_acquired(next, holder);
    }
}

std::optional<ActorId> EntityStore::lock_owner(HolderRef holder) const
{
    return lock_of(holder).owner;
}

std::size_t EntityStore::lock_waiters(HolderRef holder) const
{
    return lock_of(holder).waiters.size();
}

void EntityStore::collect_bubbles(HolderRef holder, std::vector<HolderRef>& out) const
{
    for (EntityId e : holder_entities(holder)) {
        if (entities_[e.value()].is_bubble()) {
            HolderRef b = HolderRef::bubble(e);
            out.push_back(b);
            collect_bubbles(b, out);
        }
    }
}

std::vector<HolderRef> EntityStore::subtree_lock_set(RunqueueId rq) const
{
    std::vector<HolderRef> out;
    for (RunqueueId r : topology_->subtree_runqueues(rq)) {
        out.push_back(HolderRef::runqueue(r));
        collect_bubbles(HolderRef::runqueue(r), out);
    }
    std::sort(out.begin(), out.end(),
              [&](HolderRef a, HolderRef b) { return lock_rank(a) < lock_rank(b); });
    return out;
}

bool EntityStore::lock_subtree(ActorId actor, RunqueueId rq)
{
    std::vector<HolderRef> set = subtree_lock_set(rq);
    for (HolderRef h : set) {
        const auto& owner = lock_of(h).owner;
        if (owner == actor) {
            throw LockError("lock_subtree: " + to_string(actor) + " already holds " + token(h));
        }
        if (owner) {
            return false;
        }
    }
    for (HolderRef h : set) {
        acquire(actor, h);
    }
    subtree_held_.emplace_back(actor, rq, std::move(set));
    return true;
}

void EntityStore::unlock_subtree(ActorId actor, RunqueueId rq)
{
    auto it = std::find_if(subtree_held_.begin(), subtree_held_.end(), [&](const auto& s) {
        return std::get<0>(s) == actor && std::get<1>(s) == rq;
    });
    if (it == subtree_held_.end()) {
        throw LockError("unlock_subtree: " + to_string(actor) + " does not hold the subtree of rq" +
                        std::to_string(rq.value()));
    }
    std::vector<HolderRef> set = std::move(std::get<2>(*it));
    subtree_held_.erase(it);
    for (auto h = set.rbegin(); h != set.rend(); ++h) {
        holder_unlock(actor, *h);
    }
}

// -- LockSet -----------------------------------------------------------------

LockSet::LockSet(EntityStore& store, ActorId actor, std::vector<HolderRef> holders) : store_(store), actor_(actor)
{
    std::sort(holders.begin(), holders.end(),
              [&](HolderRef a, HolderRef b) { return store.lock_rank(a) < store.lock_rank(b); });
    holders.erase(std::unique(holders.begin(), holders.end()), holders.end());
    try {
        for (HolderRef h : holders) {
            auto owner = store_.lock_owner(h);
            if (owner && *owner != actor_) {
                throw LockError("contended lock on " + to_string(TraceRef::holder(h)) + " inside one boundary");
            }
            store_.holder_lock(actor_, h);
            held_.push_back(h);
        }
    } catch (...) {
        for (auto h = held_.rbegin(); h != held_.rend(); ++h) {
            store_.holder_unlock(actor_, *h);
        }
        throw;
    }
}

LockSet::~LockSet()
{
    for (auto h = held_.rbegin(); h != held_.rend(); ++h) {
        store_.holder_unlock(actor_, *h);
    }
}

}  // namespace bubblesched
