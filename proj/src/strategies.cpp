#include "bubblesched/strategies.hpp"

#include <algorithm>
#include <memory>

namespace bubblesched {

// -- burst -------------------------------------------------------------------

namespace {

std::size_t bubble_height(const EntityStore& store, EntityId bubble)
{
    std::size_t below = 0;
    for (EntityId m : store.bubble(bubble).members) {
        const Entity& e = store.entity(m);
        if (e.is_bubble() && e.alive) {
            below = std::max(below, bubble_height(store, m));
        }
    }
    return below + 1;
}

void regenerate(EntityStore& store, ActorId actor, EntityId bubble)
{
    HolderRef self = HolderRef::bubble(bubble);
    for (EntityId m : store.bubble(bubble).members) {
        const Entity& e = store.entity(m);
        if (!e.alive) {
            continue;
        }
        if (e.holder != self) {
            if (e.holder) {
                store.move_entity(actor, m, self);
            } else if (e.is_thread()) {
                store.set_return_holder(m, self);
            }
        }
        if (e.is_bubble()) {
            regenerate(store, actor, m);
        }
    }
}

}  // namespace

std::size_t burst_level_index(const EntityStore& store, EntityId bubble, std::size_t configured)
{
    std::size_t extra = bubble_height(store, bubble) - 1;
    return configured > extra ? configured - extra : 0;
}

SchedDecision burst_schedule(GroundScheduler& sched, const BurstConfig& cfg, EntityId bubble, CpuId cpu)
{
    EntityStore& store = sched.store();
    const Topology& topo = sched.topology();
    const Entity& ent = store.entity(bubble);
    if (!ent.holder || !ent.holder->is_runqueue() || store.ready_count(bubble) == 0) {
        return SchedDecision::idle();
    }
    auto configured = topo.level_index(cfg.burst_level);
    if (!configured) {
        throw ConfigError("burst level '" + std::string(to_string(cfg.burst_level)) + "' is not in the topology");
    }
    const std::size_t target = burst_level_index(store, bubble, *configured);
    RunqueueId source = ent.holder->as_runqueue();
    const LevelNode& node = topo.node_of(source);

    RunqueueId dest = source;
    if (node.depth < target) {
        if (auto child = topo.child_toward(node.id, cpu)) {
            dest = topo.node(*child).runqueue;
        }
    }
    ActorId self = ActorId::cpu(cpu);
    HolderRef dest_ref = HolderRef::runqueue(dest);
    LockSet lock(store, self, {HolderRef::runqueue(source), HolderRef::bubble(bubble), dest_ref});
    if (dest != source) {
        store.move_entity(self, bubble, dest_ref);
    }
    if (topo.node_of(dest).depth >= target) {
        store.emit(EventKind::Burst, TraceRef::bubble(bubble), TraceRef::holder(dest_ref));
        std::vector<EntityId> contents = store.bubble(bubble).contents;
        for (EntityId e : contents) {
            store.move_entity(self, e, dest_ref);
        }
    }
    return SchedDecision::retry();
}

void burst_tick(GroundScheduler& sched, EntityId bubble)
{
    EntityStore& store = sched.store();
    const RunqueueId root = sched.topology().root_runqueue();
    ActorId timer = ActorId::timer();
    if (!store.lock_subtree(timer, root)) {
        throw LockError("regeneration found the machine subtree locked");
    }
    store.emit(EventKind::Regenerate, TraceRef::bubble(bubble), TraceRef::holder(HolderRef::runqueue(root)));
    regenerate(store, timer, bubble);
    if (store.entity(bubble).holder != HolderRef::runqueue(root)) {
        store.move_entity(timer, bubble, HolderRef::runqueue(root));
    }
    store.unlock_subtree(timer, root);
}

Strategy make_burst_strategy(const Topology& topology, BurstConfig cfg)
{
    if (!topology.level_index(cfg.burst_level)) {
        throw ConfigError("burst level '" + std::string(to_string(cfg.burst_level)) + "' is not in the topology");
    }
    if (cfg.regen_period <= Duration{0}) {
        throw ConfigError("regeneration period must be positive");
    }
    Strategy s;
    s.name = "burst";
    s.bubble_schedule = [cfg](GroundScheduler& sched, EntityId b, CpuId cpu) {
        return burst_schedule(sched, cfg, b, cpu);
    };
    s.bubble_tick = [](GroundScheduler& sched, EntityId b) { burst_tick(sched, b); };
    s.bubble_timeslice = cfg.regen_period;
    return s;
}

// -- gang --------------------------------------------------------------------

void gang_daemon_step(GroundScheduler& sched, ActorId self, RunqueueId scope, RunqueueId pool)
{
    EntityStore& store = sched.store();
    HolderRef scope_ref = HolderRef::runqueue(scope);
    HolderRef pool_ref = HolderRef::runqueue(pool);
    LockSet lock(store, self, {scope_ref, pool_ref});
    std::vector<EntityId> aside(store.holder_entities(scope_ref).begin(), store.holder_entities(scope_ref).end());
    for (EntityId e : aside) {
        store.move_entity(self, e, pool_ref);
    }
    TraceRef selected = TraceRef::none();
    if (!store.runqueue_empty(pool)) {
        EntityId head = store.holder_entities(pool_ref).front();
        store.move_entity(self, head, scope_ref);
        selected = TraceRef::entity(store.entity(head).kind, head);
    }
    store.emit(EventKind::DaemonStep, TraceRef::actor(self), TraceRef::holder(scope_ref),
               "selected=" + to_string(selected));
}

Strategy make_gang_strategy(std::vector<GangConfig> scopes)
{
    if (scopes.empty()) {
        throw ConfigError("gang scheduling needs at least one scope runqueue");
    }
    for (const auto& g : scopes) {
        if (g.timeslice <= Duration{0}) {
            throw ConfigError("gang timeslice must be positive");
        }
    }
    auto pool = std::make_shared<std::optional<RunqueueId>>();
    Strategy s;
    s.name = scopes.size() == 1 ? "gang" : "gang-per-node";
    s.on_install = [pool, scopes](GroundScheduler& sched) {
        for (const auto& g : scopes) {
            if (!sched.topology().is_valid(g.scope_rq)) {
                throw ConfigError("gang scope rq" + std::to_string(g.scope_rq.value()) + " is not in the topology");
            }
        }
        *pool = sched.store().add_private_runqueue("gang-pool");
    };
    s.initial_placement = [pool, scopes](GroundScheduler& sched, EntityId) {
        for (const auto& g : scopes) {
            if (sched.store().runqueue_empty(g.scope_rq)) {
                return HolderRef::runqueue(g.scope_rq);
            }
        }
        return HolderRef::runqueue(pool->value());
    };
    for (std::size_t i = 0; i < scopes.size(); ++i) {
        Daemon d;
        d.name = scopes.size() == 1 ? "gang sched" : "gang sched " + std::to_string(i);
        d.period = scopes[i].timeslice;
        d.scope = scopes[i].scope_rq;
        RunqueueId scope = scopes[i].scope_rq;
        d.body = [pool, scope](GroundScheduler& sched, ActorId self) {
            gang_daemon_step(sched, self, scope, pool->value());
        };
        s.daemons.push_back(std::move(d));
    }
    return s;
}

Strategy make_gang_strategy(const Topology& topology, Duration timeslice)
{
    return make_gang_strategy({GangConfig{timeslice, topology.root_runqueue()}});
}

Strategy make_gang_per_node_strategy(const Topology& topology, Duration timeslice)
{
    std::vector<RunqueueId> nodes = topology.runqueues_at(LevelKind::numa_node);
    if (nodes.empty()) {
        throw ConfigError("gang-per-node needs a numa_node level in the topology");
    }
    std::vector<GangConfig> scopes;
    for (RunqueueId rq : nodes) {
        scopes.push_back({timeslice, rq});
    }
    return make_gang_strategy(std::move(scopes));
}

// -- work stealing -----------------------------------------------------------

std::optional<EntityId> choose_steal_target(const EntityStore& store, HolderRef victim)
{
    std::vector<EntityId> candidates;
    for (EntityId e : store.holder_entities(victim)) {
        if (store.ready_count(e) > 0) {
            candidates.push_back(e);
        }
    }
    if (candidates.empty()) {
        return std::nullopt;
    }
    EntityId pick = candidates.back();
    if (!store.entity(pick).is_bubble()) {
        return pick;
    }
    if (candidates.size() == 1) {
        return choose_steal_target(store, HolderRef::bubble(pick)).value_or(pick);
    }
    bool nested = false;
    for (EntityId e : store.bubble(pick).contents) {
        if (store.entity(e).is_bubble() && store.ready_count(e) > 0) {
            nested = true;
            break;
        }
    }
    if (nested) {
        return choose_steal_target(store, HolderRef::bubble(pick)).value_or(pick);
    }
    return pick;
}

SchedDecision steal_work(GroundScheduler& sched, CpuId cpu)
{
    EntityStore& store = sched.store();
    const Topology& topo = sched.topology();
    const HolderRef mine = HolderRef::runqueue(topo.leaf_runqueue(cpu));
    NodeId node = topo.leaf(cpu);
    while (auto parent = topo.node(node).parent) {
        for (NodeId sibling : topo.node(*parent).children) {
            if (sibling == node) {
                continue;
            }
            for (RunqueueId rq : topo.subtree_runqueues(topo.node(sibling).runqueue)) {
                HolderRef victim = HolderRef::runqueue(rq);
                auto target = choose_steal_target(store, victim);
                if (!target) {
                    continue;
                }
                const Entity& e = store.entity(*target);
                std::string chain;
                for (EntityId h : store.home_chain(*target)) {
                    chain += (chain.empty() ? "b" : "/b") + std::to_string(h.value());
                }
                ActorId self = ActorId::cpu(cpu);
                LockSet lock(store, self, {*e.holder, mine});
                store.emit(EventKind::Steal, TraceRef::entity(e.kind, *target), TraceRef::holder(mine),
                           "victim=" + to_string(TraceRef::holder(victim)) + " home=" + (chain.empty() ? "-" : chain));
                store.move_entity(self, *target, mine);
                return SchedDecision::retry();
            }
        }
        node = *parent;
    }
    return SchedDecision::idle();
}

Strategy make_steal_strategy(const Topology& topology, StealConfig)
{
    Strategy s;
    s.name = "steal";
    s.on_idle = [](GroundScheduler& sched, CpuId cpu) { return steal_work(sched, cpu); };
    RunqueueId start = topology.leaf_runqueue(CpuId{0});
    s.initial_placement = [start](GroundScheduler&, EntityId) { return HolderRef::runqueue(start); };
    return s;
}

}  // namespace bubblesched
