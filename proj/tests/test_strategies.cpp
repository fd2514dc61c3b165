#include <doctest.h>

#include <algorithm>

#include <memory>
#include <set>

#include "bubblesched/strategies.hpp"
#include "oracles.hpp"

using namespace bubblesched;

namespace {

constexpr ActorId X = ActorId::external(0);
const Duration Q = std::chrono::microseconds(100);

struct Fixture {
    explicit Fixture(const char* topo = "machine 1\nnuma_node 2\ncore 2\n")
        : topology(std::make_shared<const Topology>(Topology::build(TopologySpec::parse(topo)))),
          store(topology, &log),
          sched(store, Q)
    {
    }

    void place(EntityId e, std::uint32_t rq)
    {
        LockSet l(store, X, {HolderRef::runqueue(RunqueueId{rq})});
        store.put_entity(X, e, HolderRef::runqueue(RunqueueId{rq}));
    }

    std::vector<EntityId> on(HolderRef h) const
    {
        auto s = store.holder_entities(h);
        return {s.begin(), s.end()};
    }

    TraceLog log;
    std::shared_ptr<const Topology> topology;
    EntityStore store;
    GroundScheduler sched;
};

struct Fig1 {
    EntityId outer;
    EntityId pair[2];
    std::vector<EntityId> pair_threads[2];
    EntityId lone;
};

Fig1 make_fig1(EntityStore& s)
{
    Fig1 f;
    f.outer = s.create_bubble();
    for (int p = 0; p < 2; ++p) {
        f.pair[p] = s.create_bubble(f.outer);
        f.pair_threads[p].push_back(s.create_thread(f.pair[p], {}));
        f.pair_threads[p].push_back(s.create_thread(f.pair[p], {}));
    }
    f.lone = s.create_thread(f.outer, {});
    return f;
}

std::uint32_t node_of_cpu(const Topology& t, CpuId c)
{
    return t.node(*t.ancestor_at(c, LevelKind::numa_node)).runqueue.value();
}

}  // namespace

TEST_CASE("burst level rises with nesting height")
{
    Fixture f;
    Fig1 h = make_fig1(f.store);
    CHECK(burst_level_index(f.store, h.pair[0], 1) == 1);
    CHECK(burst_level_index(f.store, h.outer, 1) == 0);
    CHECK(burst_level_index(f.store, h.outer, 2) == 1);
}

TEST_CASE("nested pairs under burst at numa_node split across nodes")
{
    Fixture f;
    f.sched.install_strategy(make_burst_strategy(*f.topology, {LevelKind::numa_node, std::chrono::milliseconds(50)}));
    Fig1 h = make_fig1(f.store);
    f.sched.place_top_level(h.outer);
    std::map<EntityId, CpuId> where;
    for (std::uint32_t c = 0; c < 4; ++c) {
        auto t = f.sched.dispatch(CpuId{c});
        REQUIRE(t.has_value());
        where[*t] = CpuId{c};
    }
    for (int p = 0; p < 2; ++p) {
        REQUIRE(where.contains(h.pair_threads[p][0]));
        REQUIRE(where.contains(h.pair_threads[p][1]));
        CHECK(node_of_cpu(*f.topology, where[h.pair_threads[p][0]]) ==
              node_of_cpu(*f.topology, where[h.pair_threads[p][1]]));
    }
    CHECK(node_of_cpu(*f.topology, where[h.pair_threads[0][0]]) !=
          node_of_cpu(*f.topology, where[h.pair_threads[1][0]]));
    CHECK_FALSE(where.contains(h.lone));
}

TEST_CASE("a bubble already at its burst level bursts at once")
{
    Fixture f;
    BurstConfig cfg{LevelKind::numa_node, std::chrono::milliseconds(50)};
    f.sched.install_strategy(make_burst_strategy(*f.topology, cfg));
    EntityId b = f.store.create_bubble();
    EntityId t1 = f.store.create_thread(b, {});
    EntityId t2 = f.store.create_thread(b, {});
    f.place(b, 1);
    CHECK(burst_schedule(f.sched, cfg, b, CpuId{0}).is_retry());
    CHECK(f.on(HolderRef::runqueue(RunqueueId{1})) == std::vector<EntityId>{b, t1, t2});
    CHECK(f.store.bubble(b).contents.empty());
    CHECK(f.sched.schedule_next(CpuId{0}) == SchedDecision::run(t1));
}

TEST_CASE("burst emits Burst then one placement per released entity")
{
    Fixture f;
    BurstConfig cfg{LevelKind::numa_node, std::chrono::milliseconds(50)};
    f.sched.install_strategy(make_burst_strategy(*f.topology, cfg));
    EntityId b = f.store.create_bubble();
    f.store.create_thread(b, {});
    f.store.create_thread(b, {});
    f.place(b, 1);
    const std::size_t before = f.log.size();
    burst_schedule(f.sched, cfg, b, CpuId{0});
    std::vector<EventKind> kinds;
    for (std::size_t i = before; i < f.log.size(); ++i) {
        const auto k = f.log.events()[i].kind;
        if (k != EventKind::LockAcquire && k != EventKind::LockRelease) {
            kinds.push_back(k);
        }
    }
    CHECK(kinds == std::vector<EventKind>{EventKind::Burst, EventKind::ThreadPlacement, EventKind::ThreadPlacement});
}

TEST_CASE("single-level machine bursts on the machine runqueue")
{
    Fixture f("machine 1\n");
    BurstConfig cfg{LevelKind::machine, std::chrono::milliseconds(50)};
    f.sched.install_strategy(make_burst_strategy(*f.topology, cfg));
    EntityId b = f.store.create_bubble();
    EntityId t = f.store.create_thread(b, {});
    f.sched.place_top_level(b);
    CHECK(f.sched.dispatch(CpuId{0}) == t);
    CHECK(f.store.entity(b).holder == HolderRef::runqueue(RunqueueId{0}));
}

TEST_CASE("burst on a missing level is a config error")
{
    Fixture f("machine 1\ncore 2\n");
    CHECK_THROWS_AS(make_burst_strategy(*f.topology, {LevelKind::numa_node, std::chrono::milliseconds(50)}),
                    ConfigError);
}

TEST_CASE("regeneration restores the hierarchy on the machine runqueue")
{
    Fixture f;
    f.sched.install_strategy(make_burst_strategy(*f.topology, {LevelKind::numa_node, std::chrono::milliseconds(50)}));
    Fig1 h = make_fig1(f.store);
    f.sched.place_top_level(h.outer);
    auto first = std::vector<std::optional<EntityId>>{};
    for (std::uint32_t c = 0; c < 4; ++c) {
        first.push_back(f.sched.dispatch(CpuId{c}));
    }
    for (std::uint32_t c = 0; c < 4; ++c) {
        f.sched.preempt(CpuId{c});
    }
    burst_tick(f.sched, h.outer);
    CHECK(f.on(HolderRef::runqueue(RunqueueId{0})) == std::vector<EntityId>{h.outer});
    for (std::uint32_t rq = 1; rq < 7; ++rq) {
        CHECK(f.store.runqueue_empty(RunqueueId{rq}));
    }
    CHECK(f.on(HolderRef::bubble(h.outer)) == std::vector<EntityId>{h.pair[0], h.pair[1], h.lone});
    for (int p = 0; p < 2; ++p) {
        CHECK(f.on(HolderRef::bubble(h.pair[p])) == h.pair_threads[p]);
    }
    std::vector<std::optional<EntityId>> second;
    for (std::uint32_t c = 0; c < 4; ++c) {
        second.push_back(f.sched.dispatch(CpuId{c}));
    }
    CHECK(first == second);
}

TEST_CASE("regenerating an unburst bubble only places it on the root")
{
    Fixture f;
    EntityId b = f.store.create_bubble();
    EntityId t = f.store.create_thread(b, {});
    f.place(b, 4);
    burst_tick(f.sched, b);
    CHECK(f.on(HolderRef::runqueue(RunqueueId{0})) == std::vector<EntityId>{b});
    CHECK(f.on(HolderRef::bubble(b)) == std::vector<EntityId>{t});
}

TEST_CASE("gang daemon rotates gangs round-robin")
{
    Fixture f;
    RunqueueId pool = f.store.add_private_runqueue("pool");
    std::vector<EntityId> gangs;
    for (int g = 0; g < 3; ++g) {
        gangs.push_back(f.store.create_bubble());
    }
    f.place(gangs[0], 0);
    f.place(gangs[1], pool.value());
    f.place(gangs[2], pool.value());
    auto expected = oracle::gang_rotation({0}, {1, 2}, 7);
    for (int step = 0; step < 7; ++step) {
        gang_daemon_step(f.sched, ActorId::daemon(0), RunqueueId{0}, pool);
        auto scope = f.on(HolderRef::runqueue(RunqueueId{0}));
        REQUIRE(scope.size() == 1);
        CHECK(scope[0] == gangs[static_cast<std::size_t>(expected[static_cast<std::size_t>(step)])]);
    }
    CHECK(expected == std::vector<int>{1, 2, 0, 1, 2, 0, 1});
}

TEST_CASE("gang daemon with one gang or none")
{
    Fixture f;
    RunqueueId pool = f.store.add_private_runqueue("pool");
    gang_daemon_step(f.sched, ActorId::daemon(0), RunqueueId{0}, pool);
    CHECK(f.store.runqueue_empty(RunqueueId{0}));
    CHECK(f.store.runqueue_empty(pool));
    auto last = std::find_if(f.log.events().rbegin(), f.log.events().rend(), [](const TraceEvent& e) {
        return e.kind != EventKind::LockAcquire && e.kind != EventKind::LockRelease;
    });
    REQUIRE(last != f.log.events().rend());
    CHECK(last->kind == EventKind::DaemonStep);
    CHECK(last->detail == "selected=-");
    EntityId g = f.store.create_bubble();
    f.place(g, 0);
    for (int i = 0; i < 3; ++i) {
        gang_daemon_step(f.sched, ActorId::daemon(0), RunqueueId{0}, pool);
        CHECK(f.on(HolderRef::runqueue(RunqueueId{0})) == std::vector<EntityId>{g});
        CHECK(f.store.runqueue_empty(pool));
    }
}

TEST_CASE("gang-per-node needs a numa level")
{
    Fixture f("machine 1\ncore 4\n");
    CHECK_THROWS_AS(make_gang_per_node_strategy(*f.topology, std::chrono::microseconds(200)), ConfigError);
    Fixture g;
    Strategy s = make_gang_per_node_strategy(*g.topology, std::chrono::microseconds(200));
    REQUIRE(s.daemons.size() == 2);
    CHECK(s.daemons[0].scope == RunqueueId{1});
    CHECK(s.daemons[1].scope == RunqueueId{4});
}

TEST_CASE("idle cpu steals from its sibling first")
{
    Fixture f;
    f.sched.install_strategy(make_steal_strategy(*f.topology));
    std::vector<EntityId> ts;
    for (int i = 0; i < 4; ++i) {
        ts.push_back(f.store.create_thread(std::nullopt, {}));
        f.sched.place_top_level(ts.back());
    }
    CHECK(f.on(HolderRef::runqueue(RunqueueId{2})).size() == 4);
    CHECK(steal_work(f.sched, CpuId{1}).is_retry());
    CHECK(f.on(HolderRef::runqueue(RunqueueId{3})) == std::vector<EntityId>{ts[3]});
    const auto& ev = f.log.events();
    auto it = std::find_if(ev.rbegin(), ev.rend(), [](const TraceEvent& e) { return e.kind == EventKind::Steal; });
    REQUIRE(it != ev.rend());
    CHECK(detail_value(it->detail, "victim") == "rq2");
}

TEST_CASE("nothing to steal gives Idle")
{
    Fixture f;
    CHECK(steal_work(f.sched, CpuId{3}).is_idle());
}

TEST_CASE("thief takes one inner bubble and leaves the victim work")
{
    Fixture f;
    EntityId outer = f.store.create_bubble();
    EntityId b1 = f.store.create_bubble(outer);
    EntityId b2 = f.store.create_bubble(outer);
    for (EntityId b : {b1, b2}) {
        f.store.create_thread(b, {});
        f.store.create_thread(b, {});
    }
    f.place(outer, 2);
    auto target = choose_steal_target(f.store, HolderRef::runqueue(RunqueueId{2}));
    REQUIRE(target.has_value());
    CHECK((*target == b1 || *target == b2));
    CHECK(steal_work(f.sched, CpuId{1}).is_retry());
    CHECK(f.on(HolderRef::runqueue(RunqueueId{3})) == std::vector<EntityId>{*target});
    CHECK(f.store.ready_count(outer) >= 1);
    CHECK(f.store.home_chain(f.on(HolderRef::bubble(*target))[0]) == std::vector<EntityId>{*target, outer});
}

TEST_CASE("stealing keeps home chains")
{
    Fixture f;
    f.sched.install_strategy(make_steal_strategy(*f.topology));
    EntityId job = f.store.create_bubble();
    std::vector<EntityId> ts;
    for (int i = 0; i < 8; ++i) {
        ts.push_back(f.store.create_thread(job, {}));
    }
    f.sched.place_top_level(job);
    std::map<EntityId, std::vector<EntityId>> before;
    for (EntityId t : ts) {
        before[t] = f.store.home_chain(t);
    }
    for (std::uint32_t c = 0; c < 4; ++c) {
        CHECK(f.sched.dispatch(CpuId{c}).has_value());
    }
    for (EntityId t : ts) {
        CHECK(f.store.home_chain(t) == before[t]);
    }
}
