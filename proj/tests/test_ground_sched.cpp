#include <doctest.h>

#include <memory>

#include "bubblesched/ground_sched.hpp"
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

    EntityId thread_on(std::uint32_t rq)
    {
        EntityId t = store.create_thread(std::nullopt, {});
        place(t, rq);
        return t;
    }

    void place(EntityId e, std::uint32_t rq)
    {
        LockSet l(store, X, {HolderRef::runqueue(RunqueueId{rq})});
        store.put_entity(X, e, HolderRef::runqueue(RunqueueId{rq}));
    }

    TraceLog log;
    std::shared_ptr<const Topology> topology;
    EntityStore store;
    GroundScheduler sched;
};

}  // namespace

TEST_CASE("a thread on a node runqueue is seen only by that node's cpus")
{
    Fixture f;
    EntityId t = f.thread_on(4);
    CHECK(f.sched.schedule_next(CpuId{2}) == SchedDecision::run(t));
    CHECK(f.sched.schedule_next(CpuId{3}) == SchedDecision::run(t));
    CHECK(f.sched.schedule_next(CpuId{0}).is_idle());
}

TEST_CASE("empty runqueues give Idle")
{
    Fixture f;
    for (std::uint32_t c = 0; c < 4; ++c) {
        CHECK(f.sched.schedule_next(CpuId{c}).is_idle());
    }
}

TEST_CASE("leaf thread is chosen before root thread")
{
    Fixture f;
    EntityId root_t = f.thread_on(0);
    EntityId leaf_t = f.thread_on(2);
    CHECK(f.sched.schedule_next(CpuId{0}) == SchedDecision::run(leaf_t));
    CHECK(f.sched.schedule_next(CpuId{1}) == SchedDecision::run(root_t));
}

TEST_CASE("default bubble schedule")
{
    Fixture f;
    SUBCASE("single thread")
    {
        EntityId b = f.store.create_bubble();
        EntityId t = f.store.create_thread(b, {});
        std::set<EntityId> visited;
        CHECK(f.sched.default_bubble_schedule(b, CpuId{0}, visited) == SchedDecision::run(t));
    }
    SUBCASE("inner bubble first")
    {
        EntityId b = f.store.create_bubble();
        EntityId inner = f.store.create_bubble(b);
        EntityId t1 = f.store.create_thread(inner, {});
        f.store.create_thread(b, {});
        std::set<EntityId> visited;
        CHECK(f.sched.default_bubble_schedule(b, CpuId{0}, visited) == SchedDecision::run(t1));
    }
    SUBCASE("creation order matches a depth-first walk")
    {
        oracle::Node tree;
        tree.children = {oracle::Node{false, 0, {oracle::Node{true}, oracle::Node{true}}}, oracle::Node{true},
                         oracle::Node{false, 0, {oracle::Node{false, 0, {oracle::Node{true}}}}}};
        std::vector<int> order;
        int next = 0;
        oracle::dfs_threads(tree, order, next);
        EntityId root = f.store.create_bubble();
        std::vector<EntityId> threads;
        auto build = [&](auto&& self, const oracle::Node& n, EntityId home) -> void {
            for (const auto& ch : n.children) {
                if (ch.thread) {
                    threads.push_back(f.store.create_thread(home, {}));
                } else {
                    self(self, ch, f.store.create_bubble(home));
                }
            }
        };
        build(build, tree, root);
        f.place(root, 0);
        for (int expected : order) {
            auto d = f.sched.dispatch(CpuId{0});
            REQUIRE(d.has_value());
            CHECK(*d == threads[static_cast<std::size_t>(expected)]);
            f.sched.switch_out(CpuId{0}, ThreadState::dead, "exit");
        }
        CHECK_FALSE(f.sched.dispatch(CpuId{0}).has_value());
    }
    SUBCASE("bubble of sleepers is skipped")
    {
        EntityId sleepers = f.store.create_bubble();
        EntityId s1 = f.store.create_thread(sleepers, {});
        f.place(sleepers, 0);
        REQUIRE(f.sched.dispatch(CpuId{0}) == s1);
        f.store.set_return_holder(s1, HolderRef::bubble(sleepers));
        f.sched.switch_out(CpuId{0}, ThreadState::sleeping, "sleep");
        EntityId other = f.thread_on(0);
        std::set<EntityId> visited;
        CHECK(f.sched.default_bubble_schedule(sleepers, CpuId{0}, visited).is_retry());
        CHECK(visited.contains(sleepers));
        CHECK(f.sched.schedule_next(CpuId{0}) == SchedDecision::run(other));
        CHECK(f.store.entity(sleepers).holder == HolderRef::runqueue(RunqueueId{0}));
    }
}

TEST_CASE("round-robin on one cpu is fair within one quantum")
{
    for (int k : {2, 3, 5}) {
        Fixture f("machine 1\n");
        std::vector<EntityId> ts;
        for (int i = 0; i < k; ++i) {
            ts.push_back(f.thread_on(0));
        }
        const long quanta = 97;
        for (long q = 0; q < quanta; ++q) {
            if (q > 0) {
                f.sched.charge_running();
                f.sched.preempt(CpuId{0});
            }
            f.sched.dispatch(CpuId{0});
        }
        f.sched.charge_running();
        auto expected = oracle::round_robin(k, quanta);
        for (int i = 0; i < k; ++i) {
            const long got = f.store.thread(ts[static_cast<std::size_t>(i)]).accumulated_cpu / Q;
            CHECK(got == expected[static_cast<std::size_t>(i)]);
            CHECK(got >= quanta / k - 1);
            CHECK(got <= (quanta + k - 1) / k + 1);
        }
    }
}

TEST_CASE("preempted thread goes back to the tail of its holder")
{
    Fixture f;
    EntityId b = f.store.create_bubble();
    EntityId t1 = f.store.create_thread(b, {});
    EntityId t2 = f.store.create_thread(b, {});
    f.place(b, 0);
    REQUIRE(f.sched.dispatch(CpuId{0}) == t1);
    f.sched.preempt(CpuId{0});
    auto contents = f.store.holder_entities(HolderRef::bubble(b));
    CHECK(std::vector<EntityId>(contents.begin(), contents.end()) == std::vector<EntityId>{t2, t1});
}

TEST_CASE("wake puts the thread at the tail of its pre-sleep holder")
{
    Fixture f;
    EntityId a = f.thread_on(1);
    EntityId b = f.thread_on(1);
    REQUIRE(f.sched.dispatch(CpuId{0}) == a);
    f.sched.switch_out(CpuId{0}, ThreadState::sleeping, "sleep");
    EntityId c = f.thread_on(1);
    f.sched.wake(a);
    auto list = f.store.holder_entities(HolderRef::runqueue(RunqueueId{1}));
    CHECK(std::vector<EntityId>(list.begin(), list.end()) == std::vector<EntityId>{b, c, a});
    CHECK(f.log.events().back().kind == EventKind::LockRelease);
}

TEST_CASE("strategy installation rules")
{
    Fixture f;
    Strategy bad;
    bad.daemons.push_back({"d", std::chrono::microseconds(150), std::nullopt, [](GroundScheduler&, ActorId) {}});
    CHECK_THROWS_AS(f.sched.install_strategy(bad), ConfigError);
    f.sched.install_strategy(Strategy{"none"});
    CHECK(f.sched.has_strategy());
    CHECK_THROWS_AS(f.sched.install_strategy(Strategy{"again"}), ApiError);
    Fixture g;
    g.sched.mark_started();
    CHECK_THROWS_AS(g.sched.install_strategy(Strategy{"late"}), ApiError);
}

TEST_CASE("daemons fire on their period, bubble ticks on their timeslice")
{
    Fixture f;
    std::vector<Duration> daemon_runs;
    std::vector<Duration> ticks;
    Strategy s;
    s.name = "probe";
    s.bubble_timeslice = std::chrono::microseconds(500);
    s.bubble_tick = [&](GroundScheduler& g, EntityId) { ticks.push_back(g.now()); };
    s.daemons.push_back({"probe", std::chrono::microseconds(200), std::nullopt,
                         [&](GroundScheduler& g, ActorId) { daemon_runs.push_back(g.now()); }});
    f.sched.install_strategy(std::move(s));
    EntityId b = f.store.create_bubble();
    f.store.create_thread(b, {});
    f.sched.place_top_level(b);
    for (int q = 0; q <= 20; ++q) {
        f.sched.on_tick(Q * q);
    }
    CHECK(daemon_runs.size() == 10);
    for (std::size_t i = 0; i < daemon_runs.size(); ++i) {
        CHECK(daemon_runs[i] == std::chrono::microseconds(200) * static_cast<int>(i + 1));
    }
    CHECK(ticks == std::vector<Duration>{std::chrono::microseconds(500), std::chrono::microseconds(1000),
                                         std::chrono::microseconds(1500), std::chrono::microseconds(2000)});
}

TEST_CASE("a hook that always retries cannot loop forever")
{
    Fixture f;
    Strategy s;
    int calls = 0;
    s.bubble_schedule = [&](GroundScheduler&, EntityId, CpuId) {
        ++calls;
        return SchedDecision::retry();
    };
    f.sched.install_strategy(std::move(s));
    EntityId b = f.store.create_bubble();
    f.store.create_thread(b, {});
    f.place(b, 0);
    CHECK(f.sched.schedule_next(CpuId{0}).is_idle());
    const std::size_t chain = f.topology->runqueues_spanning(CpuId{0}).size();
    CHECK(f.sched.rescans() <= chain * (f.store.entity_count() + 1));
    CHECK(calls > 1);
}

TEST_CASE("on_idle retry leads to a second scan")
{
    Fixture f;
    EntityId t = f.thread_on(5);
    Strategy s;
    s.on_idle = [&](GroundScheduler& g, CpuId cpu) {
        LockSet l(g.store(), ActorId::cpu(cpu),
                  {HolderRef::runqueue(RunqueueId{2}), HolderRef::runqueue(RunqueueId{5})});
        g.store().move_entity(ActorId::cpu(cpu), t, HolderRef::runqueue(RunqueueId{2}));
        return SchedDecision::retry();
    };
    f.sched.install_strategy(std::move(s));
    CHECK(f.sched.dispatch(CpuId{0}) == t);
    CHECK(f.sched.running_on(CpuId{0}) == t);
}

TEST_CASE("scan decisions are deterministic")
{
    auto run = [] {
        Fixture f;
        EntityId b = f.store.create_bubble();
        for (int i = 0; i < 3; ++i) {
            f.store.create_thread(b, {});
        }
        f.place(b, 0);
        f.thread_on(1);
        std::vector<std::optional<EntityId>> picks;
        for (std::uint32_t c = 0; c < 4; ++c) {
            picks.push_back(f.sched.dispatch(CpuId{c}));
        }
        return picks;
    };
    CHECK(run() == run());
}
