#include <doctest.h>

#include <memory>
#include <random>

#include "bubblesched/entity.hpp"
#include "oracles.hpp"

using namespace bubblesched;

namespace {

std::shared_ptr<const Topology> bi_dual()
{
    return std::make_shared<const Topology>(
        Topology::build(TopologySpec::parse("machine 1\nnuma_node 2\ncore 2\n")));
}

constexpr ActorId X = ActorId::external(0);
constexpr ActorId Y = ActorId::external(1);

HolderRef rq(std::uint32_t i)
{
    return HolderRef::runqueue(RunqueueId{i});
}

std::vector<EntityId> list(const EntityStore& s, HolderRef h)
{
    auto span = s.holder_entities(h);
    return {span.begin(), span.end()};
}

void put_locked(EntityStore& s, EntityId e, HolderRef h)
{
    REQUIRE(s.holder_lock(X, h));
    s.put_entity(X, e, h);
    s.holder_unlock(X, h);
}

void get_locked(EntityStore& s, EntityId e)
{
    HolderRef h = *s.entity(e).holder;
    REQUIRE(s.holder_lock(X, h));
    s.get_entity(X, e);
    s.holder_unlock(X, h);
}

// Builds the store counterpart of an oracle tree under `home`.
void materialise(EntityStore& s, const oracle::Node& n, EntityId home)
{
    for (const auto& ch : n.children) {
        if (ch.thread) {
            s.create_thread(home, ThreadAttrs{"", Duration{ch.expected}, 0, 0.0});
        } else {
            materialise(s, ch, s.create_bubble(home));
        }
    }
}

}  // namespace

TEST_CASE("bubble without home is empty and detached")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    CHECK(s.bubble(b).contents.empty());
    CHECK_FALSE(s.entity(b).holder.has_value());
    CHECK(s.bubble_stats(b) == BubbleStats{});
}

TEST_CASE("two pairs plus a lone thread count five threads")
{
    TraceLog log;
    EntityStore s(bi_dual(), &log);
    EntityId outer = s.create_bubble();
    for (int p = 0; p < 2; ++p) {
        EntityId pair = s.create_bubble(outer);
        s.create_thread(pair, {});
        s.create_thread(pair, {});
    }
    s.create_thread(outer, {});
    BubbleStats st = s.bubble_stats(outer);
    CHECK(st.total_threads == 5);
    CHECK(st.running_threads == 0);
    std::size_t births = 0;
    for (const auto& ev : log.events()) {
        births += ev.kind == EventKind::ThreadBirth ? 1 : 0;
    }
    CHECK(births == 5);
}

TEST_CASE("thread counts match a recursive walk of nested hierarchies")
{
    std::mt19937 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto gen = [&](auto&& self, int depth) -> oracle::Node {
            oracle::Node n;
            const int kids = 1 + static_cast<int>(rng() % 3);
            for (int i = 0; i < kids; ++i) {
                if (depth < 4 && rng() % 2 == 0) {
                    n.children.push_back(self(self, depth + 1));
                } else {
                    n.children.push_back(oracle::Node{true, static_cast<long long>(rng() % 100), {}});
                }
            }
            return n;
        };
        oracle::Node tree = gen(gen, 0);
        EntityStore s(bi_dual());
        EntityId root = s.create_bubble();
        materialise(s, tree, root);
        BubbleStats st = s.bubble_stats(root);
        CHECK(st.total_threads == oracle::count_threads(tree));
        CHECK(st.expected_cpu.count() == oracle::sum_expected(tree));
    }
}

TEST_CASE("depth-4 nesting with one thread at the bottom")
{
    EntityStore s(bi_dual());
    EntityId root = s.create_bubble();
    EntityId b = root;
    for (int i = 0; i < 3; ++i) {
        b = s.create_bubble(b);
    }
    s.create_thread(b, {});
    CHECK(s.bubble_stats(root).total_threads == 1);
    CHECK(s.home_chain(s.holder_entities(HolderRef::bubble(b))[0]).size() == 4);
}

TEST_CASE("stats are additive over children")
{
    EntityStore s(bi_dual());
    EntityId outer = s.create_bubble();
    EntityId in1 = s.create_bubble(outer);
    EntityId in2 = s.create_bubble(outer);
    s.create_thread(in1, {"", Duration{10}, 100, 0.5});
    s.create_thread(in1, {"", Duration{30}, 50, 0.1});
    s.create_thread(in2, {"", Duration{5}, 7, 0.2});
    EntityId direct = s.create_thread(outer, {"", std::nullopt, 1, 0.9});
    BubbleStats a = s.bubble_stats(in1);
    BubbleStats b = s.bubble_stats(in2);
    BubbleStats o = s.bubble_stats(outer);
    CHECK(a.expected_cpu == Duration{40});
    CHECK(o.total_threads == a.total_threads + b.total_threads + 1);
    CHECK(o.expected_cpu == a.expected_cpu + b.expected_cpu);
    CHECK(o.memory_usage == a.memory_usage + b.memory_usage + s.thread(direct).memory_usage);
    CHECK(o.cache_miss_rate == 0.0);
}

TEST_CASE("cache miss rate is weighted by accumulated cpu")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    EntityId t1 = s.create_thread(b, {"", std::nullopt, 0, 0.2});
    EntityId t2 = s.create_thread(b, {"", std::nullopt, 0, 0.8});
    s.charge(t1, Duration{300});
    s.charge(t2, Duration{100});
    BubbleStats st = s.bubble_stats(b);
    CHECK(st.current_cpu == Duration{400});
    CHECK(st.cache_miss_rate == doctest::Approx((0.2 * 300 + 0.8 * 100) / 400.0));
}

TEST_CASE("get and put keep FIFO order")
{
    EntityStore s(bi_dual());
    EntityId a = s.create_thread(std::nullopt, {});
    EntityId b = s.create_thread(std::nullopt, {});
    EntityId c = s.create_thread(std::nullopt, {});
    for (EntityId e : {a, b, c}) {
        put_locked(s, e, rq(0));
    }
    get_locked(s, b);
    CHECK(list(s, rq(0)) == std::vector<EntityId>{a, c});
    put_locked(s, b, rq(0));
    CHECK(list(s, rq(0)) == std::vector<EntityId>{a, c, b});
    get_locked(s, a);
    get_locked(s, c);
    get_locked(s, b);
    CHECK(s.runqueue_empty(RunqueueId{0}));
}

TEST_CASE("random get/put sequences match a list model")
{
    std::mt19937 rng(11);
    EntityStore s(bi_dual());
    std::vector<EntityId> ids;
    for (int i = 0; i < 8; ++i) {
        ids.push_back(s.create_thread(std::nullopt, {}));
    }
    oracle::FifoModel model;
    std::vector<bool> placed(ids.size(), false);
    for (int step = 0; step < 500; ++step) {
        const auto i = rng() % ids.size();
        if (placed[i]) {
            get_locked(s, ids[i]);
            model.get(static_cast<int>(i));
        } else {
            put_locked(s, ids[i], rq(3));
            model.put(static_cast<int>(i));
        }
        placed[i] = !placed[i];
        std::vector<EntityId> expected;
        for (int x : model.items) {
            expected.push_back(ids[static_cast<std::size_t>(x)]);
        }
        REQUIRE(list(s, rq(3)) == expected);
    }
}

TEST_CASE("movement preconditions")
{
    EntityStore s(bi_dual());
    EntityId t = s.create_thread(std::nullopt, {});
    CHECK_THROWS_AS(s.put_entity(X, t, rq(0)), LockError);
    CHECK_THROWS_AS(s.get_entity(X, t), ApiError);
    put_locked(s, t, rq(0));
    REQUIRE(s.holder_lock(X, rq(1)));
    CHECK_THROWS_AS(s.put_entity(X, t, rq(1)), ApiError);
    s.holder_unlock(X, rq(1));
    CHECK_THROWS_AS(s.get_entity(X, t), LockError);
}

TEST_CASE("a bubble cannot be put into its own descendant")
{
    EntityStore s(bi_dual());
    EntityId outer = s.create_bubble();
    EntityId inner = s.create_bubble(outer);
    EntityId deepest = s.create_bubble(inner);
    REQUIRE(s.holder_lock(X, HolderRef::bubble(deepest)));
    CHECK_THROWS_AS(s.put_entity(X, outer, HolderRef::bubble(deepest)), ApiError);
    CHECK_THROWS_AS(s.put_entity(X, outer, HolderRef::bubble(outer)), ApiError);
    s.holder_unlock(X, HolderRef::bubble(deepest));
    EntityId other = s.create_bubble();
    REQUIRE(s.holder_lock(X, HolderRef::bubble(other)));
    s.put_entity(X, outer, HolderRef::bubble(other));
    s.holder_unlock(X, HolderRef::bubble(other));
    CHECK(s.entity(outer).holder == HolderRef::bubble(other));
}

TEST_CASE("spawned thread inherits its creator's home")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    EntityId parent = s.create_thread(b, {});
    EntityId child = s.spawn_thread(parent, {});
    CHECK(s.entity(child).home == b);
    CHECK(s.bubble_stats(b).total_threads == 2);
}

TEST_CASE("dead homes are rejected")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    s.destroy_bubble(b);
    CHECK_THROWS_AS(s.create_thread(b, {}), ApiError);
    CHECK_THROWS_AS(s.create_bubble(b), ApiError);
}

TEST_CASE("lock then unlock frees the lock; misuse throws")
{
    EntityStore s(bi_dual());
    CHECK(s.holder_lock(X, rq(2)));
    CHECK(s.lock_owner(rq(2)) == X);
    CHECK_THROWS_AS(s.holder_lock(X, rq(2)), LockError);
    CHECK_THROWS_AS(s.holder_unlock(Y, rq(2)), LockError);
    s.holder_unlock(X, rq(2));
    CHECK_FALSE(s.lock_owner(rq(2)).has_value());
}

TEST_CASE("two contending actors enter in FIFO order")
{
    EntityStore s(bi_dual());
    oracle::LockModel model;
    const ActorId actors[] = {ActorId::daemon(0), ActorId::daemon(1), ActorId::daemon(2)};
    std::vector<int> entered;
    auto acquire = [&](int i) {
        model.acquire(i);
        if (s.holder_lock(actors[i], rq(0))) {
            entered.push_back(i);
        }
    };
    auto release = [&]() {
        ActorId owner = *s.lock_owner(rq(0));
        model.release();
        s.holder_unlock(owner, rq(0));
        if (auto next = s.lock_owner(rq(0))) {
            entered.push_back(static_cast<int>(next->index));
        }
    };
    acquire(0);
    acquire(1);
    acquire(2);
    CHECK(s.lock_waiters(rq(0)) == 2);
    release();
    release();
    release();
    CHECK(entered == model.entered);
    CHECK(entered == std::vector<int>{0, 1, 2});
    CHECK_FALSE(s.lock_owner(rq(0)).has_value());
}

TEST_CASE("locks must be taken in rank order")
{
    EntityStore s(bi_dual());
    REQUIRE(s.holder_lock(X, rq(1)));
    CHECK(s.holder_lock(X, rq(3)));
    s.holder_unlock(X, rq(3));
    s.holder_unlock(X, rq(1));
    REQUIRE(s.holder_lock(X, rq(3)));
    CHECK_THROWS_AS(s.holder_lock(X, rq(1)), LockError);
    s.holder_unlock(X, rq(3));
    CHECK(s.lock_rank(rq(1)) < s.lock_rank(rq(3)));
}

TEST_CASE("a bubble ranks after the runqueue holding it")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    EntityId inner = s.create_bubble(b);
    put_locked(s, b, rq(1));
    CHECK(s.lock_rank(rq(1)) < s.lock_rank(HolderRef::bubble(b)));
    CHECK(s.lock_rank(HolderRef::bubble(b)) < s.lock_rank(HolderRef::bubble(inner)));
    CHECK(s.lock_rank(HolderRef::bubble(b)) < s.lock_rank(rq(2)));
}

TEST_CASE("lock_subtree covers runqueues and placed bubbles")
{
    EntityStore s(bi_dual());
    EntityId b = s.create_bubble();
    EntityId inner = s.create_bubble(b);
    put_locked(s, b, rq(2));
    CHECK(s.lock_subtree(X, RunqueueId{0}));
    for (std::uint32_t i = 0; i < 7; ++i) {
        CHECK(s.lock_owner(rq(i)) == X);
    }
    CHECK(s.lock_owner(HolderRef::bubble(b)) == X);
    CHECK(s.lock_owner(HolderRef::bubble(inner)) == X);
    s.unlock_subtree(X, RunqueueId{0});
    CHECK_FALSE(s.lock_owner(rq(0)).has_value());
    CHECK_FALSE(s.lock_owner(HolderRef::bubble(inner)).has_value());

    CHECK(s.lock_subtree(X, RunqueueId{6}));
    CHECK(s.lock_owner(rq(6)) == X);
    CHECK_FALSE(s.lock_owner(rq(5)).has_value());
    s.unlock_subtree(X, RunqueueId{6});
}

TEST_CASE("disjoint subtrees lock concurrently; overlapping ones do not")
{
    EntityStore s(bi_dual());
    CHECK(s.lock_subtree(X, RunqueueId{1}));
    CHECK(s.lock_subtree(Y, RunqueueId{4}));
    CHECK_FALSE(s.lock_subtree(ActorId::external(2), RunqueueId{0}));
    CHECK_FALSE(s.lock_owner(rq(0)).has_value());
    s.unlock_subtree(X, RunqueueId{1});
    s.unlock_subtree(Y, RunqueueId{4});
    CHECK(s.lock_subtree(ActorId::external(2), RunqueueId{0}));
    s.unlock_subtree(ActorId::external(2), RunqueueId{0});
}

TEST_CASE("LockSet sorts by rank and releases on scope exit")
{
    EntityStore s(bi_dual());
    {
        LockSet l(s, X, {rq(5), rq(1), rq(5), rq(0)});
        CHECK(s.lock_owner(rq(0)) == X);
        CHECK(s.lock_owner(rq(5)) == X);
    }
    CHECK_FALSE(s.lock_owner(rq(5)).has_value());
    REQUIRE(s.holder_lock(Y, rq(1)));
    CHECK_THROWS_AS(LockSet(s, X, {rq(0), rq(1)}), LockError);
    CHECK_FALSE(s.lock_owner(rq(0)).has_value());
    CHECK(s.lock_waiters(rq(1)) == 0);
    s.holder_unlock(Y, rq(1));
}

TEST_CASE("move and remove trace the source holder")
{
    TraceLog log;
    EntityStore s(bi_dual(), &log);
    EntityId t = s.create_thread(std::nullopt, {});
    put_locked(s, t, rq(0));
    {
        LockSet l(s, X, {rq(0), rq(2)});
        s.move_entity(X, t, rq(2));
    }
    {
        LockSet l(s, X, {rq(2)});
        s.remove_entity(X, t);
    }
    CHECK_FALSE(s.entity(t).holder.has_value());
    std::vector<TraceEvent> ev;
    for (const auto& e : log.events()) {
        if (e.kind != EventKind::LockAcquire && e.kind != EventKind::LockRelease) {
            ev.push_back(e);
        }
    }
    REQUIRE(ev.size() == 4);
    CHECK(ev[1].detail == "from=-");
    CHECK(ev[2].location == TraceRef::holder(rq(2)));
    CHECK(ev[2].detail == "from=rq0");
    CHECK(ev[3].location.is_none());
    CHECK(ev[3].detail == "from=rq2");
}
