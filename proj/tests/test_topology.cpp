#include <doctest.h>

#include <algorithm>
#include <set>

#include "bubblesched/topology.hpp"
#include "oracles.hpp"

using namespace bubblesched;

namespace {

Topology build(const char* text)
{
    return Topology::build(TopologySpec::parse(text));
}

std::vector<int> arities_of(const TopologySpec& spec)
{
    std::vector<int> a;
    for (const auto& l : spec.levels) {
        a.push_back(l.arity);
    }
    return a;
}

}  // namespace

TEST_CASE("bi-dual-core has 7 nodes, 7 runqueues and 4 cpus")
{
    Topology t = build("machine 1\nnuma_node 2\ncore 2\nnuma_factor 1.4\n");
    CHECK(t.node_count() == 7);
    CHECK(t.cpu_count() == 4);
    CHECK(t.numa_factor() == doctest::Approx(1.4));
    for (std::uint32_t i = 0; i < t.node_count(); ++i) {
        CHECK(t.node(NodeId{i}).runqueue == RunqueueId{i});
    }
}

TEST_CASE("single-level machine has one node and one cpu")
{
    Topology t = build("machine 1\n");
    CHECK(t.node_count() == 1);
    CHECK(t.cpu_count() == 1);
    CHECK(t.runqueues_spanning(CpuId{0}) == std::vector<RunqueueId>{RunqueueId{0}});
}

TEST_CASE("node and cpu counts match a recursive enumeration")
{
    for (const char* text : {"machine 1\nchip 2\ncore 2\nsmt 2\n", "machine 1\nnuma_node 3\ncore 5\n",
                             "machine 1\nnuma_node 2\nchip 2\ncore 3\nsmt 2\n", "machine 1\ncore 7\n"}) {
        TopologySpec spec = TopologySpec::parse(text);
        Topology t = Topology::build(spec);
        oracle::TreeCounts c = oracle::count_tree(arities_of(spec));
        CHECK(t.node_count() == c.nodes);
        CHECK(t.cpu_count() == c.cpus);
    }
}

TEST_CASE("8-cpu smt machine: 15 nodes, cpu 5 chain smt-core-chip-machine")
{
    Topology t = build("machine 1\nchip 2\ncore 2\nsmt 2\n");
    CHECK(t.node_count() == 15);
    CHECK(t.cpu_count() == 8);
    auto chain = t.runqueues_spanning(CpuId{5});
    REQUIRE(chain.size() == 4);
    std::vector<LevelKind> kinds;
    for (RunqueueId rq : chain) {
        kinds.push_back(t.node_of(rq).kind);
    }
    CHECK(kinds == std::vector<LevelKind>{LevelKind::smt, LevelKind::core, LevelKind::chip, LevelKind::machine});
    CHECK(t.subtree_runqueues(t.root_runqueue()).size() == 15);
}

TEST_CASE("spanning chains follow parent links of an explicit tree")
{
    for (const char* text : {"machine 1\nchip 2\ncore 2\nsmt 2\n", "machine 1\nnuma_node 3\ncore 2\n"}) {
        TopologySpec spec = TopologySpec::parse(text);
        Topology t = Topology::build(spec);
        oracle::Tree tree(arities_of(spec));
        for (std::uint32_t c = 0; c < t.cpu_count(); ++c) {
            auto chain = t.runqueues_spanning(CpuId{c});
            auto expected = tree.chain(static_cast<int>(c));
            REQUIRE(chain.size() == expected.size());
            CHECK(chain.size() == spec.levels.size());
            for (std::size_t i = 0; i < chain.size(); ++i) {
                CHECK(chain[i].value() == static_cast<std::uint32_t>(expected[i]));
            }
        }
        for (std::uint32_t n = 0; n < t.node_count(); ++n) {
            CHECK(t.subtree_runqueues(RunqueueId{n}).size() == tree.subtree_size(static_cast<int>(n)));
        }
    }
}

TEST_CASE("bi-dual-core spanning chain and subtrees")
{
    Topology t = build("machine 1\nnuma_node 2\ncore 2\n");
    // Depth-first: 0 machine, 1 node0, 2 core0, 3 core1, 4 node1, 5 core2, 6 core3.
    CHECK(t.runqueues_spanning(CpuId{2}) == std::vector<RunqueueId>{RunqueueId{5}, RunqueueId{4}, RunqueueId{0}});
    CHECK(t.subtree_runqueues(RunqueueId{1}) == std::vector<RunqueueId>{RunqueueId{1}, RunqueueId{2}, RunqueueId{3}});
    CHECK(t.subtree_runqueues(RunqueueId{6}) == std::vector<RunqueueId>{RunqueueId{6}});
    CHECK(t.runqueues_at(LevelKind::numa_node) == std::vector<RunqueueId>{RunqueueId{1}, RunqueueId{4}});
    CHECK(t.spans(RunqueueId{4}, CpuId{3}));
    CHECK_FALSE(t.spans(RunqueueId{4}, CpuId{0}));
    CHECK(t.child_toward(t.root(), CpuId{3}) == NodeId{4});
    CHECK_FALSE(t.child_toward(NodeId{6}, CpuId{3}).has_value());
    CHECK(t.ancestor_at(CpuId{1}, LevelKind::numa_node) == NodeId{1});
}

TEST_CASE("spanned cpu sets grow along chains and leaves partition the cpus")
{
    Topology t = build("machine 1\nnuma_node 2\nchip 2\ncore 2\n");
    std::set<std::uint32_t> seen;
    for (std::uint32_t c = 0; c < t.cpu_count(); ++c) {
        auto chain = t.runqueues_spanning(CpuId{c});
        for (std::size_t i = 1; i < chain.size(); ++i) {
            const CpuRange lo = t.node_of(chain[i - 1]).cpus;
            const CpuRange hi = t.node_of(chain[i]).cpus;
            CHECK(hi.includes(lo));
            CHECK(hi.count > lo.count);
        }
        const LevelNode& leaf = t.node(t.leaf(CpuId{c}));
        CHECK(leaf.cpus.count == 1);
        CHECK(seen.insert(leaf.cpus.first).second);
    }
    CHECK(seen.size() == t.cpu_count());
    CHECK(t.node(t.root()).cpus.count == t.cpu_count());
}

TEST_CASE("build is deterministic")
{
    Topology a = build("machine 1\nnuma_node 2\ncore 2\n");
    Topology b = build("machine 1\nnuma_node 2\ncore 2\n");
    for (std::uint32_t i = 0; i < a.node_count(); ++i) {
        CHECK(a.node(NodeId{i}).kind == b.node(NodeId{i}).kind);
        CHECK(a.node(NodeId{i}).parent == b.node(NodeId{i}).parent);
        CHECK(a.node(NodeId{i}).cpus.first == b.node(NodeId{i}).cpus.first);
    }
}

TEST_CASE("invalid specs are rejected")
{
    CHECK_THROWS_AS(TopologySpec::parse(""), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("core 2\n"), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("machine 1\ncore 0\n"), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("machine 1\ncore -2\n"), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("machine 1\ncore 2\nnuma_factor 0.5\n"), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("machine 1\ncore 2\nnuma_node 2\n"), ConfigError);
    CHECK_THROWS_AS(TopologySpec::parse("machine 1\nsocket 2\n"), ConfigError);
    CHECK_THROWS_AS(Topology::build(TopologySpec{}), ConfigError);
    Topology t = build("machine 1\ncore 2\n");
    CHECK_THROWS_AS(t.runqueues_spanning(CpuId{2}), ApiError);
    CHECK_THROWS_AS(t.subtree_runqueues(RunqueueId{9}), ApiError);
}

TEST_CASE("spec text round-trips")
{
    TopologySpec spec = TopologySpec::parse("# two nodes\nmachine 1\nnuma_node 2 # nodes\ncore 2\nnuma_factor 1.4\n");
    CHECK(TopologySpec::parse(spec.to_text()) == spec);
    CHECK(TopologySpec::parse(spec.to_text("; ")) == spec);
}
