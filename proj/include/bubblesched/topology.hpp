#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bubblesched/common.hpp"

namespace bubblesched {

/// Hierarchy levels, outermost first. A topology uses any subset, in this order.
enum class LevelKind : std::uint8_t { machine, numa_node, chip, core, smt };

std::string_view to_string(LevelKind kind);
std::optional<LevelKind> parse_level_kind(std::string_view text);

struct LevelSpec {
    LevelKind kind = LevelKind::machine;
    int arity = 1;

    friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

struct TopologySpec {
    std::vector<LevelSpec> levels;
    /// Remote/local memory cost ratio carried as metadata for cost models.
    std::optional<double> numa_factor;

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    /// Parses the line-oriented config format: one `kind arity` per line,
    /// `#` comments, optional `numa_factor <float>`. A `;` also separates
    /// lines so the spec fits on one trace header line.
    static TopologySpec parse(std::string_view text);

    /// Inverse of parse(); `separator` is "\n" for files and "; " for headers.
    std::string to_text(std::string_view separator = "\n") const;

    friend bool operator==(const TopologySpec&, const TopologySpec&) = default;
};

/// Contiguous CPU range spanned by a node. Depth-first numbering makes every
/// subtree's CPUs contiguous.
struct CpuRange {
    std::uint32_t first = 0;
    std::uint32_t count = 0;

    bool contains(CpuId cpu) const { return cpu.value() >= first && cpu.value() < first + count; }
    bool includes(const CpuRange& other) const
    {
        return other.first >= first && other.first + other.count <= first + count;
    }
};

struct LevelNode {
    NodeId id;
    LevelKind kind = LevelKind::machine;
    std::uint32_t depth = 0;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    RunqueueId runqueue;
    CpuRange cpus;

    std::vector<CpuId> spanned_cpus() const;
};

/// The machine as a tree of levels. Node ids, runqueue ids and CPU indices are
/// all assigned depth-first, and node i owns runqueue i. Immutable once built.
class Topology {
public:
    /// Throws ConfigError on an invalid spec.
    static Topology build(const TopologySpec& spec);

    const TopologySpec& spec() const { return spec_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t cpu_count() const { return leaves_.size(); }
    std::size_t level_count() const { return spec_.levels.size(); }
    std::optional<double> numa_factor() const { return spec_.numa_factor; }

    NodeId root() const { return NodeId{0}; }
    const LevelNode& node(NodeId id) const;
    const LevelNode& node_of(RunqueueId rq) const;
    NodeId leaf(CpuId cpu) const;
    RunqueueId leaf_runqueue(CpuId cpu) const { return node(leaf(cpu)).runqueue; }
    RunqueueId root_runqueue() const { return RunqueueId{0}; }

    bool is_valid(RunqueueId rq) const { return rq.value() < nodes_.size(); }
    bool is_valid(CpuId cpu) const { return cpu.value() < leaves_.size(); }

    /// Leaf-to-root chain of runqueues whose node spans `cpu`.
    std::vector<RunqueueId> runqueues_spanning(CpuId cpu) const;

    /// Every runqueue of `rq`'s subtree, depth-first, starting with `rq`.
    std::vector<RunqueueId> subtree_runqueues(RunqueueId rq) const;

    bool spans(RunqueueId rq, CpuId cpu) const;

    /// Index of `kind` in the level list, if the topology has that level.
    std::optional<std::size_t> level_index(LevelKind kind) const;

    /// Runqueues of every node at `kind`, depth-first.
    std::vector<RunqueueId> runqueues_at(LevelKind kind) const;

    /// Ancestor (or self) of `cpu`'s leaf at level `kind`.
    std::optional<NodeId> ancestor_at(CpuId cpu, LevelKind kind) const;

    /// Child of `from` on the path down to `cpu`; nullopt if `from` is the
    /// leaf or does not span `cpu`.
    std::optional<NodeId> child_toward(NodeId from, CpuId cpu) const;

private:
    TopologySpec spec_;
    std::vector<LevelNode> nodes_;
    std::vector<NodeId> leaves_;
};

}  // namespace bubblesched
