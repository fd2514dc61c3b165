#include "bubblesched/topology.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace bubblesched {

namespace {

constexpr std::array<std::string_view, 5> level_names{"machine", "numa_node", "chip", "core", "smt"};

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(s.substr(start, i - start));
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(LevelKind kind)
{
    return level_names[static_cast<std::size_t>(kind)];
}

std::optional<LevelKind> parse_level_kind(std::string_view text)
{
    for (std::size_t i = 0; i < level_names.size(); ++i) {
        if (level_names[i] == text) {
            return static_cast<LevelKind>(i);
        }
    }
    return std::nullopt;
}

void TopologySpec::validate() const
{
    if (levels.empty()) {
        throw ConfigError("topology has no levels");
    }
    if (levels.front().kind != LevelKind::machine) {
        throw ConfigError("first topology level must be 'machine'");
    }
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i].arity <= 0) {
            throw ConfigError("level '" + std::string(to_string(levels[i].kind)) + "' has arity <= 0");
        }
        if (i > 0 && levels[i].kind <= levels[i - 1].kind) {
            throw ConfigError("topology levels must be distinct and ordered machine, numa_node, chip, core, smt");
        }
    }
    if (numa_factor && !(*numa_factor >= 1.0 && std::isfinite(*numa_factor))) {
        throw ConfigError("numa_factor must be >= 1.0");
    }
}

TopologySpec TopologySpec::parse(std::string_view text)
{
    TopologySpec spec;
    std::size_t line_no = 0;
    while (!text.empty()) {
        std::size_t end = text.find_first_of("\n;");
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto words = split_ws(line);
        auto where = [&] { return " (topology line " + std::to_string(line_no) + ")"; };
        if (words.size() != 2) {
            throw ConfigError("expected '<kind> <arity>'" + where());
        }
        if (words[0] == "numa_factor") {
            std::string value(words[1]);
            char* endp = nullptr;
            double f = std::strtod(value.c_str(), &endp);
            if (endp != value.c_str() + value.size()) {
                throw ConfigError("bad numa_factor '" + value + "'" + where());
            }
            spec.numa_factor = f;
            continue;
        }
        auto kind = parse_level_kind(words[0]);
        if (!kind) {
            throw ConfigError("unknown level kind '" + std::string(words[0]) + "'" + where());
        }
        int arity = 0;
        auto [ptr, ec] = std::from_chars(words[1].data(), words[1].data() + words[1].size(), arity);
        if (ec != std::errc{} || ptr != words[1].data() + words[1].size()) {
            throw ConfigError("bad arity '" + std::string(words[1]) + "'" + where());
        }
        spec.levels.push_back({*kind, arity});
    }
    spec.validate();
    return spec;
}

std::string TopologySpec::to_text(std::string_view separator) const
{
    std::ostringstream out;
    bool first = true;
    for (const auto& level : levels) {
        if (!first) {
            out << separator;
        }
        first = false;
        out << to_string(level.kind) << ' ' << (level.kind == LevelKind::machine ? 1 : level.arity);
    }
    if (numa_factor) {
        out << separator << "numa_factor " << *numa_factor;
    }
    if (separator == "\n") {
        out << '\n';
    }
    return out.str();
}

std::vector<CpuId> LevelNode::spanned_cpus() const
{
    std::vector<CpuId> out;
    out.reserve(cpus.count);
    for (std::uint32_t i = 0; i < cpus.count; ++i) {
        out.emplace_back(cpus.first + i);
    }
    return out;
}

Topology Topology::build(const TopologySpec& spec)
{
    spec.validate();
    Topology topo;
    topo.spec_ = spec;

    // Depth-first construction; the machine level always has a single root.
    auto make = [&](auto&& self, std::size_t depth, std::optional<NodeId> parent) -> NodeId {
        NodeId id{static_cast<std::uint32_t>(topo.nodes_.size())};
        topo.nodes_.push_back(LevelNode{});
        {
            LevelNode& n = topo.nodes_.back();
            n.id = id;
            n.kind = spec.levels[depth].kind;
            n.depth = static_cast<std::uint32_t>(depth);
            n.parent = parent;
            n.runqueue = RunqueueId{id.value()};
            n.cpus.first = static_cast<std::uint32_t>(topo.leaves_.size());
        }
        if (depth + 1 == spec.levels.size()) {
            topo.leaves_.push_back(id);
        } else {
            for (int i = 0; i < spec.levels[depth + 1].arity; ++i) {
                NodeId child = self(self, depth + 1, id);
                topo.nodes_[id.value()].children.push_back(child);
            }
        }
        LevelNode& n = topo.nodes_[id.value()];
        n.cpus.count = static_cast<std::uint32_t>(topo.leaves_.size()) - n.cpus.first;
        return id;
    };
    make(make, 0, std::nullopt);
    return topo;
}

const LevelNode& Topology::node(NodeId id) const
{
    if (id.value() >= nodes_.size()) {
        throw ApiError("invalid topology node " + std::to_string(id.value()));
    }
    return nodes_[id.value()];
}

const LevelNode& Topology::node_of(RunqueueId rq) const
{
    if (!is_valid(rq)) {
        throw ApiError("invalid runqueue rq" + std::to_string(rq.value()));
    }
    return nodes_[rq.value()];
}

NodeId Topology::leaf(CpuId cpu) const
{
    if (!is_valid(cpu)) {
        throw ApiError("invalid cpu " + std::to_string(cpu.value()));
    }
    return leaves_[cpu.value()];
}

std::vector<RunqueueId> Topology::runqueues_spanning(CpuId cpu) const
{
    std::vector<RunqueueId> chain;
    std::optional<NodeId> n = leaf(cpu);
    while (n) {
        const LevelNode& node = nodes_[n->value()];
        chain.push_back(node.runqueue);
        n = node.parent;
    }
    return chain;
}

std::vector<RunqueueId> Topology::subtree_runqueues(RunqueueId rq) const
{
    const LevelNode& top = node_of(rq);
    // Depth-first ids make a subtree a contiguous id range.
    std::uint32_t end = top.id.value() + 1;
    while (end < nodes_.size() && nodes_[end].depth > top.depth) {
        ++end;
    }
    std::vector<RunqueueId> out;
    for (std::uint32_t i = top.id.value(); i < end; ++i) {
        out.push_back(nodes_[i].runqueue);
    }
    return out;
}

bool Topology::spans(RunqueueId rq, CpuId cpu) const
{
    return is_valid(rq) && nodes_[rq.value()].cpus.contains(cpu);
}

std::optional<std::size_t> Topology::level_index(LevelKind kind) const
{
    for (std::size_t i = 0; i < spec_.levels.size(); ++i) {
        if (spec_.levels[i].kind == kind) {
            return i;
        }
    }
    return std::nullopt;
}

std::vector<RunqueueId> Topology::runqueues_at(LevelKind kind) const
{
    std::vector<RunqueueId> out;
    for (const auto& n : nodes_) {
        if (n.kind == kind) {
            out.push_back(n.runqueue);
        }
    }
    return out;
}

std::optional<NodeId> Topology::ancestor_at(CpuId cpu, LevelKind kind) const
{
    std::optional<NodeId> n = leaf(cpu);
    while (n) {
        if (nodes_[n->value()].kind == kind) {
            return n;
        }
        n = nodes_[n->value()].parent;
    }
    return std::nullopt;
}

std::optional<NodeId> Topology::child_toward(NodeId from, CpuId cpu) const
{
    const LevelNode& n = node(from);
    if (!n.cpus.contains(cpu)) {
        return std::nullopt;
    }
    for (NodeId c : n.children) {
        if (nodes_[c.value()].cpus.contains(cpu)) {
            return c;
        }
    }
    return std::nullopt;
}

}  // namespace bubblesched
