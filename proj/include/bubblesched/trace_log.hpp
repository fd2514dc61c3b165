#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bubblesched/common.hpp"

namespace bubblesched {

enum class EventKind : std::uint8_t {
    ThreadBirth,
    ThreadDeath,
    ThreadSleep,
    ThreadWake,
    BubblePlacement,
    ThreadPlacement,
    ContextSwitchIn,
    ContextSwitchOut,
    Burst,
    Regenerate,
    Steal,
    DaemonStep,
    // Not part of the classic event set: lock traffic, so lock safety can be
    // checked offline.
    LockAcquire,
    LockRelease,
};

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view text);

/// A typed token as it appears in the subject/location columns:
/// `t3` thread, `b2` bubble, `rq5` runqueue, `cpu1`, `d0` daemon, `timer`,
/// `x0` external actor, `-` none.
struct TraceRef {
    enum class Kind : std::uint8_t { none, thread, bubble, runqueue, cpu, daemon, timer, external };

    Kind kind = Kind::none;
    std::uint32_t index = 0;

    static TraceRef none() { return {}; }
    static TraceRef entity(EntityKind k, EntityId id)
    {
        return {k == EntityKind::thread ? Kind::thread : Kind::bubble, id.value()};
    }
    static TraceRef thread(EntityId id) { return {Kind::thread, id.value()}; }
    static TraceRef bubble(EntityId id) { return {Kind::bubble, id.value()}; }
    static TraceRef holder(HolderRef h)
    {
        return h.is_runqueue() ? TraceRef{Kind::runqueue, h.index()} : TraceRef{Kind::bubble, h.index()};
    }
    static TraceRef cpu(CpuId c) { return {Kind::cpu, c.value()}; }
    static TraceRef actor(ActorId a);

    bool is_none() const { return kind == Kind::none; }
    bool is_entity() const { return kind == Kind::thread || kind == Kind::bubble; }
    bool is_holder() const { return kind == Kind::runqueue || kind == Kind::bubble; }

    friend auto operator<=>(const TraceRef&, const TraceRef&) = default;
};

std::string to_string(TraceRef ref);
/// Throws TraceError.
TraceRef parse_trace_ref(std::string_view text);

struct TraceEvent {
    Duration time{};
    EventKind kind = EventKind::ThreadBirth;
    TraceRef subject;
    TraceRef location;
    /// Space-separated `key=value` pairs (free text allowed).
    std::string detail;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// Value of `key` in a `k=v k2=v2` detail string.
std::optional<std::string_view> detail_value(std::string_view detail, std::string_view key);

inline constexpr std::string_view trace_header = "#bubblesched-trace v1";

/// In-memory trace: ordered metadata plus the event list.
///
/// File format: the header line, then `#key value` metadata lines, then one
/// event per line as `time<TAB>kind<TAB>subject<TAB>location<TAB>detail`, with
/// time in simulated milliseconds (six decimals).
class TraceLog {
public:
    /// Appends an event; throws TraceError if time goes backwards.
    void record(TraceEvent event);

    void set_meta(std::string key, std::string value);
    void add_meta(std::string key, std::string value);
    std::optional<std::string> meta(std::string_view key) const;
    std::vector<std::string> meta_all(std::string_view key) const;
    const std::vector<std::pair<std::string, std::string>>& metadata() const { return meta_; }

    const std::vector<TraceEvent>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }
    Duration last_time() const { return events_.empty() ? Duration{0} : events_.back().time; }

    void write(std::ostream& out) const;
    std::string to_string() const;

    /// Parses a trace file. Does not enforce time monotonicity so that forged
    /// traces can still be loaded and checked.
    static TraceLog read(std::istream& in);
    static TraceLog parse(std::string_view text);
    static TraceLog read_file(const std::string& path);
    void write_file(const std::string& path) const;

    /// Appends without the monotonicity check (used by the reader and by tests
    /// building counterexamples).
    void append_unchecked(TraceEvent event) { events_.push_back(std::move(event)); }

private:
    std::vector<std::pair<std::string, std::string>> meta_;
    std::vector<TraceEvent> events_;
};

/// Placement, running and CPU-time state, as reconstructed by replay and as
/// reported by the simulator at the end of a run.
struct Snapshot {
    /// Non-empty holders only, FIFO order.
    std::map<TraceRef, std::vector<TraceRef>> holders;
    /// cpu index -> running thread.
    std::map<std::uint32_t, TraceRef> running;
    std::map<TraceRef, Duration> cpu_time;

    friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

}  // namespace bubblesched
