#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bubblesched/topology.hpp"
#include "bubblesched/trace_log.hpp"

namespace bubblesched {

enum class ReplayThreadState : std::uint8_t { ready, running, sleeping, stopped, dead };

/// State folded from a trace prefix.
struct ReplayState {
    Duration time{};
    std::size_t applied = 0;
    std::map<TraceRef, std::vector<TraceRef>> holders;
    std::map<TraceRef, TraceRef> location;
    std::map<std::uint32_t, TraceRef> running;
    std::map<TraceRef, Duration> switched_in_at;
    std::map<TraceRef, Duration> cpu_time;
    std::map<std::uint32_t, Duration> cpu_busy;
    std::map<TraceRef, ReplayThreadState> threads;
    std::map<TraceRef, std::string> names;
    std::map<TraceRef, TraceRef> home;
    std::map<TraceRef, std::uint32_t> last_cpu;
    std::map<TraceRef, TraceRef> lock_owner;

    Snapshot snapshot() const;
    /// Home bubble chain of `e`, innermost first, as tokens joined by '/'.
    std::string home_chain(TraceRef e) const;
};

struct Violation {
    enum class Kind : std::uint8_t {
        malformed,
        timestamp,
        residence,
        containment,
        lock_safety,
        switch_pairing,
        work_conservation,
    };

    std::size_t index = 0;
    Kind kind = Kind::malformed;
    std::string message;
};

std::string_view to_string(Violation::Kind kind);

/// Step-wise trace replayer. In strict mode the first violation throws
/// TraceError naming the event index; otherwise violations are collected and
/// folding continues best-effort.
class Replayer {
public:
    enum class Mode : std::uint8_t { strict, lenient };

    explicit Replayer(const TraceLog& log, Mode mode = Mode::strict,
                      std::optional<Topology> topology = std::nullopt);

    /// Applies the next event. Returns false at end of log.
    bool step();
    /// Applies every event with time <= `t`.
    void run_until(Duration t);
    /// Applies events until `applied() == index` (or end of log).
    void run_to_index(std::size_t index);
    void run_to_end();

    bool at_end() const { return next_ >= log_.size(); }
    std::size_t applied() const { return next_; }
    const ReplayState& state() const { return state_; }
    const std::vector<Violation>& violations() const { return violations_; }
    const std::optional<Topology>& topology() const { return topology_; }

private:
    void apply(const TraceEvent& ev, std::size_t index);
    void violation(std::size_t index, Violation::Kind kind, std::string message);
    void place(std::size_t index, TraceRef entity, TraceRef holder, const TraceEvent& ev);
    void detach(TraceRef entity);
    void check_from(std::size_t index, TraceRef entity, const TraceEvent& ev);
    bool chain_reaches_spanning(TraceRef holder, CpuId cpu) const;

    const TraceLog& log_;
    Mode mode_;
    std::optional<Topology> topology_;
    ReplayState state_;
    std::size_t next_ = 0;
    std::vector<Violation> violations_;
};

/// Topology recorded in a trace's metadata, if any.
std::optional<Topology> trace_topology(const TraceLog& log);

/// Folds the whole log; throws TraceError on the first violation.
ReplayState replay(const TraceLog& log);

/// Folds the log, calling `visit` after every event.
void replay(const TraceLog& log, const std::function<void(std::size_t, const TraceEvent&, const ReplayState&)>& visit);

struct TopRow {
    std::string name;
    int pr = 43;
    double cpu_pct = 0.0;
    char state = 'R';
    std::uint32_t cpu = 0;
};

inline constexpr int daemon_priority = 42;
inline constexpr int thread_priority = 43;

/// `top`-like statistics over the last `window` of the trace: one row per
/// daemon then per live thread (natural name order). Throws TraceError on an
/// empty window or one longer than the trace.
std::vector<TopRow> top_report(const TraceLog& log, Duration window);

/// Fixed-width table: name pr cpu% s cpu.
std::string format_top(const std::vector<TopRow>& rows);

/// Rounds a percentage given as executed/window to one decimal, half-even.
double round_pct_half_even(Duration executed, Duration window);

struct CheckReport {
    std::vector<Violation> violations;
    std::size_t events = 0;

    bool ok() const { return violations.empty(); }
    std::size_t count(Violation::Kind kind) const;
};

/// Replays the whole trace checking containment, single residence, lock
/// safety, switch pairing and timestamp monotonicity; for traces recorded
/// without a strategy also work conservation at every boundary.
CheckReport check(const TraceLog& log, const Topology& topology);
/// Uses the topology stored in the trace header.
CheckReport check(const TraceLog& log);

/// Busy fraction per CPU over [from, to], from switch intervals.
std::vector<double> busy_fractions(const TraceLog& log, std::size_t cpus, Duration from, Duration to);

/// For every Steal event moving a thread, whether the home chain in its
/// detail equals the chain recorded at the thread's birth. Returns the number
/// of stolen threads checked and the number of mismatches.
std::pair<std::size_t, std::size_t> steal_home_chains(const TraceLog& log);

}  // namespace bubblesched
