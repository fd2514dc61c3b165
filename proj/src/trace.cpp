#include "bubblesched/trace.hpp"

#include <algorithm>
#include <cstdio>

namespace bubblesched {

std::string_view to_string(Violation::Kind kind)
{
    switch (kind) {
    case Violation::Kind::malformed:
        return "malformed";
    case Violation::Kind::timestamp:
        return "timestamp";
    case Violation::Kind::residence:
        return "residence";
    case Violation::Kind::containment:
        return "containment";
    case Violation::Kind::lock_safety:
        return "lock-safety";
    case Violation::Kind::switch_pairing:
        return "switch-pairing";
    case Violation::Kind::work_conservation:
        return "work-conservation";
    }
    return "?";
}

Snapshot ReplayState::snapshot() const
{
    Snapshot s;
    for (const auto& [holder, list] : holders) {
        if (!list.empty()) {
            s.holders[holder] = list;
        }
    }
    s.running = running;
    s.cpu_time = cpu_time;
    return s;
}

std::string ReplayState::home_chain(TraceRef e) const
{
    std::string chain;
    auto it = home.find(e);
    while (it != home.end()) {
        if (!chain.empty()) {
            chain += '/';
        }
        chain += to_string(it->second);
        it = home.find(it->second);
    }
    return chain;
}

Replayer::Replayer(const TraceLog& log, Mode mode, std::optional<Topology> topology)
    : log_(log), mode_(mode), topology_(std::move(topology))
{
}

bool Replayer::step()
{
    if (at_end()) {
        return false;
    }
    apply(log_.events()[next_], next_);
    ++next_;
    state_.applied = next_;
    return true;
}

void Replayer::run_until(Duration t)
{
    while (!at_end() && log_.events()[next_].time <= t) {
        step();
    }
}

void Replayer::run_to_index(std::size_t index)
{
    while (!at_end() && next_ < index) {
        step();
    }
}

void Replayer::run_to_end()
{
    while (step()) {
    }
}

void Replayer::violation(std::size_t index, Violation::Kind kind, std::string message)
{
    if (mode_ == Mode::strict) {
        throw TraceError("event " + std::to_string(index) + ": " + std::string(to_string(kind)) + ": " + message);
    }
    violations_.push_back({index, kind, std::move(message)});
}

void Replayer::detach(TraceRef entity)
{
    auto it = state_.location.find(entity);
    if (it == state_.location.end()) {
        return;
    }
    auto& list = state_.holders[it->second];
    list.erase(std::remove(list.begin(), list.end(), entity), list.end());
    state_.location.erase(it);
}

void Replayer::place(std::size_t index, TraceRef entity, TraceRef holder, const TraceEvent& ev)
{
    if (!holder.is_holder()) {
        violation(index, Violation::Kind::malformed, "placement of " + to_string(entity) + " into non-holder " +
                                                         to_string(holder));
        return;
    }
    if (entity.kind == TraceRef::Kind::thread) {
        auto st = state_.threads.find(entity);
        if (st != state_.threads.end() && st->second == ReplayThreadState::running) {
            violation(index, Violation::Kind::residence,
                      to_string(entity) + " placed on " + to_string(holder) + " while running");
        }
        if (st != state_.threads.end() && st->second == ReplayThreadState::dead) {
            violation(index, Violation::Kind::residence, "dead " + to_string(entity) + " placed on " + to_string(holder));
        }
    }
    (void)ev;
    state_.holders[holder].push_back(entity);
    state_.location[entity] = holder;
}

void Replayer::check_from(std::size_t index, TraceRef entity, const TraceEvent& ev)
{
    auto from = detail_value(ev.detail, "from");
    if (!from) {
        return;
    }
    auto it = state_.location.find(entity);
    std::string current = it == state_.location.end() ? "-" : to_string(it->second);
    if (*from != current) {
        violation(index, Violation::Kind::residence,
                  to_string(entity) + " moved from " + std::string(*from) + " but resides in " + current);
    }
}

bool Replayer::chain_reaches_spanning(TraceRef holder, CpuId cpu) const
{
    std::size_t guard = 0;
    while (holder.kind == TraceRef::Kind::bubble) {
        auto it = state_.location.find(holder);
        if (it == state_.location.end() || ++guard > state_.location.size()) {
            return false;
        }
        holder = it->second;
    }
    if (holder.kind != TraceRef::Kind::runqueue) {
        return false;
    }
    if (!topology_) {
        return true;
    }
    return topology_->spans(RunqueueId{holder.index}, cpu);
}

void Replayer::apply(const TraceEvent& ev, std::size_t index)
{
    if (ev.time < state_.time) {
        violation(index, Violation::Kind::timestamp,
                  "time " + format_millis(ev.time) + " after " + format_millis(state_.time));
    } else {
        state_.time = ev.time;
    }
    const TraceRef s = ev.subject;
    auto require_thread = [&]() {
        if (s.kind != TraceRef::Kind::thread) {
            violation(index, Violation::Kind::malformed, std::string(to_string(ev.kind)) + " subject must be a thread");
            return false;
        }
        if (ev.kind != EventKind::ThreadBirth && !state_.threads.contains(s)) {
            violation(index, Violation::Kind::malformed, to_string(s) + " was never born");
            return false;
        }
        return true;
    };

    switch (ev.kind) {
    case EventKind::ThreadBirth: {
        if (!require_thread()) {
            return;
        }
        if (state_.threads.contains(s)) {
            violation(index, Violation::Kind::malformed, to_string(s) + " born twice");
            return;
        }
        state_.threads[s] = ReplayThreadState::ready;
        state_.cpu_time[s] = Duration{0};
        if (auto name = detail_value(ev.detail, "name")) {
            state_.names[s] = std::string(*name);
        }
        if (auto home = detail_value(ev.detail, "home")) {
            state_.home[s] = parse_trace_ref(*home);
        }
        if (!ev.location.is_none()) {
            place(index, s, ev.location, ev);
        }
        break;
    }
    case EventKind::ThreadPlacement:
    case EventKind::BubblePlacement: {
        if (!s.is_entity() || (ev.kind == EventKind::ThreadPlacement) != (s.kind == TraceRef::Kind::thread)) {
            violation(index, Violation::Kind::malformed, "placement subject " + to_string(s) + " has the wrong kind");
            return;
        }
        if (s.kind == TraceRef::Kind::thread && !require_thread()) {
            return;
        }
        check_from(index, s, ev);
        detach(s);
        if (auto home = detail_value(ev.detail, "home")) {
            state_.home[s] = parse_trace_ref(*home);
        }
        if (!ev.location.is_none()) {
            place(index, s, ev.location, ev);
            if (s.kind == TraceRef::Kind::thread) {
                state_.threads[s] = ReplayThreadState::ready;
            }
        }
        break;
    }
    case EventKind::ThreadWake: {
        if (!require_thread()) {
            return;
        }
        if (state_.threads[s] != ReplayThreadState::sleeping) {
            violation(index, Violation::Kind::malformed, to_string(s) + " woken while not sleeping");
        }
        check_from(index, s, ev);
        detach(s);
        place(index, s, ev.location, ev);
        state_.threads[s] = ReplayThreadState::ready;
        break;
    }
    case EventKind::ThreadSleep:
    case EventKind::ThreadDeath: {
        if (!require_thread()) {
            return;
        }
        if (state_.location.contains(s)) {
            violation(index, Violation::Kind::residence,
                      to_string(s) + " stopped while still in " + to_string(state_.location[s]));
            detach(s);
        }
        for (const auto& [cpu, t] : state_.running) {
            if (t == s) {
                violation(index, Violation::Kind::switch_pairing,
                          to_string(s) + " stopped while running on cpu" + std::to_string(cpu));
            }
        }
        state_.threads[s] = ev.kind == EventKind::ThreadSleep ? ReplayThreadState::sleeping : ReplayThreadState::dead;
        break;
    }
    case EventKind::ContextSwitchIn: {
        if (!require_thread()) {
            return;
        }
        if (ev.location.kind != TraceRef::Kind::cpu) {
            violation(index, Violation::Kind::malformed, "switch-in location must be a cpu");
            return;
        }
        const std::uint32_t cpu = ev.location.index;
        if (topology_ && !topology_->is_valid(CpuId{cpu})) {
            violation(index, Violation::Kind::malformed, "cpu" + std::to_string(cpu) + " is not in the topology");
            return;
        }
        if (auto busy = state_.running.find(cpu); busy != state_.running.end()) {
            violation(index, Violation::Kind::switch_pairing,
                      "cpu" + std::to_string(cpu) + " switches in " + to_string(s) + " while running " +
                          to_string(busy->second));
        }
        if (state_.threads[s] == ReplayThreadState::running) {
            violation(index, Violation::Kind::residence, to_string(s) + " is already running");
        }
        auto where = state_.location.find(s);
        if (where == state_.location.end()) {
            violation(index, Violation::Kind::residence, to_string(s) + " switched in from no holder");
        } else {
            check_from(index, s, ev);
            if (!chain_reaches_spanning(where->second, CpuId{cpu})) {
                violation(index, Violation::Kind::containment,
                          to_string(s) + " runs on cpu" + std::to_string(cpu) + " but sits in " +
                              to_string(where->second) + ", which does not span it");
            }
        }
        detach(s);
        state_.running[cpu] = s;
        state_.switched_in_at[s] = ev.time;
        state_.threads[s] = ReplayThreadState::running;
        state_.last_cpu[s] = cpu;
        break;
    }
    case EventKind::ContextSwitchOut: {
        if (!require_thread()) {
            return;
        }
        const std::uint32_t cpu = ev.location.index;
        auto busy = state_.running.find(cpu);
        if (ev.location.kind != TraceRef::Kind::cpu || busy == state_.running.end() || busy->second != s) {
            violation(index, Violation::Kind::switch_pairing,
                      to_string(s) + " switched out of " + to_string(ev.location) + " without a matching switch-in");
            return;
        }
        Duration ran = ev.time - state_.switched_in_at[s];
        state_.cpu_time[s] += ran;
        state_.cpu_busy[cpu] += ran;
        state_.running.erase(busy);
        state_.switched_in_at.erase(s);
        state_.threads[s] = ReplayThreadState::stopped;
        break;
    }
    case EventKind::LockAcquire: {
        auto owner = state_.lock_owner.find(s);
        if (owner != state_.lock_owner.end()) {
            violation(index, Violation::Kind::lock_safety,
                      to_string(ev.location) + " acquires " + to_string(s) + " held by " + to_string(owner->second));
        }
        state_.lock_owner[s] = ev.location;
        break;
    }
    case EventKind::LockRelease: {
        auto owner = state_.lock_owner.find(s);
        if (owner == state_.lock_owner.end() || owner->second != ev.location) {
            violation(index, Violation::Kind::lock_safety,
                      to_string(ev.location) + " releases " + to_string(s) + " it does not hold");
        }
        state_.lock_owner.erase(s);
        break;
    }
    case EventKind::Burst:
    case EventKind::Regenerate:
    case EventKind::Steal:
    case EventKind::DaemonStep:
        break;
    }
}

std::optional<Topology> trace_topology(const TraceLog& log)
{
    auto text = log.meta("topology");
    if (!text) {
        return std::nullopt;
    }
    try {
        return Topology::build(TopologySpec::parse(*text));
    } catch (const ConfigError& e) {
        throw TraceError(std::string("bad topology in trace header: ") + e.what());
    }
}

ReplayState replay(const TraceLog& log)
{
    Replayer r(log, Replayer::Mode::strict, trace_topology(log));
    r.run_to_end();
    return r.state();
}

void replay(const TraceLog& log, const std::function<void(std::size_t, const TraceEvent&, const ReplayState&)>& visit)
{
    Replayer r(log, Replayer::Mode::strict, trace_topology(log));
    while (!r.at_end()) {
        std::size_t i = r.applied();
        r.step();
        visit(i, log.events()[i], r.state());
    }
}

// -- top ---------------------------------------------------------------------

double round_pct_half_even(Duration executed, Duration window)
{
    if (window <= Duration{0}) {
        throw TraceError("empty window");
    }
    const auto num = static_cast<unsigned long long>(executed.count()) * 1000ULL;
    const auto den = static_cast<unsigned long long>(window.count());
    unsigned long long tenths = num / den;
    const unsigned long long rem = num % den;
    if (2 * rem > den || (2 * rem == den && tenths % 2 == 1)) {
        ++tenths;
    }
    return static_cast<double>(tenths) / 10.0;
}

namespace {

// Natural order: digit runs compare numerically, so "2-10" sorts after "2-9".
bool natural_less(const std::string& a, const std::string& b)
{
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) {
                ++ie;
            }
            while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) {
                ++je;
            }
            unsigned long long x = std::stoull(a.substr(i, ie - i));
            unsigned long long y = std::stoull(b.substr(j, je - j));
            if (x != y) {
                return x < y;
            }
            i = ie;
            j = je;
            continue;
        }
        if (a[i] != b[j]) {
            return a[i] < b[j];
        }
        ++i;
        ++j;
    }
    return a.size() - i < b.size() - j;
}

Duration overlap(Duration a0, Duration a1, Duration b0, Duration b1)
{
    Duration lo = std::max(a0, b0);
    Duration hi = std::min(a1, b1);
    return hi > lo ? hi - lo : Duration{0};
}

}  // namespace

std::vector<TopRow> top_report(const TraceLog& log, Duration window)
{
    if (window <= Duration{0}) {
        throw TraceError("empty top window");
    }
    const Duration end = log.last_time();
    if (window > end) {
        throw TraceError("top window (" + format_millis(window) + " ms) is longer than the trace (" +
                         format_millis(end) + " ms)");
    }
    const Duration from = end - window;

    Replayer r(log, Replayer::Mode::lenient);
    std::map<TraceRef, Duration> executed;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const TraceEvent& ev = log.events()[i];
        if (ev.kind == EventKind::ContextSwitchOut) {
            auto it = r.state().switched_in_at.find(ev.subject);
            if (it != r.state().switched_in_at.end()) {
                executed[ev.subject] += overlap(it->second, ev.time, from, end);
            }
        }
        r.step();
    }
    for (const auto& [cpu, t] : r.state().running) {
        executed[t] += overlap(r.state().switched_in_at.at(t), end, from, end);
    }

    std::vector<TopRow> rows;
    for (const std::string& d : log.meta_all("daemon")) {
        TopRow row;
        auto sp = d.find(' ');
        row.name = sp == std::string::npos ? d : d.substr(sp + 1);
        row.pr = daemon_priority;
        row.cpu_pct = 0.0;
        row.state = 'I';
        row.cpu = 0;
        rows.push_back(row);
    }
    std::vector<TopRow> threads;
    for (const auto& [t, st] : r.state().threads) {
        if (st == ReplayThreadState::dead) {
            continue;
        }
        TopRow row;
        auto name = r.state().names.find(t);
        row.name = name != r.state().names.end() ? name->second : to_string(t);
        row.pr = thread_priority;
        auto ex = executed.find(t);
        row.cpu_pct = round_pct_half_even(ex != executed.end() ? ex->second : Duration{0}, window);
        row.state = st == ReplayThreadState::sleeping ? 'S' : 'R';
        auto last = r.state().last_cpu.find(t);
        row.cpu = last != r.state().last_cpu.end() ? last->second : 0;
        threads.push_back(row);
    }
    std::sort(threads.begin(), threads.end(),
              [](const TopRow& a, const TopRow& b) { return natural_less(a.name, b.name); });
    rows.insert(rows.end(), threads.begin(), threads.end());
    return rows;
}

std::string format_top(const std::vector<TopRow>& rows)
{
    std::size_t width = 4;
    for (const auto& r : rows) {
        width = std::max(width, r.name.size());
    }
    const int w = static_cast<int>(width);
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%*s %3s %5s %s %3s\n", w, "name", "pr", "cpu%", "s", "cpu");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%*s %3d %5.1f %c %3u\n", w, r.name.c_str(), r.pr, r.cpu_pct, r.state, r.cpu);
        out += buf;
    }
    return out;
}

// -- check -------------------------------------------------------------------

std::size_t CheckReport::count(Violation::Kind kind) const
{
    return static_cast<std::size_t>(
        std::count_if(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; }));
}

namespace {

// Idle CPUs that could see a ready thread through a runqueue spanning them.
void check_conservation(const ReplayState& st, const Topology& topo, std::size_t index,
                        std::vector<Violation>& out)
{
    std::vector<bool> has_ready(topo.node_count(), false);
    for (const auto& [e, holder] : st.location) {
        if (e.kind != TraceRef::Kind::thread) {
            continue;
        }
        auto state = st.threads.find(e);
        if (state == st.threads.end() || state->second != ReplayThreadState::ready) {
            continue;
        }
        TraceRef h = holder;
        std::size_t guard = 0;
        while (h.kind == TraceRef::Kind::bubble && guard++ <= st.location.size()) {
            auto it = st.location.find(h);
            if (it == st.location.end()) {
                break;
            }
            h = it->second;
        }
        if (h.kind == TraceRef::Kind::runqueue && h.index < has_ready.size()) {
            has_ready[h.index] = true;
        }
    }
    for (std::uint32_t c = 0; c < topo.cpu_count(); ++c) {
        if (st.running.contains(c)) {
            continue;
        }
        for (RunqueueId rq : topo.runqueues_spanning(CpuId{c})) {
            if (has_ready[rq.value()]) {
                out.push_back({index, Violation::Kind::work_conservation,
                               "cpu" + std::to_string(c) + " idle at " + format_millis(st.time) +
                                   " ms while rq" + std::to_string(rq.value()) + " holds a ready thread"});
                break;
            }
        }
    }
}

}  // namespace

CheckReport check(const TraceLog& log, const Topology& topology)
{
    CheckReport report;
    report.events = log.size();
    Replayer r(log, Replayer::Mode::lenient, topology);
    const bool conserving = log.meta("strategy") == std::optional<std::string>("none");
    std::vector<Violation> extra;
    const auto& events = log.events();
    for (std::size_t i = 0; i < events.size(); ++i) {
        r.step();
        const bool group_end = i + 1 < events.size() && events[i + 1].time != events[i].time;
        if (conserving && group_end) {
            check_conservation(r.state(), topology, i, extra);
        }
    }
    report.violations = r.violations();
    report.violations.insert(report.violations.end(), extra.begin(), extra.end());
    std::stable_sort(report.violations.begin(), report.violations.end(),
                     [](const Violation& a, const Violation& b) { return a.index < b.index; });
    return report;
}

CheckReport check(const TraceLog& log)
{
    auto topo = trace_topology(log);
    if (!topo) {
        throw TraceError("trace header has no topology; pass one explicitly");
    }
    return check(log, *topo);
}

std::vector<double> busy_fractions(const TraceLog& log, std::size_t cpus, Duration from, Duration to)
{
    std::vector<Duration> busy(cpus, Duration{0});
    std::map<std::uint32_t, Duration> in;
    for (const auto& ev : log.events()) {
        if (ev.location.kind != TraceRef::Kind::cpu || ev.location.index >= cpus) {
            continue;
        }
        if (ev.kind == EventKind::ContextSwitchIn) {
            in[ev.location.index] = ev.time;
        } else if (ev.kind == EventKind::ContextSwitchOut) {
            auto it = in.find(ev.location.index);
            if (it != in.end()) {
                busy[ev.location.index] += overlap(it->second, ev.time, from, to);
                in.erase(it);
            }
        }
    }
    for (const auto& [cpu, t0] : in) {
        busy[cpu] += overlap(t0, to, from, to);
    }
    std::vector<double> out;
    const double span = static_cast<double>((to - from).count());
    for (Duration b : busy) {
        out.push_back(span > 0 ? static_cast<double>(b.count()) / span : 0.0);
    }
    return out;
}

std::pair<std::size_t, std::size_t> steal_home_chains(const TraceLog& log)
{
    std::map<TraceRef, TraceRef> home;
    std::size_t checked = 0;
    std::size_t mismatches = 0;
    auto chain_of = [&](TraceRef e) {
        std::string chain;
        auto it = home.find(e);
        while (it != home.end()) {
            if (!chain.empty()) {
                chain += '/';
            }
            chain += to_string(it->second);
            it = home.find(it->second);
        }
        return chain.empty() ? std::string("-") : chain;
    };
    std::map<TraceRef, std::string> birth_chain;
    for (const auto& ev : log.events()) {
        if (ev.kind == EventKind::ThreadBirth || ev.kind == EventKind::BubblePlacement) {
            if (auto h = detail_value(ev.detail, "home")) {
                home[ev.subject] = parse_trace_ref(*h);
            }
            if (ev.kind == EventKind::ThreadBirth) {
                birth_chain[ev.subject] = chain_of(ev.subject);
            }
        } else if (ev.kind == EventKind::Steal && ev.subject.kind == TraceRef::Kind::thread) {
            ++checked;
            auto recorded = detail_value(ev.detail, "home");
            auto born = birth_chain.find(ev.subject);
            if (!recorded || born == birth_chain.end() || *recorded != born->second) {
                ++mismatches;
            }
        }
    }
    return {checked, mismatches};
}

}  // namespace bubblesched
