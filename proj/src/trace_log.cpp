#include "bubblesched/trace_log.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace bubblesched {

namespace {

constexpr std::array<std::string_view, 14> event_names{
    "ThreadBirth",     "ThreadDeath",    "ThreadSleep",      "ThreadWake",       "BubblePlacement",
    "ThreadPlacement", "ContextSwitchIn", "ContextSwitchOut", "Burst",            "Regenerate",
    "Steal",           "DaemonStep",     "LockAcquire",      "LockRelease",
};

std::optional<std::uint32_t> parse_index(std::string_view s)
{
    if (s.empty()) {
        return std::nullopt;
    }
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

// Trace times are always written by format_millis; parse them back exactly.
Duration parse_time(std::string_view s)
{
    try {
        return parse_millis(s);
    } catch (const ConfigError&) {
        throw TraceError("bad timestamp '" + std::string(s) + "'");
    }
}

}  // namespace

std::string_view to_string(EventKind kind)
{
    return event_names[static_cast<std::size_t>(kind)];
}

std::optional<EventKind> parse_event_kind(std::string_view text)
{
    for (std::size_t i = 0; i < event_names.size(); ++i) {
        if (event_names[i] == text) {
            return static_cast<EventKind>(i);
        }
    }
    return std::nullopt;
}

TraceRef TraceRef::actor(ActorId a)
{
    switch (a.kind) {
    case ActorId::Kind::cpu:
        return {Kind::cpu, a.index};
    case ActorId::Kind::daemon:
        return {Kind::daemon, a.index};
    case ActorId::Kind::timer:
        return {Kind::timer, 0};
    case ActorId::Kind::external:
        return {Kind::external, a.index};
    }
    return {};
}

std::string to_string(TraceRef ref)
{
    std::string idx = std::to_string(ref.index);
    switch (ref.kind) {
    case TraceRef::Kind::none:
        return "-";
    case TraceRef::Kind::thread:
        return "t" + idx;
    case TraceRef::Kind::bubble:
        return "b" + idx;
    case TraceRef::Kind::runqueue:
        return "rq" + idx;
    case TraceRef::Kind::cpu:
        return "cpu" + idx;
    case TraceRef::Kind::daemon:
        return "d" + idx;
    case TraceRef::Kind::timer:
        return "timer";
    case TraceRef::Kind::external:
        return "x" + idx;
    }
    return "-";
}

TraceRef parse_trace_ref(std::string_view text)
{
    if (text == "-") {
        return TraceRef::none();
    }
    if (text == "timer") {
        return {TraceRef::Kind::timer, 0};
    }
    struct Prefix {
        std::string_view prefix;
        TraceRef::Kind kind;
    };
    // Longest prefixes first so "rq" is not read as something else.
    static constexpr std::array<Prefix, 6> prefixes{{
        {"cpu", TraceRef::Kind::cpu},
        {"rq", TraceRef::Kind::runqueue},
        {"t", TraceRef::Kind::thread},
        {"b", TraceRef::Kind::bubble},
        {"d", TraceRef::Kind::daemon},
        {"x", TraceRef::Kind::external},
    }};
    for (const auto& p : prefixes) {
        if (text.starts_with(p.prefix)) {
            if (auto idx = parse_index(text.substr(p.prefix.size()))) {
                return {p.kind, *idx};
            }
            break;
        }
    }
    throw TraceError("bad trace token '" + std::string(text) + "'");
}

std::optional<std::string_view> detail_value(std::string_view detail, std::string_view key)
{
    std::size_t i = 0;
    while (i < detail.size()) {
        while (i < detail.size() && detail[i] == ' ') {
            ++i;
        }
        std::size_t end = detail.find(' ', i);
        std::string_view word = detail.substr(i, end == std::string_view::npos ? std::string_view::npos : end - i);
        if (word.size() > key.size() && word.starts_with(key) && word[key.size()] == '=') {
            return word.substr(key.size() + 1);
        }
        if (end == std::string_view::npos) {
            break;
        }
        i = end + 1;
    }
    return std::nullopt;
}

void TraceLog::record(TraceEvent event)
{
    if (!events_.empty() && event.time < events_.back().time) {
        throw TraceError("trace time regression: " + format_millis(event.time) + " after " +
                         format_millis(events_.back().time));
    }
    events_.push_back(std::move(event));
}

void TraceLog::set_meta(std::string key, std::string value)
{
    for (auto& [k, v] : meta_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    meta_.emplace_back(std::move(key), std::move(value));
}

void TraceLog::add_meta(std::string key, std::string value)
{
    meta_.emplace_back(std::move(key), std::move(value));
}

std::optional<std::string> TraceLog::meta(std::string_view key) const
{
    for (const auto& [k, v] : meta_) {
        if (k == key) {
            return v;
        }
    }
    return std::nullopt;
}

std::vector<std::string> TraceLog::meta_all(std::string_view key) const
{
    std::vector<std::string> out;
    for (const auto& [k, v] : meta_) {
        if (k == key) {
            out.push_back(v);
        }
    }
    return out;
}

void TraceLog::write(std::ostream& out) const
{
    out << trace_header << '\n';
    for (const auto& [k, v] : meta_) {
        out << '#' << k << ' ' << v << '\n';
    }
    for (const auto& ev : events_) {
        out << format_millis(ev.time) << '\t' << bubblesched::to_string(ev.kind) << '\t' << bubblesched::to_string(ev.subject) << '\t'
            << bubblesched::to_string(ev.location) << '\t' << ev.detail << '\n';
    }
}

std::string TraceLog::to_string() const
{
    std::ostringstream out;
    write(out);
    return out.str();
}

TraceLog TraceLog::read(std::istream& in)
{
    TraceLog log;
    std::string line;
    std::size_t line_no = 0;
    auto where = [&] { return " (trace line " + std::to_string(line_no) + ")"; };
    if (!std::getline(in, line)) {
        throw TraceError("empty trace file");
    }
    ++line_no;
    if (line != trace_header) {
        throw TraceError("missing '" + std::string(trace_header) + "' header" + where());
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::string_view body(line);
            body.remove_prefix(1);
            auto sp = body.find(' ');
            if (sp == std::string_view::npos) {
                log.add_meta(std::string(body), "");
            } else {
                log.add_meta(std::string(body.substr(0, sp)), std::string(body.substr(sp + 1)));
            }
            continue;
        }
        std::array<std::string_view, 5> cols;
        std::string_view rest(line);
        for (std::size_t c = 0; c < 4; ++c) {
            auto tab = rest.find('\t');
            if (tab == std::string_view::npos) {
                throw TraceError("expected 5 tab-separated columns" + where());
            }
            cols[c] = rest.substr(0, tab);
            rest.remove_prefix(tab + 1);
        }
        cols[4] = rest;
        TraceEvent ev;
        try {
            ev.time = parse_time(cols[0]);
            auto kind = parse_event_kind(cols[1]);
            if (!kind) {
                throw TraceError("unknown event kind '" + std::string(cols[1]) + "'");
            }
            ev.kind = *kind;
            ev.subject = parse_trace_ref(cols[2]);
            ev.location = parse_trace_ref(cols[3]);
        } catch (const TraceError& e) {
            throw TraceError(e.what() + where());
        }
        ev.detail = std::string(cols[4]);
        log.append_unchecked(std::move(ev));
    }
    return log;
}

TraceLog TraceLog::parse(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return read(in);
}

TraceLog TraceLog::read_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw TraceError("cannot open trace file '" + path + "'");
    }
    return read(in);
}

void TraceLog::write_file(const std::string& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write trace file '" + path + "'");
    }
    write(out);
    if (!out) {
        throw ConfigError("error writing trace file '" + path + "'");
    }
}

}  // namespace bubblesched
