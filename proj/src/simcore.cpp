#include "bubblesched/simcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace bubblesched {

// -- workload files ----------------------------------------------------------

namespace {

std::vector<std::string_view> words_of(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

int parse_int(std::string_view s, const std::string& what)
{
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError("bad " + what + " '" + std::string(s) + "'");
    }
    return v;
}

double parse_double(std::string_view s, const std::string& what)
{
    std::string text(s);
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
        throw ConfigError("bad " + what + " '" + text + "'");
    }
    return v;
}

Program parse_ops(const std::vector<std::string_view>& w, std::size_t from)
{
    Program prog;
    for (std::size_t i = from; i < w.size(); ++i) {
        ProgramOp op;
        auto need_arg = [&](const char* name) {
            if (i + 1 >= w.size()) {
                throw ConfigError(std::string("op '") + name + "' needs an argument");
            }
            return w[++i];
        };
        if (w[i] == "compute") {
            op.kind = ProgramOp::Kind::compute;
            op.duration = parse_millis(need_arg("compute"));
        } else if (w[i] == "sleep") {
            op.kind = ProgramOp::Kind::sleep;
            op.duration = parse_millis(need_arg("sleep"));
        } else if (w[i] == "spawn") {
            op.kind = ProgramOp::Kind::spawn;
            op.program = std::string(need_arg("spawn"));
        } else if (w[i] == "barrier") {
            op.kind = ProgramOp::Kind::barrier;
        } else if (w[i] == "busy") {
            op.kind = ProgramOp::Kind::busy;
        } else if (w[i] == "exit") {
            op.kind = ProgramOp::Kind::exit;
        } else {
            throw ConfigError("unknown op '" + std::string(w[i]) + "'");
        }
        prog.push_back(std::move(op));
    }
    return prog;
}

void validate_program(const Program& prog, const CustomWorkload& w)
{
    for (const auto& op : prog) {
        switch (op.kind) {
        case ProgramOp::Kind::compute:
        case ProgramOp::Kind::sleep:
            if (op.duration <= Duration{0}) {
                throw ConfigError("compute/sleep durations must be positive");
            }
            break;
        case ProgramOp::Kind::spawn:
            if (!w.programs.contains(op.program)) {
                throw ConfigError("spawn of undefined program '" + op.program + "'");
            }
            break;
        default:
            break;
        }
    }
}

void validate_item(const CustomItem& item, const CustomWorkload& w)
{
    if (item.kind == CustomItem::Kind::thread) {
        validate_program(item.program, w);
        return;
    }
    if (item.children.empty()) {
        throw ConfigError("empty bubble in custom workload");
    }
    for (const auto& c : item.children) {
        validate_item(c, w);
    }
}

}  // namespace

WorkloadSpec WorkloadSpec::parse(std::string_view text)
{
    std::optional<WorkloadSpec> spec;
    CustomWorkload* custom = nullptr;
    std::vector<std::vector<CustomItem>*> open{};
    std::size_t line_no = 0;
    while (!text.empty()) {
        std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        auto w = words_of(line);
        if (w.empty()) {
            continue;
        }
        try {
            if (custom) {
                if (w[0] == "program") {
                    if (w.size() < 2) {
                        throw ConfigError("program needs a name");
                    }
                    if (!open.empty() && open.size() > 1) {
                        throw ConfigError("program definitions are not allowed inside a bubble");
                    }
                    custom->programs[std::string(w[1])] = parse_ops(w, 2);
                } else if (w[0] == "bubble") {
                    if (w.size() != 1) {
                        throw ConfigError("'bubble' takes no arguments");
                    }
                    CustomItem b;
                    b.kind = CustomItem::Kind::bubble;
                    open.back()->push_back(std::move(b));
                    open.push_back(&open.back()->back().children);
                } else if (w[0] == "end") {
                    if (open.size() <= 1) {
                        throw ConfigError("'end' without 'bubble'");
                    }
                    open.pop_back();
                } else if (w[0] == "thread") {
                    CustomItem t;
                    t.kind = CustomItem::Kind::thread;
                    t.program = parse_ops(w, 1);
                    open.back()->push_back(std::move(t));
                } else {
                    throw ConfigError("unexpected '" + std::string(w[0]) + "' in custom workload");
                }
                continue;
            }
            if (spec) {
                throw ConfigError("a workload file holds exactly one workload");
            }
            if (w[0] == "busy_gangs") {
                BusyGangs g;
                for (std::size_t i = 1; i < w.size(); ++i) {
                    g.sizes.push_back(parse_int(w[i], "gang size"));
                }
                spec = WorkloadSpec{g};
            } else if (w[0] == "job_stream") {
                JobStream js;
                bool have_jobs = false, have_threads = false, have_work = false;
                for (std::size_t i = 1; i < w.size(); ++i) {
                    auto eq = w[i].find('=');
                    if (eq == std::string_view::npos) {
                        throw ConfigError("expected key=value, got '" + std::string(w[i]) + "'");
                    }
                    std::string_view key = w[i].substr(0, eq);
                    std::string_view value = w[i].substr(eq + 1);
                    if (key == "jobs") {
                        js.jobs = parse_int(value, "jobs");
                        have_jobs = true;
                    } else if (key == "threads") {
                        js.threads = parse_int(value, "threads");
                        have_threads = true;
                    } else if (key == "work") {
                        js.work = parse_millis(value);
                        have_work = true;
                    } else if (key == "sync") {
                        js.sync = parse_millis(value);
                    } else if (key == "jitter") {
                        js.jitter = parse_millis(value);
                    } else if (key == "noise") {
                        js.noise = parse_double(value, "noise");
                    } else {
                        throw ConfigError("unknown job_stream key '" + std::string(key) + "'");
                    }
                }
                if (!have_jobs || !have_threads || !have_work) {
                    throw ConfigError("job_stream needs jobs=, threads= and work=");
                }
                spec = WorkloadSpec{js};
            } else if (w[0] == "custom") {
                if (w.size() != 1) {
                    throw ConfigError("'custom' takes no arguments");
                }
                spec = WorkloadSpec{CustomWorkload{}};
                custom = &std::get<CustomWorkload>(spec->kind);
                open.push_back(&custom->items);
            } else {
                throw ConfigError("unknown workload '" + std::string(w[0]) + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (workload line " + std::to_string(line_no) + ")");
        }
    }
    if (!spec) {
        throw ConfigError("workload file is empty");
    }
    if (open.size() > 1) {
        throw ConfigError("unterminated 'bubble' block");
    }
    spec->validate();
    return *spec;
}

void WorkloadSpec::validate() const
{
    if (const auto* g = std::get_if<BusyGangs>(&kind)) {
        if (g->sizes.empty()) {
            throw ConfigError("busy_gangs needs at least one gang size");
        }
        for (int s : g->sizes) {
            if (s < 1) {
                throw ConfigError("gang sizes must be >= 1");
            }
        }
    } else if (const auto* j = std::get_if<JobStream>(&kind)) {
        if (j->jobs < 1 || j->threads < 1) {
            throw ConfigError("job_stream jobs and threads must be >= 1");
        }
        if (j->work <= Duration{0}) {
            throw ConfigError("job_stream work must be positive");
        }
        if (j->sync && *j->sync <= Duration{0}) {
            throw ConfigError("job_stream sync must be positive");
        }
        if (j->jitter < Duration{0} || !(j->noise >= 0.0)) {
            throw ConfigError("job_stream jitter and noise must be >= 0");
        }
    } else {
        const auto& c = std::get<CustomWorkload>(kind);
        if (c.items.empty()) {
            throw ConfigError("custom workload has no threads");
        }
        for (const auto& [name, prog] : c.programs) {
            validate_program(prog, c);
        }
        for (const auto& item : c.items) {
            validate_item(item, c);
        }
    }
}

// -- configuration -----------------------------------------------------------

std::string_view to_string(StrategyConfig::Kind kind)
{
    switch (kind) {
    case StrategyConfig::Kind::none:
        return "none";
    case StrategyConfig::Kind::burst:
        return "burst";
    case StrategyConfig::Kind::gang:
        return "gang";
    case StrategyConfig::Kind::gang_per_node:
        return "gang-per-node";
    case StrategyConfig::Kind::steal:
        return "steal";
    }
    return "?";
}

std::optional<StrategyConfig::Kind> parse_strategy_kind(std::string_view text)
{
    for (auto k : {StrategyConfig::Kind::none, StrategyConfig::Kind::burst, StrategyConfig::Kind::gang,
                   StrategyConfig::Kind::gang_per_node, StrategyConfig::Kind::steal}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    return std::nullopt;
}

void SimConfig::validate() const
{
    topology.validate();
    workload.validate();
    if (quantum <= Duration{0}) {
        throw ConfigError("quantum must be positive");
    }
    if (horizon <= Duration{0} || horizon % quantum != Duration{0}) {
        throw ConfigError("horizon must be a positive multiple of the quantum");
    }
    auto multiple = [&](Duration d, const char* what) {
        if (d <= Duration{0} || d % quantum != Duration{0}) {
            throw ConfigError(std::string(what) + " must be a positive multiple of the quantum");
        }
    };
    if (strategy.kind == StrategyConfig::Kind::gang || strategy.kind == StrategyConfig::Kind::gang_per_node) {
        multiple(strategy.timeslice, "timeslice");
    }
    if (strategy.kind == StrategyConfig::Kind::burst) {
        multiple(strategy.regen, "regeneration period");
    }
}

std::optional<double> RunResult::effective_parallelism() const
{
    if (jobs.empty()) {
        return std::nullopt;
    }
    Duration first = jobs.front().arrival;
    Duration last{0};
    Duration work{0};
    for (const auto& j : jobs) {
        if (!j.completion) {
            return std::nullopt;
        }
        first = std::min(first, j.arrival);
        last = std::max(last, *j.completion);
        work += j.useful_work;
    }
    if (last <= first) {
        return std::nullopt;
    }
    return static_cast<double>(work.count()) / static_cast<double>((last - first).count());
}

// -- simulation --------------------------------------------------------------

struct Simulation::ThreadRun {
    int job = 0;
    Program program;
    std::size_t pc = 0;
    /// Work left in the current compute op, at local speed.
    std::optional<std::int64_t> remaining;
    std::optional<NodeId> affine_node;
};

struct Simulation::JobState {
    Duration arrival{};
    bool instantiated = false;
    std::optional<EntityId> root;
    /// Thread programs for generated workloads (job_stream, busy_gangs).
    std::vector<Program> programs;
    const CustomItem* custom = nullptr;
    std::vector<EntityId> threads;
    std::vector<EntityId> bubbles;
    std::size_t live = 0;
    int next_name = 0;
    std::vector<EntityId> barrier;
    std::optional<Duration> completion;
    Duration useful_work{};
};

namespace {

double unit_draw(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Duration useful(const Program& p)
{
    Duration d{0};
    for (const auto& op : p) {
        if (op.kind == ProgramOp::Kind::compute) {
            d += op.duration;
        }
    }
    return d;
}

Strategy build_strategy(const StrategyConfig& cfg, const Topology& topo)
{
    switch (cfg.kind) {
    case StrategyConfig::Kind::burst: {
        BurstConfig b;
        b.burst_level = cfg.burst_level.value_or(topo.level_count() > 1 ? topo.spec().levels[1].kind
                                                                         : LevelKind::machine);
        b.regen_period = cfg.regen;
        return make_burst_strategy(topo, b);
    }
    case StrategyConfig::Kind::gang:
        return make_gang_strategy(topo, cfg.timeslice);
    case StrategyConfig::Kind::gang_per_node:
        return make_gang_per_node_strategy(topo, cfg.timeslice);
    case StrategyConfig::Kind::steal:
        return make_steal_strategy(topo);
    case StrategyConfig::Kind::none:
        break;
    }
    return {};
}

}  // namespace

Simulation::Simulation(SimConfig config) : config_(std::move(config)), rng_(config_.seed)
{
    config_.validate();
    topology_ = std::make_shared<const Topology>(Topology::build(config_.topology));
    store_ = std::make_unique<EntityStore>(topology_, &trace_);
    sched_ = std::make_unique<GroundScheduler>(*store_, config_.quantum);
    if (config_.strategy.kind != StrategyConfig::Kind::none) {
        sched_->install_strategy(build_strategy(config_.strategy, *topology_));
    }
    busy_.assign(topology_->cpu_count(), Duration{0});

    trace_.set_meta("quantum", format_millis(config_.quantum));
    trace_.set_meta("horizon", format_millis(config_.horizon));
    trace_.set_meta("topology", config_.topology.to_text("; "));
    trace_.set_meta("strategy", std::string(to_string(config_.strategy.kind)));
    trace_.set_meta("seed", std::to_string(config_.seed));
    if (const Strategy* s = sched_->strategy()) {
        for (std::size_t i = 0; i < s->daemons.size(); ++i) {
            trace_.add_meta("daemon", std::to_string(i) + " " + s->daemons[i].name);
        }
    }
    for (std::size_t i = topology_->node_count(); i < store_->runqueue_count(); ++i) {
        const Runqueue& rq = store_->runqueue(RunqueueId{static_cast<std::uint32_t>(i)});
        trace_.add_meta("private_rq", std::to_string(i) + " " + rq.name);
    }

    const auto& wl = config_.workload.kind;
    if (const auto* g = std::get_if<BusyGangs>(&wl)) {
        for (int size : g->sizes) {
            JobState job;
            job.programs.assign(static_cast<std::size_t>(size), Program{ProgramOp{ProgramOp::Kind::busy, {}, {}}});
            jobs_.push_back(std::move(job));
        }
    } else if (const auto* js = std::get_if<JobStream>(&wl)) {
        const Duration q = config_.quantum;
        std::vector<Duration> offsets(static_cast<std::size_t>(js->jobs), Duration{0});
        if (js->jitter > Duration{0}) {
            const auto slots = static_cast<std::uint64_t>(js->jitter / q) + 1;
            for (auto& o : offsets) {
                o = q * static_cast<std::int64_t>(rng_() % slots);
            }
            Duration first = *std::min_element(offsets.begin(), offsets.end());
            for (auto& o : offsets) {
                o -= first;
            }
        }
        const Duration chunk = js->sync.value_or(js->work);
        for (int j = 0; j < js->jobs; ++j) {
            JobState job;
            job.arrival = offsets[static_cast<std::size_t>(j)];
            for (int t = 0; t < js->threads; ++t) {
                Program p;
                for (Duration done{0}; done < js->work; done += chunk) {
                    Duration piece = std::min(chunk, js->work - done);
                    if (js->noise > 0.0) {
                        double f = 1.0 + js->noise * unit_draw(rng_);
                        piece = Duration{std::llround(static_cast<double>(piece.count()) * f)};
                    }
                    if (!p.empty()) {
                        p.push_back({ProgramOp::Kind::barrier, {}, {}});
                    }
                    p.push_back({ProgramOp::Kind::compute, piece, {}});
                }
                p.push_back({ProgramOp::Kind::exit, {}, {}});
                job.programs.push_back(std::move(p));
            }
            jobs_.push_back(std::move(job));
        }
    } else {
        for (const auto& item : std::get<CustomWorkload>(wl).items) {
            JobState job;
            job.custom = &item;
            jobs_.push_back(std::move(job));
        }
    }
}

Simulation::~Simulation() = default;

EntityId Simulation::make_thread(std::optional<EntityId> home, int job, const Program& program,
                                 std::optional<EntityId> creator)
{
    JobState& js = jobs_[static_cast<std::size_t>(job)];
    ThreadAttrs attrs;
    attrs.name = std::to_string(job) + "-" + std::to_string(js.next_name++);
    if (std::holds_alternative<JobStream>(config_.workload.kind)) {
        attrs.expected_cpu = std::get<JobStream>(config_.workload.kind).work;
    }
    EntityId t = creator ? store_->spawn_thread(*creator, std::move(attrs)) : store_->create_thread(home, std::move(attrs));
    ThreadRun run;
    run.job = job;
    run.program = program;
    runs_.emplace(t, std::move(run));
    js.threads.push_back(t);
    js.live += 1;
    js.useful_work += useful(program);
    live_threads_ += 1;
    if (!store_->entity(t).home) {
        sched_->place_top_level(t);
    }
    return t;
}

void Simulation::build_custom_item(const CustomItem& item, std::optional<EntityId> home, int job,
                                   std::vector<EntityId>& tops)
{
    if (item.kind == CustomItem::Kind::thread) {
        EntityId t = make_thread(home, job, item.program, std::nullopt);
        if (!home) {
            tops.push_back(t);
        }
        return;
    }
    EntityId b = store_->create_bubble(home, "job" + std::to_string(job));
    jobs_[static_cast<std::size_t>(job)].bubbles.push_back(b);
    for (const auto& c : item.children) {
        build_custom_item(c, b, job, tops);
    }
    if (!home) {
        tops.push_back(b);
        sched_->place_top_level(b);
    }
}

void Simulation::instantiate_job(std::size_t index)
{
    JobState& job = jobs_[index];
    job.instantiated = true;
    const int j = static_cast<int>(index);
    if (job.custom) {
        std::vector<EntityId> tops;
        build_custom_item(*job.custom, std::nullopt, j, tops);
        job.root = tops.front();
        return;
    }
    EntityId b = store_->create_bubble(std::nullopt, "job" + std::to_string(j));
    job.root = b;
    job.bubbles.push_back(b);
    std::vector<Program> programs = job.programs;
    for (const auto& p : programs) {
        make_thread(b, j, p, std::nullopt);
    }
    sched_->place_top_level(b);
}

double Simulation::synthetic_job_cost(EntityId thread, CpuId cpu) const
{
    if (!std::holds_alternative<JobStream>(config_.workload.kind) || !topology_->numa_factor()) {
        return 1.0;
    }
    auto here = topology_->ancestor_at(cpu, LevelKind::numa_node);
    auto it = runs_.find(thread);
    if (!here || it == runs_.end() || !it->second.affine_node || *it->second.affine_node == *here) {
        return 1.0;
    }
    return 1.0 / *topology_->numa_factor();
}

void Simulation::account_quantum()
{
    sched_->charge_running();
    for (std::uint32_t c = 0; c < topology_->cpu_count(); ++c) {
        CpuId cpu{c};
        auto t = sched_->running_on(cpu);
        if (!t) {
            continue;
        }
        busy_[c] += config_.quantum;
        ThreadRun& run = runs_.at(*t);
        if (!run.affine_node) {
            run.affine_node = topology_->ancestor_at(cpu, LevelKind::numa_node);
        }
        if (run.pc < run.program.size() && run.program[run.pc].kind == ProgramOp::Kind::compute) {
            if (!run.remaining) {
                run.remaining = run.program[run.pc].duration.count();
            }
            const double cost = synthetic_job_cost(*t, cpu);
            *run.remaining -= std::llround(static_cast<double>(config_.quantum.count()) * cost);
            if (*run.remaining > 0) {
                continue;
            }
            run.remaining.reset();
            ++run.pc;
        }
        advance_program(cpu, *t);
    }
}

void Simulation::advance_program(CpuId cpu, EntityId thread)
{
    ThreadRun& run = runs_.at(thread);
    JobState& job = jobs_[static_cast<std::size_t>(run.job)];
    while (true) {
        if (run.pc >= run.program.size()) {
            finish_thread(cpu, thread);
            return;
        }
        const ProgramOp& op = run.program[run.pc];
        switch (op.kind) {
        case ProgramOp::Kind::compute:
        case ProgramOp::Kind::busy:
            return;
        case ProgramOp::Kind::exit:
            finish_thread(cpu, thread);
            return;
        case ProgramOp::Kind::spawn: {
            ++run.pc;
            const auto& programs = std::get<CustomWorkload>(config_.workload.kind).programs;
            make_thread(std::nullopt, run.job, programs.at(op.program), thread);
            break;
        }
        case ProgramOp::Kind::sleep: {
            const Duration q = config_.quantum;
            Duration due = now_ + (op.duration + q - Duration{1}) / q * q;
            ++run.pc;
            sched_->switch_out(cpu, ThreadState::sleeping, "sleep");
            wakes_.emplace_back(due, wake_seq_++, thread);
            return;
        }
        case ProgramOp::Kind::barrier: {
            ++run.pc;
            job.barrier.push_back(thread);
            if (job.barrier.size() < job.live) {
                sched_->switch_out(cpu, ThreadState::sleeping, "barrier");
                return;
            }
            std::vector<EntityId> waiting = std::move(job.barrier);
            job.barrier.clear();
            for (EntityId w : waiting) {
                if (w != thread) {
                    sched_->wake(w);
                }
            }
            break;
        }
        }
    }
}

void Simulation::finish_thread(CpuId cpu, EntityId thread)
{
    ThreadRun& run = runs_.at(thread);
    JobState& job = jobs_[static_cast<std::size_t>(run.job)];
    sched_->switch_out(cpu, ThreadState::dead, "exit");
    live_threads_ -= 1;
    job.live -= 1;
    if (job.live == 0) {
        job.completion = now_;
        retire_bubbles(thread);
        return;
    }
    // A barrier may now be complete without the exited thread.
    if (!job.barrier.empty() && job.barrier.size() >= job.live) {
        std::vector<EntityId> waiting = std::move(job.barrier);
        job.barrier.clear();
        for (EntityId w : waiting) {
            sched_->wake(w);
        }
    }
}

void Simulation::retire_bubbles(EntityId thread)
{
    JobState& job = jobs_[static_cast<std::size_t>(runs_.at(thread).job)];
    // Innermost first: bubbles were created outer before inner.
    for (auto it = job.bubbles.rbegin(); it != job.bubbles.rend(); ++it) {
        EntityId b = *it;
        if (!store_->is_alive(b)) {
            continue;
        }
        const Entity& ent = store_->entity(b);
        if (ent.holder) {
            ActorId actor = ActorId::cpu(*store_->thread(thread).last_cpu);
            LockSet lock(*store_, actor, {*ent.holder});
            store_->remove_entity(actor, b);
        }
        store_->destroy_bubble(b);
    }
}

bool Simulation::all_done() const
{
    if (live_threads_ > 0) {
        return false;
    }
    return std::all_of(jobs_.begin(), jobs_.end(), [](const JobState& j) { return j.instantiated; });
}

void Simulation::finish_run()
{
    for (std::uint32_t c = 0; c < topology_->cpu_count(); ++c) {
        if (sched_->running_on(CpuId{c})) {
            sched_->switch_out(CpuId{c}, ThreadState::ready, "end");
        }
    }
    finished_ = true;
}

void Simulation::cpu_step(CpuId cpu)
{
    if (!sched_->running_on(cpu)) {
        sched_->dispatch(cpu);
    }
}

bool Simulation::step()
{
    if (finished_) {
        return false;
    }
    store_->set_clock(now_);
    if (!started_) {
        started_ = true;
        sched_->mark_started();
    } else {
        account_quantum();
    }

    std::sort(wakes_.begin(), wakes_.end());
    std::size_t woken = 0;
    while (woken < wakes_.size() && std::get<0>(wakes_[woken]) <= now_) {
        sched_->wake(std::get<2>(wakes_[woken]));
        ++woken;
    }
    wakes_.erase(wakes_.begin(), wakes_.begin() + static_cast<std::ptrdiff_t>(woken));

    for (std::size_t j = 0; j < jobs_.size(); ++j) {
        if (!jobs_[j].instantiated && jobs_[j].arrival <= now_) {
            instantiate_job(j);
        }
    }

    if (now_ >= config_.horizon || all_done()) {
        finish_run();
        return false;
    }
    for (std::uint32_t c = 0; c < topology_->cpu_count(); ++c) {
        sched_->preempt(CpuId{c});
    }
    for (std::uint32_t c = 0; c < topology_->cpu_count(); ++c) {
        cpu_step(CpuId{c});
    }
    sched_->on_tick(now_);
    now_ += config_.quantum;
    return true;
}

Snapshot Simulation::snapshot() const
{
    Snapshot s;
    for (std::size_t i = 0; i < store_->runqueue_count(); ++i) {
        HolderRef h = HolderRef::runqueue(RunqueueId{static_cast<std::uint32_t>(i)});
        for (EntityId e : store_->holder_entities(h)) {
            s.holders[TraceRef::holder(h)].push_back(TraceRef::entity(store_->entity(e).kind, e));
        }
    }
    for (std::size_t i = 0; i < store_->entity_count(); ++i) {
        EntityId id{static_cast<std::uint32_t>(i)};
        const Entity& ent = store_->entity(id);
        if (ent.is_bubble()) {
            if (!ent.alive) {
                continue;
            }
            for (EntityId e : store_->bubble(id).contents) {
                s.holders[TraceRef::bubble(id)].push_back(TraceRef::entity(store_->entity(e).kind, e));
            }
            continue;
        }
        const ThreadInfo& t = store_->thread(id);
        s.cpu_time[TraceRef::thread(id)] = t.accumulated_cpu;
        if (t.running_on) {
            s.running[t.running_on->value()] = TraceRef::thread(id);
        }
    }
    return s;
}

RunResult Simulation::run()
{
    while (step()) {
    }
    RunResult r;
    r.end_time = now_;
    r.final_state = snapshot();
    for (std::size_t i = 0; i < store_->entity_count(); ++i) {
        EntityId id{static_cast<std::uint32_t>(i)};
        const Entity& ent = store_->entity(id);
        if (ent.is_thread()) {
            r.per_thread_cpu[id] = store_->thread(id).accumulated_cpu;
            r.thread_names[id] = ent.name;
        }
    }
    r.per_cpu_busy_time = busy_;
    for (Duration b : busy_) {
        r.per_cpu_busy.push_back(now_ > Duration{0} ? static_cast<double>(b.count()) / static_cast<double>(now_.count())
                                                    : 0.0);
    }
    for (std::size_t j = 0; j < jobs_.size(); ++j) {
        const JobState& js = jobs_[j];
        JobRecord rec;
        rec.index = static_cast<int>(j);
        if (js.root) {
            rec.root = TraceRef::entity(store_->entity(*js.root).kind, *js.root);
        }
        rec.arrival = js.arrival;
        rec.completion = js.completion;
        rec.useful_work = js.useful_work;
        rec.threads = js.threads.size();
        r.jobs.push_back(rec);
    }
    r.trace = trace_;
    return r;
}

RunResult run_simulation(const SimConfig& config)
{
    Simulation sim(config);
    return sim.run();
}

}  // namespace bubblesched
