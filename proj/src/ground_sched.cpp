#include "bubblesched/ground_sched.hpp"

#include <algorithm>

namespace bubblesched {

namespace {

void require_quantum_multiple(Duration d, Duration quantum, const std::string& what)
{
    if (d <= Duration{0} || d % quantum != Duration{0}) {
        throw ConfigError(what + " (" + format_millis(d) + " ms) must be a positive multiple of the quantum (" +
                          format_millis(quantum) + " ms)");
    }
}

}  // namespace

GroundScheduler::GroundScheduler(EntityStore& store, Duration quantum)
    : store_(store), quantum_(quantum), running_(store.topology().cpu_count())
{
    if (quantum <= Duration{0}) {
        throw ConfigError("quantum must be positive");
    }
}

void GroundScheduler::install_strategy(Strategy strategy)
{
    if (strategy_) {
        throw ApiError("a strategy is already installed ('" + strategy_->name + "')");
    }
    if (started_) {
        throw ApiError("cannot install a strategy once the simulation has started");
    }
    if (strategy.bubble_timeslice) {
        require_quantum_multiple(*strategy.bubble_timeslice, quantum_, "bubble timeslice");
    }
    for (const Daemon& d : strategy.daemons) {
        require_quantum_multiple(d.period, quantum_, "period of daemon '" + d.name + "'");
        if (!d.body) {
            throw ApiError("daemon '" + d.name + "' has no body");
        }
    }
    strategy_ = std::move(strategy);
    if (strategy_->on_install) {
        strategy_->on_install(*this);
    }
}

void GroundScheduler::place_top_level(EntityId e)
{
    HolderRef where = HolderRef::runqueue(topology().root_runqueue());
    if (strategy_ && strategy_->initial_placement) {
        where = strategy_->initial_placement(*this, e);
    }
    ActorId setup = ActorId::external();
    {
        LockSet lock(store_, setup, {where});
        store_.put_entity(setup, e, where);
    }
    if (strategy_ && strategy_->bubble_timeslice && store_.entity(e).is_bubble()) {
        ticks_.push_back({e, now() + *strategy_->bubble_timeslice});
    }
}

std::optional<EntityId> GroundScheduler::oldest_ready(HolderRef holder, const std::set<EntityId>& visited) const
{
    std::optional<EntityId> best;
    std::uint64_t best_seq = 0;
    auto visit = [&](auto&& self, HolderRef h) -> void {
        for (EntityId e : store_.holder_entities(h)) {
            const Entity& ent = store_.entity(e);
            if (ent.is_bubble()) {
                if (!visited.contains(e)) {
                    self(self, HolderRef::bubble(e));
                }
                continue;
            }
            if (store_.thread(e).state == ThreadState::ready && (!best || ent.enqueue_seq < best_seq)) {
                best = e;
                best_seq = ent.enqueue_seq;
            }
        }
    };
    visit(visit, holder);
    return best;
}

SchedDecision GroundScheduler::default_bubble_schedule(EntityId bubble, CpuId, std::set<EntityId>& visited) const
{
    if (auto t = oldest_ready(HolderRef::bubble(bubble), visited)) {
        return SchedDecision::run(*t);
    }
    visited.insert(bubble);
    return SchedDecision::retry();
}

SchedDecision GroundScheduler::scan_runqueue(RunqueueId rq, CpuId cpu, std::set<EntityId>& visited, bool& restart)
{
    HolderRef holder = HolderRef::runqueue(rq);
    if (!strategy_ || !strategy_->bubble_schedule) {
        if (auto t = oldest_ready(holder, visited)) {
            return SchedDecision::run(*t);
        }
        return SchedDecision::idle();
    }
    // Hooks may reorder the runqueue, so walk a copy.
    std::vector<EntityId> entries(store_.holder_entities(holder).begin(), store_.holder_entities(holder).end());
    for (EntityId e : entries) {
        const Entity& ent = store_.entity(e);
        if (ent.holder != holder) {
            continue;
        }
        if (ent.is_thread()) {
            return SchedDecision::run(e);
        }
        if (visited.contains(e)) {
            continue;
        }
        SchedDecision d = strategy_->bubble_schedule(*this, e, cpu);
        if (d.is_run()) {
            return d;
        }
        if (d.is_retry()) {
            restart = true;
            return SchedDecision::idle();
        }
        visited.insert(e);
    }
    return SchedDecision::idle();
}

SchedDecision GroundScheduler::schedule_next(CpuId cpu)
{
    if (!topology().is_valid(cpu)) {
        throw ApiError("schedule_next: invalid cpu " + std::to_string(cpu.value()));
    }
    const std::vector<RunqueueId> chain = topology().runqueues_spanning(cpu);
    const std::size_t limit = chain.size() * (store_.entity_count() + 1);
    std::set<EntityId> visited;
    for (std::size_t attempt = 0;; ++attempt) {
        bool restart = false;
        for (RunqueueId rq : chain) {
            SchedDecision d = scan_runqueue(rq, cpu, visited, restart);
            if (d.is_run()) {
                return d;
            }
            if (restart) {
                break;
            }
        }
        if (!restart || attempt >= limit) {
            return SchedDecision::idle();
        }
        ++rescans_;
    }
}

std::optional<EntityId> GroundScheduler::dispatch(CpuId cpu)
{
    if (running_.at(cpu.value())) {
        throw ApiError("dispatch: cpu" + std::to_string(cpu.value()) + " is busy");
    }
    SchedDecision d = schedule_next(cpu);
    if (d.is_idle() && strategy_ && strategy_->on_idle) {
        SchedDecision s = strategy_->on_idle(*this, cpu);
        if (s.is_run()) {
            d = s;
        } else if (s.is_retry()) {
            d = schedule_next(cpu);
        }
    }
    if (!d.is_run()) {
        return std::nullopt;
    }
    run_thread(cpu, d.thread);
    return d.thread;
}

void GroundScheduler::run_thread(CpuId cpu, EntityId thread)
{
    if (running_.at(cpu.value())) {
        throw ApiError("run_thread: cpu" + std::to_string(cpu.value()) + " is busy");
    }
    const Entity& ent = store_.entity(thread);
    if (!ent.is_thread() || !ent.holder) {
        throw ApiError("run_thread: " + ent.name + " is not a queued thread");
    }
    HolderRef from = *ent.holder;
    ActorId self = ActorId::cpu(cpu);
    {
        LockSet lock(store_, self, {from});
        store_.get_entity(self, thread);
        store_.mark_running(thread, cpu, from);
        store_.emit(EventKind::ContextSwitchIn, TraceRef::thread(thread), TraceRef::cpu(cpu),
                    "from=" + to_string(TraceRef::holder(from)));
    }
    running_[cpu.value()] = thread;
}

void GroundScheduler::preempt(CpuId cpu)
{
    auto t = running_.at(cpu.value());
    if (!t) {
        return;
    }
    store_.emit(EventKind::ContextSwitchOut, TraceRef::thread(*t), TraceRef::cpu(cpu), "reason=preempt");
    store_.mark_stopped(*t, ThreadState::ready);
    running_[cpu.value()].reset();
    HolderRef back = store_.thread(*t).return_holder.value_or(HolderRef::runqueue(topology().root_runqueue()));
    ActorId self = ActorId::cpu(cpu);
    LockSet lock(store_, self, {back});
    store_.put_entity(self, *t, back);
}

EntityId GroundScheduler::switch_out(CpuId cpu, ThreadState new_state, std::string_view reason)
{
    auto t = running_.at(cpu.value());
    if (!t) {
        throw ApiError("switch_out: cpu" + std::to_string(cpu.value()) + " is idle");
    }
    store_.emit(EventKind::ContextSwitchOut, TraceRef::thread(*t), TraceRef::cpu(cpu),
                "reason=" + std::string(reason));
    store_.mark_stopped(*t, new_state);
    running_[cpu.value()].reset();
    if (new_state == ThreadState::sleeping) {
        store_.emit(EventKind::ThreadSleep, TraceRef::thread(*t), TraceRef::none());
    } else if (new_state == ThreadState::dead) {
        store_.emit(EventKind::ThreadDeath, TraceRef::thread(*t), TraceRef::none());
    }
    return *t;
}

void GroundScheduler::wake(EntityId thread)
{
    store_.mark_woken(thread);
    HolderRef back = store_.thread(thread).return_holder.value_or(HolderRef::runqueue(topology().root_runqueue()));
    ActorId timer = ActorId::timer();
    {
        LockSet lock(store_, timer, {back});
        store_.put_entity(timer, thread, back, EventKind::ThreadWake);
    }
    if (strategy_ && strategy_->on_wake) {
        strategy_->on_wake(*this, thread);
    }
}

void GroundScheduler::charge_running()
{
    for (const auto& t : running_) {
        if (t) {
            store_.charge(*t, quantum_);
        }
    }
}

void GroundScheduler::on_tick(Duration now)
{
    store_.set_clock(now);
    if (!strategy_) {
        return;
    }
    ticks_.erase(std::remove_if(ticks_.begin(), ticks_.end(),
                                [&](const ArmedTick& t) { return !store_.is_alive(t.bubble); }),
                 ticks_.end());
    if (strategy_->bubble_tick && strategy_->bubble_timeslice) {
        for (std::size_t i = 0; i < ticks_.size(); ++i) {
            if (ticks_[i].due <= now) {
                ticks_[i].due += *strategy_->bubble_timeslice;
                strategy_->bubble_tick(*this, ticks_[i].bubble);
            }
        }
    }
    if (now <= Duration{0}) {
        return;
    }
    for (std::size_t i = 0; i < strategy_->daemons.size(); ++i) {
        const Daemon& d = strategy_->daemons[i];
        if (now % d.period == Duration{0}) {
            d.body(*this, ActorId::daemon(static_cast<std::uint32_t>(i)));
        }
    }
}

}  // namespace bubblesched
