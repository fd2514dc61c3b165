#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bubblesched {

/// Simulated time. Everything in the simulator is exact integer nanoseconds.
using Duration = std::chrono::nanoseconds;

/// Parses a decimal count of simulated milliseconds ("0.2", "600", "1.25")
/// into an exact duration. Throws ConfigError on malformed input or on
/// precision finer than one nanosecond.
Duration parse_millis(std::string_view text);

/// Formats a duration as milliseconds with six decimals ("0.200000").
std::string format_millis(Duration d);

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration, file content or flag value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Entity/holder API used outside its preconditions.
class ApiError : public Error {
public:
    using Error::Error;
};

class LockError : public ApiError {
public:
    using ApiError::ApiError;
};

/// Malformed trace content.
class TraceError : public Error {
public:
    using Error::Error;
};

template <class Tag>
class Id {
public:
    constexpr Id() = default;
    constexpr explicit Id(std::uint32_t value) : value_(value) {}

    constexpr std::uint32_t value() const { return value_; }

    friend constexpr auto operator<=>(Id, Id) = default;

private:
    std::uint32_t value_ = 0;
};

using NodeId = Id<struct NodeTag>;
using RunqueueId = Id<struct RunqueueTag>;
using CpuId = Id<struct CpuTag>;
using EntityId = Id<struct EntityTag>;

enum class EntityKind : std::uint8_t { thread, bubble };

/// A scheduling holder: either a runqueue or a bubble.
class HolderRef {
public:
    enum class Kind : std::uint8_t { runqueue, bubble };

    static constexpr HolderRef runqueue(RunqueueId rq) { return {Kind::runqueue, rq.value()}; }
    static constexpr HolderRef bubble(EntityId b) { return {Kind::bubble, b.value()}; }

    constexpr Kind kind() const { return kind_; }
    constexpr bool is_runqueue() const { return kind_ == Kind::runqueue; }
    constexpr bool is_bubble() const { return kind_ == Kind::bubble; }
    constexpr RunqueueId as_runqueue() const { return RunqueueId{index_}; }
    constexpr EntityId as_bubble() const { return EntityId{index_}; }
    constexpr std::uint32_t index() const { return index_; }

    friend constexpr auto operator<=>(HolderRef, HolderRef) = default;

private:
    constexpr HolderRef(Kind kind, std::uint32_t index) : kind_(kind), index_(index) {}

    Kind kind_;
    std::uint32_t index_;
};

/// A simulated actor: something that can hold locks and act on holders.
struct ActorId {
    enum class Kind : std::uint8_t { cpu, daemon, timer, external };

    Kind kind = Kind::external;
    std::uint32_t index = 0;

    static constexpr ActorId cpu(CpuId c) { return {Kind::cpu, c.value()}; }
    static constexpr ActorId daemon(std::uint32_t i) { return {Kind::daemon, i}; }
    static constexpr ActorId timer() { return {Kind::timer, 0}; }
    static constexpr ActorId external(std::uint32_t i = 0) { return {Kind::external, i}; }

    friend constexpr auto operator<=>(ActorId, ActorId) = default;
};

std::string to_string(ActorId actor);

}  // namespace bubblesched
