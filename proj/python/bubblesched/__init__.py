"""Deterministic simulator for hierarchical bubble scheduling."""

from ._core import (
    ApiError,
    ConfigError,
    Error,
    RunResult,
    TraceError,
    check,
    fig1_burst,
    gang_fairness,
    replay_cpu_ms,
    run,
    steal_drain,
    top,
)

__all__ = [
    "ApiError",
    "ConfigError",
    "Error",
    "RunResult",
    "TraceError",
    "check",
    "fig1_burst",
    "gang_fairness",
    "replay_cpu_ms",
    "run",
    "steal_drain",
    "top",
]
