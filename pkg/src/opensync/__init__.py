"""Multimodal measurement streaming with synchronized XDF recording.

Producers publish timestamped sample streams over TCP and answer discovery
and time-sync datagrams over UDP; a recorder resolves them, reconciles
clocks, and writes everything into one .xdf file. Simulated devices and a
latency benchmark harness ship alongside the library.
"""

from . import errors
from .bench import (
    ChunkTrigger,
    FTestResult,
    LatencyRecord,
    SummaryStats,
    anova_oneway,
    compute_time_lag,
    f_right_tail,
    levene_test,
    run_benchmark,
    run_case,
    summarize,
)
from .clocksync import (
    ClockEstimate,
    ClockMeasurement,
    estimate_offset,
    local_clock,
    measure_offset,
)
from .protocol import (
    DEFAULT_DISCOVERY_PORT,
    ResolveQuery,
    Sample,
    StreamInfo,
    match_query,
)
from .recorder import RecordingSession, record_data
from .simdevices import SimulatorConfig, preset_config, spawn_simulator
from .streaming import Inlet, Outlet, create_inlet, create_outlet, resolve_streams
from .xdf import LoadedStream, XdfWriter, load_xdf, read_chunks

__version__ = "0.1.0"

__all__ = [
    "ChunkTrigger",
    "ClockEstimate",
    "ClockMeasurement",
    "DEFAULT_DISCOVERY_PORT",
    "FTestResult",
    "Inlet",
    "LatencyRecord",
    "LoadedStream",
    "Outlet",
    "RecordingSession",
    "ResolveQuery",
    "Sample",
    "SimulatorConfig",
    "StreamInfo",
    "SummaryStats",
    "XdfWriter",
    "anova_oneway",
    "compute_time_lag",
    "create_inlet",
    "create_outlet",
    "errors",
    "estimate_offset",
    "f_right_tail",
    "levene_test",
    "load_xdf",
    "local_clock",
    "match_query",
    "measure_offset",
    "preset_config",
    "read_chunks",
    "record_data",
    "resolve_streams",
    "run_benchmark",
    "run_case",
    "spawn_simulator",
    "summarize",
]
