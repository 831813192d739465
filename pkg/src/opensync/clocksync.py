"""Clock-offset estimation between the recorder host and producer hosts.

One four-timestamp UDP exchange gives an offset and a round-trip time; the
estimator keeps a sliding window of exchanges and picks the median offset of
the lowest-RTT measurements, which is robust against transient congestion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .errors import InvalidExchange, NoMeasurements

MEASUREMENT_INTERVAL = 5.0
HISTORY_WINDOW = 60.0
SELECT_LOWEST_RTT = 5


def local_clock() -> float:
    """Monotonic seconds with sub-microsecond resolution, arbitrary epoch."""
    return time.perf_counter()


@dataclass(frozen=True)
class ClockMeasurement:
    """One exchange: t0/t3 on the client clock, t1/t2 on the server clock."""

    t0: float
    t1: float
    t2: float
    t3: float
    offset: float
    rtt: float


@dataclass(frozen=True)
class ClockEstimate:
    offset: float
    uncertainty: float
    at_time: float


def measure_offset(exchange) -> ClockMeasurement:
    """Compute offset = ((t1-t0)+(t2-t3))/2 and rtt = (t3-t0)-(t2-t1).

    Offset is how far the server clock is ahead of the client clock,
    assuming symmetric network delays; the estimation error is bounded by
    rtt/2 for arbitrary delay splits.
    """
    t0, t1, t2, t3 = exchange
    for t in (t0, t1, t2, t3):
        if not math.isfinite(t):
            raise InvalidExchange(f"non-finite timestamp {t!r}")
    offset = ((t1 - t0) + (t2 - t3)) / 2.0
    rtt = (t3 - t0) - (t2 - t1)
    if rtt < 0:
        raise InvalidExchange(f"negative round-trip time {rtt!r} (clock step?)")
    return ClockMeasurement(t0, t1, t2, t3, offset, rtt)


def estimate_offset(history, window: float = HISTORY_WINDOW,
                    now: float | None = None) -> ClockEstimate:
    """Median offset of the 5 lowest-RTT measurements newer than window.

    With an even candidate count the lower median is used so the estimate is
    always one actual measurement, whose rtt/2 becomes the uncertainty.
    Independent of input ordering.
    """
    if now is None:
        now = local_clock()
    recent = [m for m in history if m.t3 >= now - window]
    if not recent:
        raise NoMeasurements(f"no clock measurements in the last {window} s")
    recent.sort(key=lambda m: (m.rtt, m.offset, m.t0, m.t1, m.t2, m.t3))
    best = recent[:SELECT_LOWEST_RTT]
    best.sort(key=lambda m: (m.offset, m.rtt, m.t0, m.t1, m.t2, m.t3))
    pick = best[(len(best) - 1) // 2]
    return ClockEstimate(offset=pick.offset, uncertainty=pick.rtt / 2.0, at_time=now)
