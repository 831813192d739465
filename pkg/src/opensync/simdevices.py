"""Deterministic simulated devices.

Fixed-rate kinds (EEG, Gaze, GSR, BodyMotion) emit float32 channels on a
strict schedule: sample k is stamped ``origin + k/srate + jitter_k`` and the
emission thread paces itself to that schedule, catching up without skipping
when it falls behind, so the emitted count for a given duration is exact.

Irregular kinds (Marker, Keyboard, Mouse) emit seeded-Poisson string events.

All randomness comes from splitmix64 (Steele, Lea, Flood 2014), chosen so
the value sequence for a seed is reproducible anywhere; Gaussian jitter uses
the Box-Muller transform on top of it.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass

from .clocksync import local_clock
from .errors import InvalidConfig, InvalidPreset, StillRunning
from .protocol import StreamInfo
from .streaming import Outlet, create_outlet

FIXED_RATE_KINDS = ("EEG", "Gaze", "GSR", "BodyMotion")
IRREGULAR_KINDS = ("Marker", "Keyboard", "Mouse")

_STREAM_TYPE = {
    "EEG": "EEG",
    "Gaze": "Gaze",
    "GSR": "GSR",
    "BodyMotion": "BodyMotion",
    "Marker": "Markers",
    "Keyboard": "Keyboard",
    "Mouse": "Mouse",
}

_EVENT_WORDS = {
    "Marker": ["stim_on", "stim_off", "trial_start", "trial_end", "fixation"],
    "Keyboard": ["space", "left", "right", "up", "down", "return", "escape"],
    "Mouse": ["left_click", "right_click", "middle_click", "wheel_up", "wheel_down"],
}


class SplitMix64:
    """64-bit splitmix64 generator; identical output for a seed everywhere."""

    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self._state = seed & self._MASK
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & self._MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self._MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self._MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def gauss(self) -> float:
        if self._gauss_cache is not None:
            value, self._gauss_cache = self._gauss_cache, None
            return value
        u1 = ((self.next_u64() >> 11) + 1) * (1.0 / (1 << 53))  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def expovariate(self, rate: float) -> float:
        u1 = ((self.next_u64() >> 11) + 1) * (1.0 / (1 << 53))
        return -math.log(u1) / rate

    def choice(self, seq):
        return seq[self.next_u64() % len(seq)]


@dataclass(frozen=True)
class SimulatorConfig:
    kind: str
    preset: str | None = None
    nominal_srate: float = 0.0
    channel_count: int = 1
    seed: int = 0
    jitter_stddev: float = 0.0
    event_rate: float = 0.0

    def validate(self) -> None:
        if self.kind not in FIXED_RATE_KINDS + IRREGULAR_KINDS:
            raise InvalidConfig(f"unknown kind {self.kind!r}")
        if self.jitter_stddev < 0:
            raise InvalidConfig("jitter_stddev must be >= 0")
        if self.kind in FIXED_RATE_KINDS:
            if self.nominal_srate <= 0:
                raise InvalidConfig(f"{self.kind} needs nominal_srate > 0")
            if self.channel_count < 1:
                raise InvalidConfig("channel_count must be >= 1")
        else:
            if self.nominal_srate != 0:
                raise InvalidConfig(f"{self.kind} is irregular; nominal_srate must be 0")
            if self.event_rate <= 0:
                raise InvalidConfig(f"{self.kind} needs event_rate > 0")


# Device presets. Rates come from the device lines they imitate; channel
# counts are simulator choices (Kinect: 25 joints x 3 coordinates).
_PRESETS = {
    "unicorn":   {"kind": "EEG", "srates": (250.0,), "channels": (8,),
                  "default_channels": 8},
    "liveamp":   {"kind": "EEG", "srates": (250.0, 500.0, 1000.0),
                  "channels": (16, 32, 64), "default_channels": 32},
    "cyton":     {"kind": "EEG", "srates": (250.0,), "channels": (8, 16),
                  "default_channels": 8},
    "gazepoint": {"kind": "Gaze", "srates": (60.0,), "channels": (4,),
                  "default_channels": 4},
    "kinect":    {"kind": "BodyMotion", "srates": (30.0,), "channels": (75,),
                  "default_channels": 75},
    "ehealth":   {"kind": "GSR", "srates": (32.0,), "channels": (1,),
                  "default_channels": 1},
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_config(preset: str, *, srate: float | None = None,
                  channel_count: int | None = None, daisy: bool = False,
                  seed: int = 0, jitter_stddev: float = 0.0) -> SimulatorConfig:
    """Build a SimulatorConfig for a named device preset.

    Rejects rate/channel combinations the device cannot do; for the Cyton
    preset ``daisy=True`` selects the 16-channel build-out.
    """
    key = preset.lower()
    spec = _PRESETS.get(key)
    if spec is None:
        raise InvalidPreset(
            f"unknown preset {preset!r}; known: {', '.join(PRESET_NAMES)}")
    if key == "cyton" and channel_count is None:
        channel_count = 16 if daisy else 8
    if srate is None:
        srate = spec["srates"][0]
    if srate not in spec["srates"]:
        allowed = "{" + ", ".join(str(int(s)) for s in spec["srates"]) + "}"
        raise InvalidPreset(
            f"preset {preset!r} supports sampling rates {allowed}, got {srate:g}")
    if channel_count is None:
        channel_count = spec["default_channels"]
    if channel_count not in spec["channels"]:
        allowed = "{" + ", ".join(str(c) for c in spec["channels"]) + "}"
        raise InvalidPreset(
            f"preset {preset!r} supports channel counts {allowed}, got {channel_count}")
    return SimulatorConfig(kind=spec["kind"], preset=key, nominal_srate=srate,
                           channel_count=channel_count, seed=seed,
                           jitter_stddev=jitter_stddev)


def _f32(x: float) -> float:
    """Round to the nearest float32 so emitted values survive the wire."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


class Simulator:
    """One simulated device driving one outlet on its own thread."""

    def __init__(self, cfg: SimulatorConfig, *, discovery_port: int | None = None,
                 clock=local_clock, capacity: int | None = None,
                 time_origin: float | None = None):
        cfg.validate()
        if cfg.preset is not None and cfg.preset not in _PRESETS:
            raise InvalidPreset(f"unknown preset {cfg.preset!r}")
        self.cfg = cfg
        self._clock = clock
        self._time_origin = time_origin
        irregular = cfg.kind in IRREGULAR_KINDS
        name = f"Sim{cfg.preset.capitalize() if cfg.preset else cfg.kind}"
        info = StreamInfo(
            name=name,
            stream_type=_STREAM_TYPE[cfg.kind],
            channel_count=1 if irregular else cfg.channel_count,
            nominal_srate=0.0 if irregular else cfg.nominal_srate,
            channel_format="string" if irregular else "float32",
            source_id=f"{name.lower()}-{cfg.seed:x}",
        )
        self.outlet: Outlet = create_outlet(info, capacity,
                                            discovery_port=discovery_port,
                                            clock=clock)
        self.info = self.outlet.info
        self._thread: threading.Thread | None = None
        self._abort = threading.Event()
        self._emitted = 0
        self._first_ts: float | None = None
        self._last_ts: float | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self, duration: float | None = None) -> "Simulator":
        if self._thread is not None:
            raise InvalidConfig("simulator already started")
        self._thread = threading.Thread(
            target=self._run, args=(duration,), daemon=True,
            name=f"sim-{self.info.name}")
        self._thread.start()
        return self

    def wait(self, timeout: float | None = None) -> bool:
        """True once the emission thread has finished."""
        if self._thread is None:
            return True
        self._thread.join(timeout)
        return not self._thread.is_alive()

    def stop(self) -> None:
        """Abort emission early; idempotent."""
        self._abort.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def close(self) -> None:
        self.stop()
        self.outlet.close()

    def run_for(self, duration: float) -> "Simulator":
        """Emit the full schedule for duration seconds, blocking."""
        self.start(duration)
        self.wait()
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def emission_report(self) -> dict:
        """Exact count of pushed samples; only valid after emission stopped."""
        if self._thread is not None and self._thread.is_alive():
            raise StillRunning("simulator is still emitting")
        return {"emitted": self._emitted, "first_ts": self._first_ts,
                "last_ts": self._last_ts}

    # -- emission ------------------------------------------------------------

    def _push(self, values, timestamp: float) -> None:
        self.outlet.push_sample(values, timestamp)
        if self._first_ts is None:
            self._first_ts = timestamp
        self._last_ts = timestamp
        self._emitted += 1

    def _run(self, duration: float | None) -> None:
        started = self._clock()
        origin = started if self._time_origin is None else self._time_origin
        if self.cfg.kind in IRREGULAR_KINDS:
            self._run_events(started, origin, duration)
        else:
            self._run_fixed_rate(started, origin, duration)

    def _run_fixed_rate(self, started: float, origin: float,
                        duration: float | None) -> None:
        cfg = self.cfg
        rng = SplitMix64(cfg.seed)
        interval = 1.0 / cfg.nominal_srate
        freqs = [4.0 + 2.0 * c for c in range(cfg.channel_count)]
        k = 0
        while not self._abort.is_set():
            scheduled = k * interval
            if duration is not None and scheduled >= duration:
                return
            jitter = rng.gauss() * cfg.jitter_stddev if cfg.jitter_stddev > 0 else 0.0
            phase = scheduled  # device-time seconds
            values = tuple(
                _f32(40.0 * math.sin(2.0 * math.pi * freqs[c] * phase + 0.7 * c)
                     + 8.0 * (rng.uniform() - 0.5))
                for c in range(cfg.channel_count))
            # Pace to the schedule, but never skip a sample when behind.
            lag = started + scheduled - self._clock()
            if lag > 0:
                if self._abort.wait(lag):
                    return
            self._push(values, origin + scheduled + jitter)
            k += 1

    def _run_events(self, started: float, origin: float,
                    duration: float | None) -> None:
        cfg = self.cfg
        rng = SplitMix64(cfg.seed)
        words = _EVENT_WORDS[cfg.kind]
        elapsed = 0.0
        n = 0
        while not self._abort.is_set():
            elapsed += rng.expovariate(cfg.event_rate)
            if duration is not None and elapsed >= duration:
                return
            payload = f"{rng.choice(words)}_{n:04d}"
            lag = started + elapsed - self._clock()
            if lag > 0:
                if self._abort.wait(lag):
                    return
            self._push((payload,), origin + elapsed)
            n += 1


def spawn_simulator(cfg: SimulatorConfig, *, discovery_port: int | None = None,
                    clock=local_clock, capacity: int | None = None,
                    time_origin: float | None = None) -> Simulator:
    """Create the outlet for a simulated device (call start() to emit)."""
    return Simulator(cfg, discovery_port=discovery_port, clock=clock,
                     capacity=capacity, time_origin=time_origin)


def replay_event_schedule(cfg: SimulatorConfig, duration: float) -> list:
    """Replay the seeded event schedule without running anything.

    Returns the (elapsed_seconds, payload) pairs an irregular simulator will
    emit for this config and duration; used as the conservation oracle.
    """
    cfg.validate()
    if cfg.kind not in IRREGULAR_KINDS:
        raise InvalidConfig("replay_event_schedule is for irregular kinds")
    rng = SplitMix64(cfg.seed)
    words = _EVENT_WORDS[cfg.kind]
    out = []
    elapsed = 0.0
    n = 0
    while True:
        elapsed += rng.expovariate(cfg.event_rate)
        if elapsed >= duration:
            return out
        out.append((elapsed, f"{rng.choice(words)}_{n:04d}"))
        n += 1
