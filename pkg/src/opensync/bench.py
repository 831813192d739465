"""Latency-resolution benchmark: chunked recording of a reference stream
while a growing set of simulated devices runs alongside it.

The reference stream is cut into chunks on its own timestamp axis: a chunk
closes at the first sample whose elapsed time since the chunk base reaches
the threshold (the near-equality window ``|elapsed - t_th| < epsilon`` is
checked first, with ``elapsed >= t_th`` as the trigger that actually fires,
since exact equality has measure zero), and the base then advances by whole
thresholds so chunk boundaries tile the stream. Each chunk yields the
average per-sample lag

    lag = elapsed / n - 1 / nominal_rate

and the per-case lag samples are compared with Levene's variance test and a
one-way ANOVA. Because the chunks are measured on producer timestamps, a
seeded zero-jitter run produces bit-identical records every time.

Each flushed chunk is also appended to a scratch file so the disk round
trip happens once per chunk, like the recording pipeline this measures.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
import threading
from dataclasses import dataclass

from scipy.special import betainc

from .errors import (
    ConnectionLost,
    DegenerateInput,
    EmptyInput,
    InvalidInput,
    SimulatorFailure,
)
from .simdevices import SimulatorConfig, Simulator, preset_config, spawn_simulator
from .streaming import create_inlet
from .xdf import encode_samples_content

log = logging.getLogger("opensync.bench")

DEFAULT_T_TH = 0.5
DEFAULT_EPSILON = 1e-6
DEFAULT_REFERENCE_SRATE = 250.0
DEFAULT_JITTER = 200e-6

# Simulated device timestamps start here so negative jitter at sample zero
# cannot produce a negative timestamp.
_TIME_ORIGIN = 10.0


@dataclass(frozen=True)
class LatencyRecord:
    """One chunk of the reference stream."""

    case_id: int
    chunk_index: int
    sample_count: int
    elapsed: float
    lag: float


@dataclass(frozen=True)
class SummaryStats:
    n: int
    rms: float
    sd: float
    se: float
    min: float
    max: float


@dataclass(frozen=True)
class FTestResult:
    f: float
    df1: int
    df2: int
    p: float


def compute_time_lag(elapsed: float, n: int, srate_nom: float) -> float:
    """Average per-sample recording lag of one chunk."""
    if n < 1:
        raise InvalidInput(f"sample count must be >= 1, got {n}")
    if not srate_nom > 0:
        raise InvalidInput(f"nominal rate must be > 0, got {srate_nom!r}")
    if not elapsed > 0:
        raise InvalidInput(f"elapsed time must be > 0, got {elapsed!r}")
    return elapsed / n - 1.0 / srate_nom


def summarize(values) -> SummaryStats:
    """Root-mean-square, sample SD, standard error, min, max."""
    values = list(values)
    if not values:
        raise EmptyInput("no values to summarize")
    n = len(values)
    rms = math.sqrt(math.fsum(v * v for v in values) / n)
    mean = math.fsum(values) / n
    sd = (math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
          if n > 1 else 0.0)
    return SummaryStats(n=n, rms=rms, sd=sd, se=sd / math.sqrt(n),
                        min=min(values), max=max(values))


def f_right_tail(f_stat: float, df1: int, df2: int) -> float:
    """P(F >= f_stat) via the regularized incomplete beta function."""
    if not (math.isfinite(f_stat) and f_stat >= 0):
        raise InvalidInput(f"F statistic must be finite and >= 0, got {f_stat!r}")
    if df1 < 1 or df2 < 1:
        raise InvalidInput("degrees of freedom must be >= 1")
    x = df2 / (df2 + df1 * f_stat)
    return float(betainc(df2 / 2.0, df1 / 2.0, x))


def _check_groups(groups) -> list:
    groups = [list(map(float, g)) for g in groups]
    if len(groups) < 2:
        raise InvalidInput("need at least two groups")
    if any(len(g) < 2 for g in groups):
        raise InvalidInput("every group needs at least two values")
    return groups


def anova_oneway(groups) -> FTestResult:
    """Fisher's one-way ANOVA across the groups."""
    groups = _check_groups(groups)
    k = len(groups)
    n_total = sum(len(g) for g in groups)
    means = [math.fsum(g) / len(g) for g in groups]
    grand = math.fsum(math.fsum(g) for g in groups) / n_total
    ss_between = math.fsum(len(g) * (m - grand) ** 2
                           for g, m in zip(groups, means))
    ss_within = math.fsum(math.fsum((x - m) ** 2 for x in g)
                          for g, m in zip(groups, means))
    df1 = k - 1
    df2 = n_total - k
    if ss_within == 0.0:
        raise DegenerateInput("zero within-group variance, F undefined")
    f = (ss_between / df1) / (ss_within / df2)
    return FTestResult(f=f, df1=df1, df2=df2, p=f_right_tail(f, df1, df2))


def levene_test(groups) -> FTestResult:
    """Levene's homogeneity-of-variance test with group-mean centering."""
    groups = _check_groups(groups)
    deviations = []
    for g in groups:
        mean = math.fsum(g) / len(g)
        deviations.append([abs(x - mean) for x in g])
    if all(d == 0.0 for g in deviations for d in g):
        raise DegenerateInput("all absolute deviations are zero")
    k = len(deviations)
    n_total = sum(len(g) for g in deviations)
    df1, df2 = k - 1, n_total - k
    means = [math.fsum(g) / len(g) for g in deviations]
    grand = math.fsum(math.fsum(g) for g in deviations) / n_total
    ss_between = math.fsum(len(g) * (m - grand) ** 2
                           for g, m in zip(deviations, means))
    if ss_between == 0.0:
        # Identical deviation profiles (for example exact translates of one
        # another); the statistic is exactly zero even when the deviations
        # carry no within-group spread.
        return FTestResult(f=0.0, df1=df1, df2=df2, p=1.0)
    return anova_oneway(deviations)


# --- chunk trigger ----------------------------------------------------------

class ChunkTrigger:
    """Cuts a stream of timestamps into threshold-sized chunks.

    Feed timestamps in stream order; a LatencyRecord comes back for each
    chunk that closes. The closing sample is part of its chunk, and the
    chunk base advances by whole thresholds so boundaries stay aligned to
    the first sample's timestamp. Pure state machine, no clock reads.
    """

    def __init__(self, case_id: int, srate_nom: float,
                 t_th: float = DEFAULT_T_TH, epsilon: float = DEFAULT_EPSILON):
        if t_th <= 0 or epsilon <= 0:
            raise InvalidInput("t_th and epsilon must be positive")
        self.case_id = case_id
        self.srate_nom = srate_nom
        self.t_th = t_th
        self.epsilon = epsilon
        self._base: float | None = None
        self._n = 0
        self._index = 0

    def feed(self, timestamp: float):
        if self._base is None:
            self._base = timestamp
        self._n += 1
        elapsed = timestamp - self._base
        if abs(elapsed - self.t_th) < self.epsilon or elapsed >= self.t_th:
            record = LatencyRecord(
                case_id=self.case_id, chunk_index=self._index,
                sample_count=self._n, elapsed=elapsed,
                lag=compute_time_lag(elapsed, self._n, self.srate_nom))
            self._index += 1
            self._n = 0
            self._base += self.t_th * max(1, math.floor(elapsed / self.t_th))
            return record
        return None


# --- cases -------------------------------------------------------------------

def case_configs(case_id: int, seed: int = 0,
                 jitter_stddev: float = DEFAULT_JITTER):
    """(reference config, load configs) for cases 1-4.

    Case 1 runs the 250 Hz reference EEG alone; each later case adds
    devices: a second 250 Hz EEG, then a 60 Hz gaze tracker, then a 30 Hz
    body-motion stream plus mouse and keyboard event streams.
    """
    if case_id not in (1, 2, 3, 4):
        raise InvalidInput(f"case_id must be 1..4, got {case_id}")
    reference = preset_config("unicorn", seed=seed, jitter_stddev=jitter_stddev)
    load = []
    if case_id >= 2:
        load.append(preset_config("cyton", seed=seed + 101,
                                  jitter_stddev=jitter_stddev))
    if case_id >= 3:
        load.append(preset_config("gazepoint", seed=seed + 202,
                                  jitter_stddev=jitter_stddev))
    if case_id >= 4:
        load.append(preset_config("kinect", seed=seed + 303,
                                  jitter_stddev=jitter_stddev))
        load.append(SimulatorConfig(kind="Mouse", seed=seed + 404,
                                    event_rate=5.0))
        load.append(SimulatorConfig(kind="Keyboard", seed=seed + 505,
                                    event_rate=2.0))
    return reference, load


class _Drain:
    """Consumes a load stream so its transport actually runs."""

    def __init__(self, info, discovery_port):
        self.inlet = create_inlet(info, discovery_port=discovery_port)
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"drain-{info.name}")
        self._thread.start()

    def _run(self):
        while True:
            try:
                got = self.inlet.pull_chunk(4096, timeout=0.1)
            except ConnectionLost:
                return
            if not got and not self.inlet.alive:
                return

    def close(self):
        self.inlet.close()


def run_case(case_id: int, duration: float, t_th: float = DEFAULT_T_TH,
             epsilon: float = DEFAULT_EPSILON,
             reference_srate: float = DEFAULT_REFERENCE_SRATE, *,
             seed: int = 0, jitter_stddev: float = DEFAULT_JITTER,
             discovery_port: int | None = None,
             scratch_dir=None) -> list:
    """Run one case over loopback and return its LatencyRecords."""
    if duration < 2 * t_th:
        raise InvalidInput("duration must cover at least two chunks")
    ref_cfg, load_cfgs = case_configs(case_id, seed, jitter_stddev)
    if reference_srate != ref_cfg.nominal_srate:
        ref_cfg = SimulatorConfig(
            kind=ref_cfg.kind, preset=None, nominal_srate=reference_srate,
            channel_count=ref_cfg.channel_count, seed=ref_cfg.seed,
            jitter_stddev=ref_cfg.jitter_stddev)

    sims: list[Simulator] = []
    drains: list[_Drain] = []
    records: list[LatencyRecord] = []
    # Emit a hair past the nominal duration so the final chunk boundary,
    # which lands exactly at `duration` on the timestamp axis, is reached.
    ref_duration = duration + 4.0 / reference_srate
    scratch = tempfile.NamedTemporaryFile(
        prefix=f"bench-case{case_id}-", suffix=".chunks", delete=False,
        dir=scratch_dir)
    scratch_path = scratch.name
    scratch.close()
    try:
        try:
            reference = spawn_simulator(ref_cfg, discovery_port=discovery_port,
                                        time_origin=_TIME_ORIGIN,
                                        capacity=max(int(ref_duration * reference_srate) + 16, 1000))
            sims.append(reference)
            for cfg in load_cfgs:
                sims.append(spawn_simulator(cfg, discovery_port=discovery_port,
                                            time_origin=_TIME_ORIGIN))
        except Exception as exc:
            raise SimulatorFailure(f"case {case_id}: {exc}") from exc

        ref_inlet = create_inlet(reference.info, discovery_port=discovery_port)
        for sim in sims[1:]:
            drains.append(_Drain(sim.info, discovery_port))

        trigger = ChunkTrigger(case_id, reference_srate, t_th, epsilon)
        chunk_samples = []
        reference.start(ref_duration)
        for sim in sims[1:]:
            sim.start(duration)

        def consume():
            nonlocal chunk_samples
            while True:
                samples = ref_inlet.pull_chunk(1024, timeout=0.05)
                if not samples:
                    return False
                for sample in samples:
                    chunk_samples.append(sample)
                    record = trigger.feed(sample.timestamp)
                    if record is not None:
                        records.append(record)
                        _append_chunk_to_disk(scratch_path, record,
                                              chunk_samples, reference.info)
                        chunk_samples = []

        try:
            while True:
                consume()
                if reference.wait(timeout=0.0):
                    break
            reference.close()  # flushes the ring, then closes the session
            while True:
                consume()
        except ConnectionLost:
            pass  # reference outlet closed after draining: normal end
        ref_inlet.close()
        return records
    finally:
        for drain in drains:
            drain.close()
        for sim in sims:
            sim.close()
        try:
            os.unlink(scratch_path)
        except OSError:
            pass


def _append_chunk_to_disk(path, record, samples, info) -> None:
    # One open-append-close round trip per chunk, mirroring per-chunk saves.
    payload = encode_samples_content(1, samples, info.channel_format,
                                     info.nominal_srate)
    with open(path, "ab") as fh:
        fh.write(len(payload).to_bytes(4, "little"))
        fh.write(payload)


def run_benchmark(cases: int = 4, duration: float = 60.0,
                  t_th: float = DEFAULT_T_TH, epsilon: float = DEFAULT_EPSILON, *,
                  seed: int = 0, jitter_stddev: float = DEFAULT_JITTER,
                  discovery_port: int | None = None, scratch_dir=None) -> dict:
    """Run cases 1..cases sequentially and collect the cross-case analysis."""
    if cases < 1 or cases > 4:
        raise InvalidInput("cases must be 1..4")
    records = {}
    for case_id in range(1, cases + 1):
        log.info("benchmark case %d: %.0f s", case_id, duration)
        records[case_id] = run_case(case_id, duration, t_th, epsilon,
                                    seed=seed, jitter_stddev=jitter_stddev,
                                    discovery_port=discovery_port,
                                    scratch_dir=scratch_dir)
    summaries = {cid: summarize([r.lag for r in recs])
                 for cid, recs in records.items()}
    analysis = {}
    if cases >= 2:
        groups = [[r.lag for r in records[cid]] for cid in sorted(records)]
        try:
            analysis["levene"] = levene_test(groups)
            analysis["anova"] = anova_oneway(groups)
        except DegenerateInput as exc:
            log.warning("cross-case tests degenerate: %s", exc)
    return {"records": records, "summaries": summaries, "analysis": analysis}


# --- CSV output ---------------------------------------------------------------

def write_records_csv(path, records_by_case) -> None:
    """case,chunk_index,N,dt_s,s_us rows; lag reported in microseconds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "chunk_index", "N", "dt_s", "s_us"])
        for case_id in sorted(records_by_case):
            for r in records_by_case[case_id]:
                writer.writerow([case_id, r.chunk_index, r.sample_count,
                                 f"{r.elapsed:.9f}", f"{r.lag * 1e6:.3f}"])


def write_summary_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "n", "rms_us", "sd_us", "se_us",
                         "min_us", "max_us"])
        for case_id in sorted(summaries):
            s = summaries[case_id]
            writer.writerow([case_id, s.n, f"{s.rms * 1e6:.3f}",
                             f"{s.sd * 1e6:.3f}", f"{s.se * 1e6:.3f}",
                             f"{s.min * 1e6:.3f}", f"{s.max * 1e6:.3f}"])


def analysis_lines(analysis) -> list:
    out = []
    for name in ("levene", "anova"):
        result = analysis.get(name)
        if result is not None:
            label = "Levene" if name == "levene" else "ANOVA"
            out.append(f"{label} F={result.f:.4f}, df=({result.df1}, "
                       f"{result.df2}), p={result.p:.4f}")
    return out
