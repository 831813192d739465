"""Command-line front end.

Subcommands: simulate (run one simulated device), list (discover live
streams), record (write a session to .xdf), inspect (validate and summarize
a file), bench (latency benchmark with CSV, analysis lines, and figures).

Exit codes: 0 success, 1 runtime failure, 2 usage error. Tables and results
go to stdout, logs to stderr. OPENSYNC_PORT overrides the discovery port.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import bench as bench_mod
from . import xdf
from .errors import (
    InvalidConfig,
    InvalidInput,
    InvalidPreset,
    InvalidQuery,
    OpenSyncError,
    TruncatedChunk,
)
from .protocol import DEFAULT_DISCOVERY_PORT, ResolveQuery
from .recorder import record_data
from .simdevices import (
    IRREGULAR_KINDS,
    FIXED_RATE_KINDS,
    PRESET_NAMES,
    SimulatorConfig,
    preset_config,
    spawn_simulator,
)
from .streaming import resolve_streams

log = logging.getLogger("opensync.cli")

USAGE_ERROR = 2


def _default_port() -> int:
    value = os.environ.get("OPENSYNC_PORT")
    if value:
        try:
            return int(value)
        except ValueError:
            log.warning("ignoring bad OPENSYNC_PORT=%r", value)
    return DEFAULT_DISCOVERY_PORT


def _add_port(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--port", type=int, default=None,
                        help="discovery UDP port (default: OPENSYNC_PORT "
                             f"or {DEFAULT_DISCOVERY_PORT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opensync",
        description="Stream, discover, record, and benchmark measurement "
                    "streams over the local network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulated device until "
                                        "interrupted (or --duration)")
    p.add_argument("--preset", choices=PRESET_NAMES,
                   help="device preset (sets kind, rate, channels)")
    p.add_argument("--kind", choices=FIXED_RATE_KINDS + IRREGULAR_KINDS,
                   help="generic stream kind when no preset is used")
    p.add_argument("--srate", type=float, default=None,
                   help="sampling rate in Hz (preset default, or 250 with "
                        "--kind)")
    p.add_argument("--channels", type=int, default=None,
                   help="channel count (preset default, or 8 with --kind)")
    p.add_argument("--daisy", action="store_true",
                   help="cyton preset: 16-channel daisy build-out")
    p.add_argument("--event-rate", type=float, default=2.0,
                   help="mean events/s for irregular kinds (default 2)")
    p.add_argument("--seed", type=int, default=0,
                   help="generator seed (default 0)")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="timestamp jitter stddev in seconds (default 0)")
    p.add_argument("--duration", type=float, default=None,
                   help="stop after this many seconds (default: run forever)")
    _add_port(p)

    p = sub.add_parser("list", help="discover live streams and print a table")
    p.add_argument("--timeout", type=float, default=1.0,
                   help="seconds to wait for announcements (default 1)")
    p.add_argument("--resolve", default="", metavar="QUERY",
                   help='filter, e.g. "type=EEG" or "type=EEG&name=SimUnicorn"')
    _add_port(p)

    p = sub.add_parser("record", help="record matching streams to an .xdf file")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--resolve", action="append", default=[], metavar="QUERY",
                   help="repeatable; default records every visible stream")
    p.add_argument("--duration", type=float, default=None,
                   help="seconds to record (default: until interrupted)")
    p.add_argument("--resolve-timeout", type=float, default=2.0,
                   help="seconds to wait for discovery (default 2)")
    p.add_argument("--t-th", type=float, default=0.5,
                   help="chunk threshold seconds (default 0.5)")
    _add_port(p)

    p = sub.add_parser("inspect", help="validate an .xdf file and summarize it")
    p.add_argument("path")

    p = sub.add_parser("bench", help="run the latency benchmark cases")
    p.add_argument("--cases", type=int, default=4, choices=(1, 2, 3, 4),
                   help="run cases 1..N (default 4)")
    p.add_argument("--duration", type=float, default=None,
                   help="seconds per case (default 60)")
    p.add_argument("--full", action="store_true",
                   help="5-minute scenario (300 s per case); use --duration "
                        "3600 for the hour-long scenario")
    p.add_argument("--t-th", type=float, default=0.5,
                   help="chunk threshold seconds (default 0.5)")
    p.add_argument("--epsilon", type=float, default=1e-6,
                   help="near-equality window for the chunk trigger "
                        "(default 1e-6)")
    p.add_argument("--seed", type=int, default=0,
                   help="generator seed shared by the cases (default 0)")
    p.add_argument("--jitter", type=float, default=200e-6,
                   help="simulator timestamp jitter stddev (default 200 us)")
    p.add_argument("--out-prefix", default="bench", metavar="PREFIX",
                   help="output file prefix (default: bench)")
    p.add_argument("--no-plots", action="store_true",
                   help="skip histogram/summary figure rendering")
    _add_port(p)

    return parser


def cmd_simulate(args) -> int:
    port = args.port if args.port is not None else _default_port()
    try:
        if args.preset:
            cfg = preset_config(args.preset, srate=args.srate,
                               channel_count=args.channels, daisy=args.daisy,
                               seed=args.seed, jitter_stddev=args.jitter)
        elif args.kind:
            if args.kind in IRREGULAR_KINDS:
                cfg = SimulatorConfig(kind=args.kind, seed=args.seed,
                                      event_rate=args.event_rate)
            else:
                cfg = SimulatorConfig(kind=args.kind,
                                      nominal_srate=args.srate or 250.0,
                                      channel_count=args.channels or 8,
                                      seed=args.seed, jitter_stddev=args.jitter)
        else:
            print("simulate needs --preset or --kind", file=sys.stderr)
            return USAGE_ERROR
        cfg.validate()
    except (InvalidPreset, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    sim = spawn_simulator(cfg, discovery_port=port)
    info = sim.info
    rate = f"{info.nominal_srate:g} Hz" if info.nominal_srate else \
        f"irregular, ~{cfg.event_rate:g} ev/s"
    print(f"{info.stream_type} {info.name} {rate} "
          f"({info.channel_count}ch {info.channel_format}) "
          f"uid={info.uid} tcp={sim.outlet.tcp_port} udp={port}")
    sys.stdout.flush()
    try:
        sim.start(args.duration)
        while not sim.wait(timeout=0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        sim.close()
    report = sim.emission_report()
    print(f"emitted {report['emitted']} samples")
    return 0


def cmd_list(args) -> int:
    port = args.port if args.port is not None else _default_port()
    try:
        query = ResolveQuery.parse(args.resolve)
    except InvalidQuery as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    infos = resolve_streams(query, args.timeout, discovery_port=port)
    if not infos:
        print("no streams found")
        return 0
    print(f"{'name':<18} {'type':<12} {'ch':>3} {'srate':>8} {'format':<9} "
          f"{'endpoint':<21} uid")
    for info in sorted(infos, key=lambda i: (i.stream_type, i.name)):
        host, tcp = info.endpoint if info.endpoint else ("?", 0)
        print(f"{info.name:<18} {info.stream_type:<12} {info.channel_count:>3} "
              f"{info.nominal_srate:>8g} {info.channel_format:<9} "
              f"{host + ':' + str(tcp):<21} {info.uid}")
    return 0


def cmd_record(args) -> int:
    port = args.port if args.port is not None else _default_port()
    try:
        queries = [ResolveQuery.parse(text) for text in args.resolve]
    except InvalidQuery as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    session = record_data(args.out, queries, args.resolve_timeout,
                          t_th=args.t_th, discovery_port=port)
    names = ", ".join(s.inlet.info.name for s in session.streams) or "none"
    print(f"recording {len(session.streams)} stream(s) to {args.out}: {names}")
    sys.stdout.flush()
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    summary = session.stop()
    for stream_id in sorted(summary):
        s = summary[stream_id]
        print(f"[{stream_id}] {s['name']}: {s['sample_count']} samples, "
              f"{s['dropped_count']} dropped, {s['duration']:.3f} s")
    return 0


def cmd_inspect(args) -> int:
    try:
        streams = xdf.load_xdf(args.path)
    except TruncatedChunk as exc:
        print(f"error: {args.path}: {exc}", file=sys.stderr)
        return 1
    except OpenSyncError as exc:
        print(f"error: {args.path}: {exc}", file=sys.stderr)
        return 1
    print(f"file: {args.path}")
    print(f"streams: {len(streams)}")
    status = 0
    for stream in streams:
        info = stream.info
        n = len(stream.samples)
        first = stream.samples[0].timestamp if n else float("nan")
        last = stream.samples[-1].timestamp if n else float("nan")
        print(f"[{stream.stream_id}] name={info.name} type={info.stream_type} "
              f"rate={info.nominal_srate:g} format={info.channel_format} "
              f"channels={info.channel_count} samples={n} "
              f"first={first:.6f} last={last:.6f} "
              f"offsets={len(stream.offsets)}")
        if stream.footer is not None and stream.footer["sample_count"] != n:
            print(f"    footer mismatch: footer says "
                  f"{stream.footer['sample_count']}, file holds {n}",
                  file=sys.stderr)
            status = 1
        if stream.footer is None and n:
            print("    missing stream footer", file=sys.stderr)
            status = 1
    return status


def cmd_bench(args) -> int:
    port = args.port if args.port is not None else _default_port()
    duration = args.duration
    if duration is None:
        duration = 300.0 if args.full else 60.0
    try:
        result = bench_mod.run_benchmark(
            args.cases, duration, args.t_th, args.epsilon, seed=args.seed,
            jitter_stddev=args.jitter, discovery_port=port)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    records_path = f"{args.out_prefix}_records.csv"
    summary_path = f"{args.out_prefix}_summary.csv"
    bench_mod.write_records_csv(records_path, result["records"])
    bench_mod.write_summary_csv(summary_path, result["summaries"])
    print(f"wrote {records_path}")
    print(f"wrote {summary_path}")
    for line in bench_mod.analysis_lines(result["analysis"]):
        print(line)
    if not args.no_plots:
        from . import report
        hist = report.render_lag_histograms(result["records"],
                                            f"{args.out_prefix}_hist.png")
        bars = report.render_rms_bars(result["summaries"],
                                      f"{args.out_prefix}_rms.png")
        print(f"wrote {hist}")
        print(f"wrote {bars}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "list": cmd_list,
    "record": cmd_record,
    "inspect": cmd_inspect,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except OpenSyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
