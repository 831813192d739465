import time
from dataclasses import replace

import pytest

from opensync.clocksync import local_clock
from opensync.errors import (
    ConnectionLost,
    HandshakeRejected,
    InvalidCapacity,
    NoMeasurements,
)
from opensync.protocol import ResolveQuery, StreamInfo
from opensync.simdevices import SimulatorConfig, spawn_simulator
from opensync.streaming import (
    create_inlet,
    create_outlet,
    default_capacity,
    resolve_streams,
)


def make_info(**overrides):
    base = dict(name="TestStream", stream_type="EEG", channel_count=2,
                nominal_srate=250.0, channel_format="float32",
                source_id="dev-1")
    base.update(overrides)
    return StreamInfo(**base)


def pull_n(inlet, n, timeout=5.0):
    out = []
    deadline = local_clock() + timeout
    while len(out) < n and local_clock() < deadline:
        out.extend(inlet.pull_chunk(n - len(out), timeout=0.2))
    return out


def test_outlet_resolvable_on_loopback(udp_port):
    with create_outlet(make_info(), 100, discovery_port=udp_port) as outlet:
        found = resolve_streams(ResolveQuery.of(type="EEG"), timeout=0.6,
                                discovery_port=udp_port)
        assert len(found) == 1
        assert found[0].uid == outlet.info.uid
        assert found[0].endpoint is not None


def test_identical_streams_distinguished_by_uid(udp_port):
    a = create_outlet(make_info(), 100, discovery_port=udp_port)
    b = create_outlet(make_info(), 100, discovery_port=udp_port)
    try:
        found = resolve_streams(ResolveQuery.of(name="TestStream"),
                                timeout=0.8, discovery_port=udp_port)
        assert len(found) == 2
        assert found[0].uid != found[1].uid
    finally:
        a.close()
        b.close()


def test_resolve_filters_and_dedups(udp_port):
    outs = [
        create_outlet(make_info(name="E1"), 100, discovery_port=udp_port),
        create_outlet(make_info(name="E2"), 100, discovery_port=udp_port),
        create_outlet(make_info(name="G1", stream_type="Gaze"), 100,
                      discovery_port=udp_port),
    ]
    try:
        # 0.8 s spans multiple broadcast rounds: answers must de-duplicate.
        found = resolve_streams(ResolveQuery.of(type="EEG"), timeout=0.8,
                                discovery_port=udp_port)
        assert sorted(i.name for i in found) == ["E1", "E2"]
    finally:
        for o in outs:
            o.close()


def test_resolve_no_outlets_returns_empty(udp_port):
    start = local_clock()
    assert resolve_streams(timeout=0.4, discovery_port=udp_port) == []
    assert local_clock() - start >= 0.4


def test_invalid_capacity(udp_port):
    with pytest.raises(InvalidCapacity):
        create_outlet(make_info(), 0, discovery_port=udp_port)
    with pytest.raises(InvalidCapacity):
        create_outlet(make_info(), -5, discovery_port=udp_port)


def test_default_capacity_rule():
    assert default_capacity(make_info(nominal_srate=250.0)) == 75000
    assert default_capacity(make_info(nominal_srate=0.0)) == 1000
    assert default_capacity(make_info(nominal_srate=1.0)) == 1000


def test_push_pull_order_and_timestamps(udp_port):
    with create_outlet(make_info(channel_count=1), 1000,
                       discovery_port=udp_port) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        sent = []
        for i in range(100):
            ts = 5.0 + i * 0.004
            outlet.push_sample((float(i),), ts)
            sent.append(ts)
        got = pull_n(inlet, 100)
        inlet.close()
    assert [s.values[0] for s in got] == [float(i) for i in range(100)]
    assert [s.timestamp for s in got] == sent


def test_push_rejects_bad_values_and_timestamps(udp_port):
    from opensync.errors import FormatMismatch
    with create_outlet(make_info(channel_count=2), 16,
                       discovery_port=udp_port) as outlet:
        with pytest.raises(FormatMismatch):
            outlet.push_sample((1.0,))  # wrong arity
        with pytest.raises(FormatMismatch):
            outlet.push_sample(("a", "b"))  # wrong type for float32
        with pytest.raises(FormatMismatch):
            outlet.push_sample((1.0, 2.0), timestamp=float("nan"))
        with pytest.raises(FormatMismatch):
            outlet.push_sample((1.0, 2.0), timestamp=-1.0)
        assert outlet.pushed_count == 0


def test_push_default_timestamp_in_call_window(udp_port):
    with create_outlet(make_info(channel_count=1), 16,
                       discovery_port=udp_port) as outlet:
        before = local_clock()
        outlet.push_sample((1.0,))
        after = local_clock()
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        got = pull_n(inlet, 1)
        inlet.close()
    assert before <= got[0].timestamp <= after


def test_overflow_drops_oldest(udp_port):
    with create_outlet(make_info(channel_count=1), 1000,
                       discovery_port=udp_port) as outlet:
        for i in range(1500):
            outlet.push_sample((float(i),), 1.0 + i * 1e-4)
        assert outlet.dropped_count == 500
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        got = pull_n(inlet, 1000)
        # nothing further is coming
        assert inlet.pull_chunk(10, timeout=0.1) == []
        inlet.close()
    assert len(got) == 1000
    assert got[0].values[0] == 500.0
    assert got[-1].values[0] == 1499.0


def test_single_consumer_conservation(udp_port):
    with create_outlet(make_info(channel_count=1), 64,
                       discovery_port=udp_port) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        received = []
        for i in range(3000):
            outlet.push_sample((float(i),), float(i))
            if i % 7 == 0:
                received.extend(inlet.pull_chunk(4096, timeout=0.0))
        deadline = local_clock() + 5.0
        while local_clock() < deadline:
            got = inlet.pull_chunk(4096, timeout=0.1)
            if not got and outlet.buffered_count == 0:
                break
            received.extend(got)
        pushed = outlet.pushed_count
        dropped = outlet.dropped_count
        inlet.close()
    assert pushed == 3000
    assert len(received) + dropped == pushed
    values = [s.values[0] for s in received]
    assert values == sorted(values)  # order preserved even across drops


def test_pull_timeout_on_silent_stream(udp_port):
    with create_outlet(make_info(), 16, discovery_port=udp_port) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        start = local_clock()
        assert inlet.pull_chunk(10, timeout=0.1) == []
        elapsed = local_clock() - start
        inlet.close()
    assert 0.08 <= elapsed < 1.0


def test_connection_lost_reported_once(udp_port):
    outlet = create_outlet(make_info(channel_count=1), 16,
                           discovery_port=udp_port)
    inlet = create_inlet(outlet.info, discovery_port=udp_port)
    outlet.push_sample((1.0,), 1.0)
    assert len(pull_n(inlet, 1)) == 1
    outlet.close()
    with pytest.raises(ConnectionLost):
        deadline = local_clock() + 5.0
        while local_clock() < deadline:
            inlet.pull_chunk(10, timeout=0.1)
    assert inlet.pull_chunk(10, timeout=0.05) == []
    assert inlet.pull_chunk(10, timeout=0.05) == []
    inlet.close()


def test_close_flushes_buffered_samples_first(udp_port):
    outlet = create_outlet(make_info(channel_count=1), 500,
                           discovery_port=udp_port)
    inlet = create_inlet(outlet.info, discovery_port=udp_port)
    for i in range(200):
        outlet.push_sample((float(i),), float(i))
    outlet.close()  # must hand the 200 samples over before the FIN
    got = []
    with pytest.raises(ConnectionLost):
        deadline = local_clock() + 5.0
        while local_clock() < deadline:
            got.extend(inlet.pull_chunk(4096, timeout=0.1))
    inlet.close()
    assert len(got) == 200


def test_handshake_rejected_for_unknown_uid(udp_port):
    with create_outlet(make_info(), 16, discovery_port=udp_port) as outlet:
        bogus = replace(outlet.info, uid="00" * 16)
        with pytest.raises(HandshakeRejected):
            create_inlet(bogus, discovery_port=udp_port)


def test_time_correction_loopback_small(udp_port):
    with create_outlet(make_info(), 16, discovery_port=udp_port) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        with pytest.raises(NoMeasurements):
            inlet.time_correction()
        for _ in range(5):
            inlet.measure_clock_once()
        correction = inlet.time_correction()
        inlet.close()
    # same host, same clock: loopback rtt keeps the estimate under 1 ms
    assert abs(correction) <= 1e-3


def test_time_correction_sign_for_shifted_producer(udp_port):
    shifted = lambda: local_clock() + 5.0
    with create_outlet(make_info(), 16, discovery_port=udp_port,
                       clock=shifted) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        for _ in range(5):
            inlet.measure_clock_once()
        correction = inlet.time_correction()
        inlet.close()
    # producer clock runs 5 s ahead: add -5 s to its stamps to land on ours
    assert correction == pytest.approx(-5.0, abs=1e-3)


def test_background_clock_sync_collects_history(udp_port):
    with create_outlet(make_info(), 16, discovery_port=udp_port) as outlet:
        inlet = create_inlet(outlet.info, discovery_port=udp_port)
        inlet.start_clock_sync(interval=0.2, burst=3)
        deadline = local_clock() + 3.0
        while local_clock() < deadline and len(inlet.clock_history()) < 3:
            time.sleep(0.05)
        history = inlet.clock_history()
        inlet.close()
    assert len(history) >= 3
    assert all(m.rtt >= 0 for m in history)


@pytest.mark.slow
def test_liveness_one_khz_for_sixty_seconds(udp_port):
    # Sustained 1 kHz stream with an attached consumer: no drops, bounded
    # buffer occupancy, every sample delivered.
    cfg = SimulatorConfig(kind="EEG", nominal_srate=1000.0, channel_count=4,
                          seed=8)
    occupancy_peak = 0
    received = 0
    with spawn_simulator(cfg, discovery_port=udp_port) as sim:
        inlet = create_inlet(sim.info, discovery_port=udp_port)
        sim.start(60.0)
        while True:
            got = inlet.pull_chunk(4096, timeout=0.05)
            received += len(got)
            occupancy_peak = max(occupancy_peak, sim.outlet.buffered_count)
            if sim.wait(timeout=0.0) and not got:
                break
        report = sim.emission_report()
        sim.close()
        try:
            while True:
                got = inlet.pull_chunk(4096, timeout=0.1)
                if not got:
                    break
                received += len(got)
        except ConnectionLost:
            pass
        inlet.close()
    assert report["emitted"] == 60000
    assert sim.outlet.dropped_count == 0
    assert received == 60000
    assert occupancy_peak < sim.outlet.capacity
