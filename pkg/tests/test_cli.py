import re
import threading
import time

import pytest

from opensync.cli import main
from opensync.protocol import ResolveQuery
from opensync.simdevices import preset_config, spawn_simulator
from opensync.xdf import encode_chunk


def run_cli(args):
    return main(list(args))


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli(["--help"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    for sub in ("simulate", "list", "record", "inspect", "bench"):
        assert sub in out


def test_subcommand_help_shows_defaults(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli(["bench", "--help"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--cases", "--duration", "--full", "--seed", "--jitter",
                 "--out-prefix", "--no-plots", "--port", "--t-th", "--epsilon"):
        assert flag in out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli(["list", "--frequency", "9"])
    assert err.value.code == 2


def test_simulate_rejects_bad_liveamp_rate(capsys):
    code = run_cli(["simulate", "--preset", "liveamp", "--srate", "300"])
    assert code == 2
    err = capsys.readouterr().err
    assert "250" in err and "500" in err and "1000" in err


def test_simulate_requires_preset_or_kind(capsys):
    assert run_cli(["simulate"]) == 2


def test_simulate_runs_marker_stream(capsys, udp_port):
    code = run_cli(["simulate", "--kind", "Marker", "--event-rate", "20",
                    "--duration", "0.6", "--seed", "3",
                    "--port", str(udp_port)])
    assert code == 0
    out = capsys.readouterr().out
    assert "Markers" in out
    assert re.search(r"emitted \d+ samples", out)


def test_simulate_preset_prints_identity(capsys, udp_port):
    code = run_cli(["simulate", "--preset", "unicorn", "--seed", "7",
                    "--duration", "0.3", "--port", str(udp_port)])
    assert code == 0
    out = capsys.readouterr().out
    assert "EEG SimUnicorn 250 Hz" in out


def test_list_empty(capsys, udp_port):
    assert run_cli(["list", "--timeout", "0.3", "--port", str(udp_port)]) == 0
    assert "no streams found" in capsys.readouterr().out


def test_list_shows_live_stream(capsys, udp_port):
    with spawn_simulator(preset_config("unicorn", seed=1),
                         discovery_port=udp_port):
        code = run_cli(["list", "--timeout", "0.6", "--port", str(udp_port)])
    assert code == 0
    out = capsys.readouterr().out
    assert "SimUnicorn" in out
    assert "EEG" in out


def test_record_then_inspect_consistent(capsys, tmp_path, udp_port):
    path = tmp_path / "cli.xdf"
    sim = spawn_simulator(preset_config("unicorn", seed=2),
                          discovery_port=udp_port)
    try:
        sim.start(1.2)
        code = run_cli(["record", "--out", str(path), "--resolve", "type=EEG",
                        "--duration", "1.8", "--resolve-timeout", "0.6",
                        "--port", str(udp_port)])
    finally:
        sim.close()
    assert code == 0
    record_out = capsys.readouterr().out
    match = re.search(r"\[1\] SimUnicorn: (\d+) samples, 0 dropped", record_out)
    assert match
    recorded = int(match.group(1))
    assert recorded == 300  # 1.2 s at 250 Hz, schedule-exact

    assert run_cli(["inspect", str(path)]) == 0
    inspect_out = capsys.readouterr().out
    assert f"samples={recorded}" in inspect_out
    assert "name=SimUnicorn" in inspect_out


def test_record_unwritable_path(capsys, tmp_path, udp_port):
    code = run_cli(["record", "--out", str(tmp_path / "nope" / "x.xdf"),
                    "--port", str(udp_port)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_inspect_truncated_file(capsys, tmp_path):
    path = tmp_path / "broken.xdf"
    good = b"XDF:" + encode_chunk(1, b"<info><version>1.0</version>"
                                     b"<datetime>x</datetime></info>")
    path.write_bytes(good + encode_chunk(5, b"\x00" * 16)[:4])
    code = run_cli(["inspect", str(path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "byte" in err


def test_inspect_missing_file(capsys, tmp_path):
    assert run_cli(["inspect", str(tmp_path / "absent.xdf")]) == 1


def test_bench_writes_csvs_analysis_and_figures(capsys, tmp_path, udp_port):
    prefix = str(tmp_path / "out")
    code = run_cli(["bench", "--cases", "2", "--duration", "3",
                    "--seed", "5", "--jitter", "0", "--out-prefix", prefix,
                    "--port", str(udp_port)])
    assert code == 0
    out = capsys.readouterr().out
    assert re.search(r"ANOVA F=[\d.]+, df=\(1, 10\), p=[\d.]+", out)
    assert re.search(r"Levene F=[\d.]+, df=\(1, 10\), p=[\d.]+", out)
    records = (tmp_path / "out_records.csv").read_text().splitlines()
    assert len(records) == 1 + 2 * 6  # header + 6 chunks per case
    summary = (tmp_path / "out_summary.csv").read_text().splitlines()
    assert len(summary) == 3
    assert (tmp_path / "out_hist.png").stat().st_size > 0
    assert (tmp_path / "out_rms.png").stat().st_size > 0


def test_bench_no_plots(capsys, tmp_path, udp_port):
    prefix = str(tmp_path / "np")
    code = run_cli(["bench", "--cases", "1", "--duration", "2",
                    "--jitter", "0", "--out-prefix", prefix, "--no-plots",
                    "--port", str(udp_port)])
    assert code == 0
    assert not (tmp_path / "np_hist.png").exists()
    assert (tmp_path / "np_records.csv").exists()


def test_env_port_override(capsys, udp_port, monkeypatch):
    monkeypatch.setenv("OPENSYNC_PORT", str(udp_port))
    with spawn_simulator(preset_config("gazepoint", seed=4),
                         discovery_port=udp_port):
        code = run_cli(["list", "--timeout", "0.6"])
    assert code == 0
    assert "SimGazepoint" in capsys.readouterr().out
